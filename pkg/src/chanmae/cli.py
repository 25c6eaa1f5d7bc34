"""Experiment driver: dataset generation, pretraining, task training,
evaluation, zero-shot transfer and scaling sweeps, all from config files.

Exit codes: 0 success, 1 validation error, 2 I/O or file-format error,
3 numeric failure (non-finite loss).
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .channel import scenario
from .checkpoint import load_checkpoint
from .dataset import DatasetHeader, generate_dataset, load_dataset, sample_seed, samples_to_arrays
from .errors import (
    CheckpointFormatError,
    ConfigError,
    ContractError,
    DatasetFormatError,
    NumericError,
    ReportParseError,
    ShapeError,
)
from .estimators import (
    TASK_POSITIONING,
    ChannelExtrapolator,
    ChannelFeedbackAutoencoder,
    ChannelMaskedAutoencoder,
    CsiPositioner,
    zero_shot_eval,
)
from .metrics import comparison_table, write_report
from .network import ModelConfig
from .runconfig import RunConfig, load_config

_SEED_KEYS = {"gen": "gen.seed", "pretrain": "pretrain.seed", "train": "task.seed", "sweep": "sweep.seed"}
_OUT_KEYS = {
    "gen": "gen.out_dir",
    "pretrain": "pretrain.out_dir",
    "train": "task.out_dir",
    "eval": "eval.out_dir",
    "zeroshot": "zeroshot.out_dir",
    "sweep": "sweep.out_dir",
}


def _parse_combo(combo: str) -> tuple[str, float]:
    name, sep, carrier = combo.partition("-")
    if not sep:
        raise ConfigError(f"scenario combo {combo!r} must look like 'RMa-2.4'", ["gen.scenarios"])
    try:
        return name.strip(), float(carrier)
    except ValueError as e:
        raise ConfigError(f"bad carrier in combo {combo!r}", ["gen.scenarios"]) from e


def _scenario_from_config(cfg: RunConfig, name: str, carrier: float):
    overrides = {
        "num_subcarriers": cfg.get("gen.num_subcarriers"),
        "bs_array": (cfg.get("gen.bs_rows"), cfg.get("gen.bs_cols")),
        "subcarrier_spacing": cfg.get("gen.subcarrier_spacing"),
    }
    for key, field in (
        ("gen.cell_radius", "cell_radius"),
        ("gen.num_nlos_paths", "num_nlos_paths"),
        ("gen.los_probability", "los_probability"),
        ("gen.sector_deg", "sector_deg"),
    ):
        value = cfg.get_or(key, None)
        if value is not None:
            overrides[field] = value
    ds_ns = cfg.get_or("gen.delay_spread_ns", None)
    if ds_ns is not None:
        overrides["delay_spread"] = ds_ns * 1e-9
    return scenario(name, carrier, **overrides)


def _write_meta(artifact_path: Path, cfg: RunConfig, command: str, seed: int) -> None:
    meta = {"command": command, "config_hash": cfg.config_hash(), "seed": seed}
    sidecar = Path(str(artifact_path) + ".meta.json")
    sidecar.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _out_dir(cfg: RunConfig, key: str) -> Path:
    out = Path(cfg.get(key))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_many(paths_value: str) -> tuple[list[DatasetHeader], dict[str, np.ndarray]]:
    paths = [p.strip() for p in paths_value.split(",") if p.strip()]
    if not paths:
        raise ConfigError("no dataset paths given", ["data"])
    headers, parts = [], []
    for path in paths:
        header, samples = load_dataset(path)
        if samples:
            parts.append(samples_to_arrays(samples))
        headers.append(header)
    dims = {(h.num_antennas, h.num_subcarriers) for h in headers}
    if len(dims) > 1:
        raise ConfigError(f"datasets disagree on dimensions: {sorted(dims)}", ["data"])
    if not parts:
        data = {"planes": np.zeros((0, 2, headers[0].num_antennas, headers[0].num_subcarriers)),
                "positions": np.zeros((0, 2)), "los": np.zeros(0, dtype=bool)}
    else:
        data = {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}
    return headers, data


def _scenario_label(headers: list[DatasetHeader]) -> str:
    return "+".join(dict.fromkeys(h.scenario for h in headers))


def _model_config_from(cfg: RunConfig, a: int, k: int) -> ModelConfig:
    config = ModelConfig(
        a=a,
        k=k,
        patch_rows=cfg.get("model.patch_rows"),
        patch_cols=cfg.get("model.patch_cols"),
        embed_dim=cfg.get("model.embed_dim"),
        encoder_depth=cfg.get("model.encoder_depth"),
        encoder_heads=cfg.get("model.encoder_heads"),
        decoder_dim=cfg.get("model.decoder_dim"),
        decoder_depth=cfg.get("model.decoder_depth"),
        decoder_heads=cfg.get("model.decoder_heads"),
        mlp_ratio=cfg.get("model.mlp_ratio"),
        mask_ratio=cfg.get("model.mask_ratio"),
    )
    config.validate()
    return config


def cmd_gen(cfg: RunConfig) -> int:
    combos = [c.strip() for c in cfg.get("gen.scenarios").split(",") if c.strip()]
    if not combos:
        raise ConfigError("gen.scenarios lists no combinations", ["gen.scenarios"])
    out = _out_dir(cfg, "gen.out_dir")
    seed = cfg.get("gen.seed")
    count = cfg.get("gen.count")
    val_count = cfg.get("gen.val_count")
    workers = cfg.get("gen.workers")
    for combo in combos:
        name, carrier = _parse_combo(combo)
        params = _scenario_from_config(cfg, name, carrier)
        path = out / f"{params.descriptor}.csid"
        generate_dataset(params, seed, count, path, workers=workers)
        _write_meta(path, cfg, "gen", seed)
        print(f"wrote {path} ({count} samples)")
        if val_count:
            val_path = out / f"{params.descriptor}.val.csid"
            generate_dataset(params, seed + 1, val_count, val_path, workers=workers)
            _write_meta(val_path, cfg, "gen", seed + 1)
            print(f"wrote {val_path} ({val_count} samples)")
    return 0


def _pretrainer_from(cfg: RunConfig, seed: int) -> ChannelMaskedAutoencoder:
    return ChannelMaskedAutoencoder(
        patch_rows=cfg.get("model.patch_rows"),
        patch_cols=cfg.get("model.patch_cols"),
        embed_dim=cfg.get("model.embed_dim"),
        encoder_depth=cfg.get("model.encoder_depth"),
        encoder_heads=cfg.get("model.encoder_heads"),
        decoder_dim=cfg.get("model.decoder_dim"),
        decoder_depth=cfg.get("model.decoder_depth"),
        decoder_heads=cfg.get("model.decoder_heads"),
        mlp_ratio=cfg.get("model.mlp_ratio"),
        mask_ratio=cfg.get("model.mask_ratio"),
        steps=cfg.get("pretrain.steps"),
        batch_size=cfg.get("pretrain.batch_size"),
        lr=cfg.get("optim.lr"),
        warmup=cfg.get("optim.warmup"),
        beta1=cfg.get("optim.beta1"),
        beta2=cfg.get("optim.beta2"),
        eps=cfg.get("optim.eps"),
        eval_fraction=cfg.get("pretrain.eval_fraction"),
        eval_interval=cfg.get("pretrain.eval_interval"),
        seed=seed,
    )


def cmd_pretrain(cfg: RunConfig) -> int:
    headers, data = _load_many(cfg.get("pretrain.data"))
    seed = cfg.get("pretrain.seed")
    est = _pretrainer_from(cfg, seed)
    est.fit(data["planes"])
    out = _out_dir(cfg, "pretrain.out_dir")
    ckpt = out / "pretrain.csim"
    est.save(
        ckpt,
        extra_meta={"config_hash": cfg.config_hash(), "source": _scenario_label(headers)},
    )
    history_path = out / "pretrain_history.json"
    history_path.write_text(json.dumps(est.history_.to_dict(), indent=2) + "\n", encoding="utf-8")
    h = est.history_
    if h.eval_metrics:
        print(
            f"pretrained {len(h.losses)} steps; held-out masked NMSE "
            f"{h.eval_metrics[0]:.2f} dB -> {h.eval_metrics[-1]:.2f} dB"
        )
    print(f"wrote {ckpt}")
    return 0


def _task_estimator(cfg: RunConfig, kind: str, regime: str, pretrained, config, seed: int):
    common = dict(
        regime=regime,
        pretrained=pretrained,
        config=config,
        steps=cfg.get("task.steps"),
        batch_size=cfg.get("task.batch_size"),
        lr=cfg.get("optim.lr"),
        warmup=cfg.get("optim.warmup"),
        seed=seed,
    )
    if kind == "extrapolation_antenna":
        return ChannelExtrapolator(domain="antenna", pattern=cfg.get_or("task.pattern", None), **common)
    if kind == "extrapolation_subcarrier":
        return ChannelExtrapolator(domain="subcarrier", pattern=cfg.get_or("task.pattern", None), **common)
    if kind == "feedback":
        return ChannelFeedbackAutoencoder(code_dim=cfg.get("task.code_dim"), **common)
    return CsiPositioner(head_lr=cfg.get("optim.head_lr"), **common)


def cmd_train(cfg: RunConfig) -> int:
    kind = cfg.get("task.kind")
    regime = cfg.get("task.regime")
    seed = cfg.get("task.seed")
    headers, data = _load_many(cfg.get("task.data"))
    pretrained = cfg.get_or("task.pretrained", None)
    config = None
    if regime == "supervised":
        config = _model_config_from(cfg, headers[0].num_antennas, headers[0].num_subcarriers)
    est = _task_estimator(cfg, kind, regime, pretrained, config, seed)
    if kind == TASK_POSITIONING:
        est.fit(data["planes"], data["positions"])
    else:
        est.fit(data["planes"])

    out = _out_dir(cfg, "task.out_dir")
    source = _scenario_label(headers)
    seeds = {"fit": seed, "train_data": headers[0].global_seed}
    ckpt = out / f"{kind}_{regime}.csim"
    est.save(ckpt, extra_meta={"config_hash": cfg.config_hash(), "source": source, "seeds": seeds})
    (out / f"{kind}_{regime}_history.json").write_text(
        json.dumps(est.history_.to_dict(), indent=2) + "\n", encoding="utf-8"
    )
    print(f"wrote {ckpt}")

    val_value = cfg.get_or("task.val_data", None)
    if val_value:
        val_headers, val_data = _load_many(val_value)
        y = val_data["positions"] if kind == TASK_POSITIONING else None
        report = est.evaluate(
            val_data["planes"],
            y,
            source=source,
            target=_scenario_label(val_headers),
            seeds={**seeds, "val_data": val_headers[0].global_seed},
            config_hash=cfg.config_hash(),
        )
        report.frozen_encoder_unchanged = est.frozen_encoder_unchanged_
        report_path = out / f"{kind}_{regime}_report.json"
        write_report(report, report_path)
        if report.nmse_db is not None:
            print(f"validation NMSE {report.nmse_db:.2f} dB -> {report_path}")
        else:
            print(f"validation RMSE {report.positioning['rmse_m']:.2f} m -> {report_path}")
    return 0


_TASK_CLASSES = {
    "extrapolation_antenna": ChannelExtrapolator,
    "extrapolation_subcarrier": ChannelExtrapolator,
    "feedback": ChannelFeedbackAutoencoder,
    "positioning": CsiPositioner,
}


def _load_task_checkpoint(path):
    _, _, meta = load_checkpoint(path)
    if meta.get("kind") != "task":
        raise ConfigError(f"{path} is not a task checkpoint", ["checkpoint"])
    kind = meta.get("task")
    if kind not in _TASK_CLASSES:
        raise CheckpointFormatError(f"{path}: unknown task {kind!r}")
    return _TASK_CLASSES[kind].load(path), kind, meta


def _evaluate_on(est, kind: str, header_label: str, data, meta, cfg: RunConfig, zero_shot: bool):
    y = data["positions"] if kind == TASK_POSITIONING else None
    kwargs = dict(
        source=meta.get("source", ""),
        target=header_label,
        seeds=meta.get("seeds", {}),
        config_hash=cfg.config_hash(),
    )
    if zero_shot:
        return zero_shot_eval(est, data["planes"], y, **kwargs)
    return est.evaluate(data["planes"], y, **kwargs)


def cmd_eval(cfg: RunConfig) -> int:
    est, kind, meta = _load_task_checkpoint(cfg.get("eval.checkpoint"))
    headers, data = _load_many(cfg.get("eval.data"))
    report = _evaluate_on(est, kind, _scenario_label(headers), data, meta, cfg, zero_shot=False)
    out = _out_dir(cfg, "eval.out_dir")
    path = out / f"eval_{kind}_{report.scenario_target}.json"
    write_report(report, path)
    print(f"wrote {path}")
    return 0


def cmd_zeroshot(cfg: RunConfig) -> int:
    ckpt_path = Path(cfg.get("zeroshot.checkpoint"))
    before = ckpt_path.read_bytes()
    est, kind, meta = _load_task_checkpoint(ckpt_path)
    out = _out_dir(cfg, "zeroshot.out_dir")
    reports = []
    for target in [t.strip() for t in cfg.get("zeroshot.targets").split(",") if t.strip()]:
        headers, data = _load_many(target)
        report = _evaluate_on(est, kind, _scenario_label(headers), data, meta, cfg, zero_shot=True)
        path = out / f"zeroshot_{kind}_{report.scenario_target}.json"
        write_report(report, path)
        reports.append(report)
        print(f"wrote {path}")
    if ckpt_path.read_bytes() != before:
        raise ContractError("zero-shot run modified the checkpoint file")
    print(comparison_table(reports))
    return 0


def _parse_model_spec(spec: str) -> tuple[int, int]:
    try:
        dim, depth = spec.lower().split("x")
        return int(dim), int(depth)
    except ValueError as e:
        raise ConfigError(f"model spec {spec!r} must look like '64x4'", ["sweep.models"]) from e


def cmd_sweep(cfg: RunConfig) -> int:
    sizes = [int(s) for s in cfg.get("sweep.data_sizes").split(",")]
    specs = [s.strip() for s in cfg.get("sweep.models").split(",") if s.strip()]
    kind = cfg.get("sweep.task")
    headers, data = _load_many(cfg.get("sweep.data"))
    val_headers, val_data = _load_many(cfg.get("sweep.val_data"))
    seed = cfg.get("sweep.seed")
    out = _out_dir(cfg, "sweep.out_dir")

    point_dirs = [out / f"data{size}_model{spec}" for size in sizes for spec in specs]
    if len(set(point_dirs)) != len(point_dirs):
        raise ConfigError("sweep points map to overlapping output paths", ["sweep.data_sizes"])

    rows = []
    index = 0
    for size in sizes:
        if size > data["planes"].shape[0]:
            raise ConfigError(
                f"sweep size {size} exceeds dataset of {data['planes'].shape[0]}", ["sweep.data_sizes"]
            )
        for spec in specs:
            dim, depth = _parse_model_spec(spec)
            point_seed = sample_seed(seed, index)
            point_dir = out / f"data{size}_model{spec}"
            point_dir.mkdir(parents=True, exist_ok=True)
            subset = data["planes"][:size]

            pre = _pretrainer_from(cfg, point_seed % 2**32)
            pre.set_params(
                embed_dim=dim,
                encoder_depth=depth,
                steps=cfg.get("sweep.pretrain_steps"),
                batch_size=cfg.get("sweep.batch_size"),
            )
            pre.fit(subset)
            pre.save(point_dir / "pretrain.csim", extra_meta={"config_hash": cfg.config_hash()})

            probe = _task_estimator(cfg, kind, "frozen", pre, None, point_seed % 2**32)
            probe.set_params(
                steps=cfg.get("sweep.probe_steps"), batch_size=cfg.get("sweep.batch_size")
            )
            if kind == TASK_POSITIONING:
                probe.fit(subset, data["positions"][:size])
                y_val = val_data["positions"]
            else:
                probe.fit(subset)
                y_val = None
            probe.save(point_dir / "task.csim", extra_meta={"config_hash": cfg.config_hash()})
            report = probe.evaluate(
                val_data["planes"],
                y_val,
                source=_scenario_label(headers),
                target=_scenario_label(val_headers),
                seeds={"fit": point_seed % 2**32, "sweep": seed},
                config_hash=cfg.config_hash(),
            )
            write_report(report, point_dir / "report.json")
            rows.append({
                "data_size": size,
                "model": spec,
                "nmse_linear": report.nmse_linear,
                "nmse_db": report.nmse_db,
            })
            print(f"point data={size} model={spec}: {report.nmse_db:.2f} dB")
            index += 1

    # Improvement percentages on linear NMSE, per the reporting convention.
    def delta_pct(base: float, other: float) -> float:
        return 100.0 * (base - other) / base

    by_model = {spec: [r for r in rows if r["model"] == spec] for spec in specs}
    by_size = {size: [r for r in rows if r["data_size"] == size] for size in sizes}
    data_deltas = {
        spec: [
            {
                "from_size": pts[0]["data_size"],
                "to_size": p["data_size"],
                "delta_pct": delta_pct(pts[0]["nmse_linear"], p["nmse_linear"]),
            }
            for p in pts[1:]
        ]
        for spec, pts in by_model.items()
    }
    model_deltas = {
        str(size): [
            {
                "from_model": pts[0]["model"],
                "to_model": p["model"],
                "delta_pct": delta_pct(pts[0]["nmse_linear"], p["nmse_linear"]),
            }
            for p in pts[1:]
        ]
        for size, pts in by_size.items()
    }
    summary = {
        "rows": rows,
        "data_scaling_delta_pct": data_deltas,
        "model_scaling_delta_pct": model_deltas,
        "config_hash": cfg.config_hash(),
        "seed": seed,
    }
    summary_path = out / "sweep_summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    print(f"{'data':>8} {'model':>10} {'nmse_db':>10} {'nmse_linear':>14}")
    for r in rows:
        print(f"{r['data_size']:>8} {r['model']:>10} {r['nmse_db']:>10.2f} {r['nmse_linear']:>14.6g}")
    for spec, deltas in data_deltas.items():
        for d in deltas:
            print(
                f"model {spec}: data {d['from_size']} -> {d['to_size']}: "
                f"{d['delta_pct']:+.1f}% (linear NMSE)"
            )
    for size, deltas in model_deltas.items():
        for d in deltas:
            print(
                f"data {size}: model {d['from_model']} -> {d['to_model']}: "
                f"{d['delta_pct']:+.1f}% (linear NMSE)"
            )
    print(f"wrote {summary_path}")
    return 0


_COMMANDS = {
    "gen": cmd_gen,
    "pretrain": cmd_pretrain,
    "train": cmd_train,
    "eval": cmd_eval,
    "zeroshot": cmd_zeroshot,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="chanmae", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to a key=value config file")
        p.add_argument("--seed", type=int, default=None, help="override the command's seed")
        p.add_argument("--out", default=None, help="override the command's output directory")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None and args.command in _SEED_KEYS:
            cfg.set(_SEED_KEYS[args.command], args.seed)
        if args.out is not None:
            cfg.set(_OUT_KEYS[args.command], args.out)
        return _COMMANDS[args.command](cfg)
    except (ConfigError, ContractError, ShapeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except NumericError as e:
        print(f"numeric failure: {e}", file=sys.stderr)
        return 3
    except (DatasetFormatError, CheckpointFormatError, ReportParseError, OSError) as e:
        print(f"i/o error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
