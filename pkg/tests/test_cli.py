import json

import numpy as np
import pytest

from chanmae.checkpoint import load_checkpoint
from chanmae.cli import main
from chanmae.metrics import read_report

TINY_MODEL = """
model.patch_rows = 2
model.patch_cols = 4
model.embed_dim = 8
model.encoder_depth = 1
model.encoder_heads = 2
model.decoder_dim = 8
model.decoder_depth = 1
model.decoder_heads = 2
model.mlp_ratio = 2.0
"""

TINY_GEN = """
gen.scenarios = RMa-2.4, RMa-3.5
gen.count = 24
gen.val_count = 8
gen.seed = 7
gen.num_subcarriers = 16
gen.bs_rows = 2
gen.bs_cols = 2
gen.cell_radius = 80
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliws")
    gen_cfg = root / "gen.cfg"
    gen_cfg.write_text(TINY_GEN + f"gen.out_dir = {root}/data\n")
    assert main(["gen", "--config", str(gen_cfg)]) == 0

    pre_cfg = root / "pre.cfg"
    pre_cfg.write_text(
        TINY_MODEL
        + f"pretrain.data = {root}/data/RMa-2.4.csid\n"
        + "pretrain.steps = 4\npretrain.batch_size = 8\npretrain.eval_interval = 2\n"
        + f"pretrain.out_dir = {root}/pre\n"
    )
    assert main(["pretrain", "--config", str(pre_cfg)]) == 0
    return root


class TestGen:
    def test_datasets_written_with_meta(self, workspace):
        for combo in ("RMa-2.4", "RMa-3.5"):
            assert (workspace / "data" / f"{combo}.csid").exists()
            assert (workspace / "data" / f"{combo}.val.csid").exists()
            meta = json.loads((workspace / "data" / f"{combo}.csid.meta.json").read_text())
            assert meta["command"] == "gen" and meta["seed"] == 7

    def test_gen_idempotent(self, workspace, tmp_path):
        cfg = tmp_path / "gen.cfg"
        cfg.write_text(TINY_GEN + f"gen.out_dir = {tmp_path}/d1\n")
        assert main(["gen", "--config", str(cfg)]) == 0
        first = (tmp_path / "d1" / "RMa-2.4.csid").read_bytes()
        assert main(["gen", "--config", str(cfg)]) == 0
        assert (tmp_path / "d1" / "RMa-2.4.csid").read_bytes() == first
        assert first == (workspace / "data" / "RMa-2.4.csid").read_bytes()

    def test_seed_override_changes_output(self, workspace, tmp_path):
        cfg = tmp_path / "gen.cfg"
        cfg.write_text(TINY_GEN + f"gen.out_dir = {tmp_path}/d2\n")
        assert main(["gen", "--config", str(cfg), "--seed", "8"]) == 0
        assert (tmp_path / "d2" / "RMa-2.4.csid").read_bytes() != (
            workspace / "data" / "RMa-2.4.csid"
        ).read_bytes()

    def test_zero_count_gives_valid_empty_dataset(self, tmp_path):
        cfg = tmp_path / "gen.cfg"
        cfg.write_text(
            "gen.scenarios = UMi-5\ngen.count = 0\ngen.num_subcarriers = 16\n"
            "gen.bs_rows = 2\ngen.bs_cols = 2\n"
            f"gen.out_dir = {tmp_path}/d\n"
        )
        assert main(["gen", "--config", str(cfg)]) == 0
        from chanmae.dataset import load_dataset

        header, samples = load_dataset(tmp_path / "d" / "UMi-5.csid")
        assert header.count == 0 and samples == []


class TestPretrain:
    def test_outputs(self, workspace):
        assert (workspace / "pre" / "pretrain.csim").exists()
        history = json.loads((workspace / "pre" / "pretrain_history.json").read_text())
        assert len(history["losses"]) == 4
        assert history["eval_steps"][0] == 0

    def test_zero_budget_checkpoint_equals_init(self, workspace, tmp_path):
        cfg = tmp_path / "pre.cfg"
        cfg.write_text(
            TINY_MODEL
            + f"pretrain.data = {workspace}/data/RMa-2.4.csid\n"
            + "pretrain.steps = 0\npretrain.batch_size = 8\n"
            + f"pretrain.out_dir = {tmp_path}/pre0\n"
        )
        assert main(["pretrain", "--config", str(cfg)]) == 0
        from chanmae.dataset import load_dataset, samples_to_arrays
        from chanmae.estimators import ChannelMaskedAutoencoder
        from chanmae.network import init_model_params

        _, arrays, _ = load_checkpoint(tmp_path / "pre0" / "pretrain.csim")
        est = ChannelMaskedAutoencoder.load(tmp_path / "pre0" / "pretrain.csim")
        fresh = init_model_params(est.config_, np.random.default_rng(0))
        for name in fresh.names():
            assert np.array_equal(arrays[name], fresh[name].data)

    def test_missing_dataset_is_io_error(self, tmp_path):
        cfg = tmp_path / "pre.cfg"
        cfg.write_text(TINY_MODEL + "pretrain.data = nowhere.csid\npretrain.steps = 1\n")
        assert main(["pretrain", "--config", str(cfg)]) == 2


class TestTrain:
    def test_frozen_run_writes_report_with_checksum_flag(self, workspace):
        cfg = workspace / "train_frozen.cfg"
        cfg.write_text(
            "task.kind = extrapolation_antenna\ntask.regime = frozen\n"
            f"task.pretrained = {workspace}/pre/pretrain.csim\n"
            f"task.data = {workspace}/data/RMa-2.4.csid\n"
            f"task.val_data = {workspace}/data/RMa-2.4.val.csid\n"
            "task.steps = 3\ntask.batch_size = 8\n"
            f"task.out_dir = {workspace}/frozen\n"
        )
        assert main(["train", "--config", str(cfg)]) == 0
        report = read_report(workspace / "frozen" / "extrapolation_antenna_frozen_report.json")
        assert report.frozen_encoder_unchanged is True
        assert report.regime == "frozen"
        assert np.isfinite(report.nmse_db)

    def test_supervised_with_pretrained_is_validation_error(self, workspace, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text(
            "task.kind = feedback\ntask.regime = supervised\n"
            f"task.pretrained = {workspace}/pre/pretrain.csim\n"
            f"task.data = {workspace}/data/RMa-2.4.csid\n"
            "task.steps = 1\n"
        )
        assert main(["train", "--config", str(cfg)]) == 1

    def test_positioning_supervised(self, workspace):
        cfg = workspace / "train_pos.cfg"
        cfg.write_text(
            TINY_MODEL
            + "task.kind = positioning\ntask.regime = supervised\n"
            + f"task.data = {workspace}/data/RMa-2.4.csid\n"
            + f"task.val_data = {workspace}/data/RMa-2.4.val.csid\n"
            + "task.steps = 3\ntask.batch_size = 8\n"
            + f"task.out_dir = {workspace}/pos\n"
        )
        assert main(["train", "--config", str(cfg)]) == 0
        report = read_report(workspace / "pos" / "positioning_supervised_report.json")
        assert report.positioning is not None
        assert report.nmse_db is None


class TestEvalAndZeroshot:
    def test_eval_matches_train_validation_metric(self, workspace):
        cfg = workspace / "eval.cfg"
        cfg.write_text(
            f"eval.checkpoint = {workspace}/frozen/extrapolation_antenna_frozen.csim\n"
            f"eval.data = {workspace}/data/RMa-2.4.val.csid\n"
            f"eval.out_dir = {workspace}/eval\n"
        )
        assert main(["eval", "--config", str(cfg)]) == 0
        train_report = read_report(workspace / "frozen" / "extrapolation_antenna_frozen_report.json")
        eval_report = read_report(workspace / "eval" / "eval_extrapolation_antenna_RMa-2.4.json")
        assert eval_report.nmse_linear == train_report.nmse_linear

    def test_zeroshot_reports_and_checkpoint_untouched(self, workspace):
        ckpt = workspace / "frozen" / "extrapolation_antenna_frozen.csim"
        before = ckpt.read_bytes()
        cfg = workspace / "zs.cfg"
        cfg.write_text(
            f"zeroshot.checkpoint = {ckpt}\n"
            f"zeroshot.targets = {workspace}/data/RMa-2.4.val.csid, {workspace}/data/RMa-3.5.val.csid\n"
            f"zeroshot.out_dir = {workspace}/zs\n"
        )
        assert main(["zeroshot", "--config", str(cfg)]) == 0
        assert ckpt.read_bytes() == before
        for target in ("RMa-2.4", "RMa-3.5"):
            report = read_report(workspace / "zs" / f"zeroshot_extrapolation_antenna_{target}.json")
            assert np.isfinite(report.nmse_db)
            assert report.scenario_target == target

    def test_zeroshot_dim_mismatch_is_error(self, workspace, tmp_path):
        gen_cfg = tmp_path / "gen.cfg"
        gen_cfg.write_text(
            "gen.scenarios = UMi-5\ngen.count = 4\ngen.num_subcarriers = 32\n"
            "gen.bs_rows = 2\ngen.bs_cols = 2\n"
            f"gen.out_dir = {tmp_path}/d\n"
        )
        assert main(["gen", "--config", str(gen_cfg)]) == 0
        cfg = tmp_path / "zs.cfg"
        cfg.write_text(
            f"zeroshot.checkpoint = {workspace}/frozen/extrapolation_antenna_frozen.csim\n"
            f"zeroshot.targets = {tmp_path}/d/UMi-5.csid\n"
            f"zeroshot.out_dir = {tmp_path}/zs\n"
        )
        assert main(["zeroshot", "--config", str(cfg)]) == 1


class TestSweep:
    def test_two_by_two_sweep(self, workspace):
        cfg = workspace / "sweep.cfg"
        cfg.write_text(
            TINY_MODEL
            + f"sweep.data = {workspace}/data/RMa-2.4.csid\n"
            + f"sweep.val_data = {workspace}/data/RMa-2.4.val.csid\n"
            + "sweep.data_sizes = 8,16\nsweep.models = 8x1,8x2\n"
            + "sweep.pretrain_steps = 2\nsweep.probe_steps = 2\nsweep.batch_size = 4\n"
            + f"sweep.out_dir = {workspace}/sweep\n"
        )
        assert main(["sweep", "--config", str(cfg)]) == 0
        summary = json.loads((workspace / "sweep" / "sweep_summary.json").read_text())
        assert len(summary["rows"]) == 4
        assert "8x1" in summary["data_scaling_delta_pct"]
        deltas = summary["data_scaling_delta_pct"]["8x1"]
        assert deltas[0]["from_size"] == 8 and deltas[0]["to_size"] == 16
        # delta computed on linear values
        rows = {(r["data_size"], r["model"]): r for r in summary["rows"]}
        lin_a = rows[(8, "8x1")]["nmse_linear"]
        lin_b = rows[(16, "8x1")]["nmse_linear"]
        assert deltas[0]["delta_pct"] == pytest.approx(100.0 * (lin_a - lin_b) / lin_a)

    def test_sweep_point_reproducible_after_deletion(self, workspace):
        cfg = workspace / "sweep.cfg"
        point = workspace / "sweep" / "data8_model8x1"
        report_bytes = (point / "report.json").read_bytes()
        ckpt_bytes = (point / "task.csim").read_bytes()
        for f in point.iterdir():
            f.unlink()
        point.rmdir()
        assert main(["sweep", "--config", str(cfg)]) == 0
        assert (point / "report.json").read_bytes() == report_bytes
        assert (point / "task.csim").read_bytes() == ckpt_bytes


class TestErrors:
    def test_unknown_config_key_exit_1(self, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("no.such = 1\n")
        assert main(["gen", "--config", str(cfg)]) == 1

    def test_missing_config_file_exit_2(self):
        assert main(["gen", "--config", "does-not-exist.cfg"]) == 2
