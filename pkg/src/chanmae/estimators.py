"""Scikit-learn style estimators for pretraining and the downstream tasks.

``ChannelMaskedAutoencoder`` runs the self-supervised masked-reconstruction
pretraining. The task estimators train under one of three regimes:

* ``supervised`` -- random initialization, no pretrained weights allowed;
* ``frozen``     -- encoder weights loaded from a pretrained model and kept
                    bit-identical, only the task decoder/head trains;
* ``finetune``   -- encoder weights loaded, everything trains.

Task decoders and heads are always freshly initialized.
"""

from __future__ import annotations

import hashlib
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin

from .autodiff import backward, constant, sum_all
from .checkpoint import load_checkpoint, load_into_params, save_checkpoint
from .dataset import sample_seed
from .errors import ConfigError, ContractError, NumericError
from .masking import random_mask, structured_mask
from .metrics import MetricsReport, cdf_table, dataset_nmse, nmse, position_errors
from .network import (
    ModelConfig,
    ModelParams,
    decode_batch,
    encode_batch,
    feedback_code_batch,
    feedback_decode_batch,
    init_feedback_bottleneck,
    init_model_params,
    init_position_head,
    masked_mse_batch,
    position_forward_batch,
    pretrain_step,
)
from .optim import Adam, clip_gradient_norm
from .patching import patchify, unpatchify
from .validation import check_csi_array, check_positions

REGIMES = ("supervised", "frozen", "finetune")

TASK_EXTRAPOLATION_ANTENNA = "extrapolation_antenna"
TASK_EXTRAPOLATION_SUBCARRIER = "extrapolation_subcarrier"
TASK_FEEDBACK = "feedback"
TASK_POSITIONING = "positioning"

_EVAL_CHUNK = 256


@dataclass
class TrainHistory:
    """Per-run training log (diagnostic; wall clock varies between runs)."""

    task: str
    regime: str
    seeds: dict = field(default_factory=dict)
    losses: list = field(default_factory=list)
    eval_steps: list = field(default_factory=list)
    eval_metrics: list = field(default_factory=list)
    wall_clock_s: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


class _BatchSampler:
    """Epoch-shuffled minibatch indices; trailing remainders are dropped."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        if n <= 0:
            raise ContractError("training needs at least one sample")
        self.n = n
        self.batch_size = min(batch_size, n)
        self.rng = rng
        self.order = rng.permutation(n)
        self.cursor = 0

    def next(self) -> np.ndarray:
        if self.cursor + self.batch_size > self.n:
            self.order = self.rng.permutation(self.n)
            self.cursor = 0
        out = self.order[self.cursor : self.cursor + self.batch_size]
        self.cursor += self.batch_size
        return out


def _chunks(n: int, size: int = _EVAL_CHUNK):
    for lo in range(0, n, size):
        yield np.arange(lo, min(lo + size, n))


def params_hash(params: dict) -> str:
    """Stable short hash of an estimator's constructor parameters."""
    parts = []
    for key in sorted(params):
        value = params[key]
        if isinstance(value, BaseEstimator):
            value = type(value).__name__
        parts.append(f"{key}={value!r}")
    return hashlib.sha256(";".join(parts).encode()).hexdigest()[:16]


def warmup_factor(step: int, warmup: int) -> float:
    """Linear learning-rate ramp over the first ``warmup`` steps (1-based)."""
    if warmup <= 0:
        return 1.0
    return min(1.0, step / warmup)


def masked_region_nmse(model: ModelParams, x: np.ndarray, eval_seed: int = 0) -> tuple[float, float]:
    """Reconstruction NMSE restricted to masked patches, under per-sample
    plans derived deterministically from ``eval_seed``."""
    cfg = model.config
    linears = []
    for idx in _chunks(x.shape[0]):
        plans = [
            random_mask(cfg.num_patches, cfg.mask_ratio, np.random.default_rng(sample_seed(eval_seed, int(j))))
            for j in idx
        ]
        hs = [x[int(j)] for j in idx]
        preds = decode_batch(model, encode_batch(model, hs, plans), plans).data
        preds = preds.reshape(len(hs), cfg.num_patches, cfg.patch_dim)
        for s, (h, plan) in enumerate(zip(hs, plans)):
            target = patchify(h, cfg.grid)
            denom = float((target[plan.masked] ** 2).sum())
            if denom <= 0.0:
                continue
            linears.append(float(((preds[s][plan.masked] - target[plan.masked]) ** 2).sum()) / denom)
    return dataset_nmse(linears)


class ChannelMaskedAutoencoder(BaseEstimator):
    """Self-supervised masked-reconstruction pretrainer for CSI matrices.

    ``fit`` expects complex (n, A, K) or two-plane (n, 2, A, K) arrays; the
    matrix dimensions come from the data, the rest from the constructor.
    """

    def __init__(
        self,
        patch_rows: int = 4,
        patch_cols: int = 8,
        embed_dim: int = 64,
        encoder_depth: int = 4,
        encoder_heads: int = 4,
        decoder_dim: int = 32,
        decoder_depth: int = 2,
        decoder_heads: int = 4,
        mlp_ratio: float = 4.0,
        mask_ratio: float = 0.75,
        steps: int = 300,
        batch_size: int = 32,
        lr: float = 1e-3,
        warmup: int = 50,
        grad_clip: float = 1.0,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        eval_fraction: float = 0.1,
        eval_interval: int = 50,
        seed: int = 0,
    ):
        self.patch_rows = patch_rows
        self.patch_cols = patch_cols
        self.embed_dim = embed_dim
        self.encoder_depth = encoder_depth
        self.encoder_heads = encoder_heads
        self.decoder_dim = decoder_dim
        self.decoder_depth = decoder_depth
        self.decoder_heads = decoder_heads
        self.mlp_ratio = mlp_ratio
        self.mask_ratio = mask_ratio
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.warmup = warmup
        self.grad_clip = grad_clip
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.eval_fraction = eval_fraction
        self.eval_interval = eval_interval
        self.seed = seed

    def _config_for(self, a: int, k: int) -> ModelConfig:
        cfg = ModelConfig(
            a=a,
            k=k,
            patch_rows=self.patch_rows,
            patch_cols=self.patch_cols,
            embed_dim=self.embed_dim,
            encoder_depth=self.encoder_depth,
            encoder_heads=self.encoder_heads,
            decoder_dim=self.decoder_dim,
            decoder_depth=self.decoder_depth,
            decoder_heads=self.decoder_heads,
            mlp_ratio=self.mlp_ratio,
            mask_ratio=self.mask_ratio,
        )
        cfg.validate()
        return cfg

    def fit(self, X, y=None):
        t0 = time.perf_counter()
        X = check_csi_array(X)
        n = X.shape[0]
        config = self._config_for(X.shape[2], X.shape[3])
        rng = np.random.default_rng(self.seed)
        model = init_model_params(config, rng)
        opt = Adam(model.all(), lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)

        n_eval = int(round(self.eval_fraction * n))
        train, held_out = X[: n - n_eval], X[n - n_eval :]
        if train.shape[0] == 0:
            raise ContractError("eval_fraction leaves no training samples")
        history = TrainHistory(task="pretrain", regime="pretrain", seeds={"fit": self.seed})

        def record_eval(step: int):
            if held_out.shape[0]:
                _, db = masked_region_nmse(model, held_out, eval_seed=self.seed)
                history.eval_steps.append(step)
                history.eval_metrics.append(db)

        record_eval(0)
        sampler = _BatchSampler(train.shape[0], self.batch_size, rng)
        for step in range(1, self.steps + 1):
            opt.lr = self.lr * warmup_factor(step, self.warmup)
            batch = [train[i] for i in sampler.next()]
            history.losses.append(pretrain_step(model, batch, rng, opt, self.grad_clip))
            if self.eval_interval and step % self.eval_interval == 0:
                record_eval(step)
        if self.steps and (not self.eval_interval or self.steps % self.eval_interval):
            record_eval(self.steps)
        history.wall_clock_s = time.perf_counter() - t0

        self.config_ = config
        self.model_ = model
        self.history_ = history
        return self

    def masked_nmse(self, X, eval_seed: int = 0) -> tuple[float, float]:
        self._check_fitted()
        X = check_csi_array(X, self.config_.a, self.config_.k)
        return masked_region_nmse(self.model_, X, eval_seed)

    def reconstruct(self, X, eval_seed: int = 0) -> np.ndarray:
        """Reconstruct every patch under deterministic per-sample plans."""
        self._check_fitted()
        cfg = self.config_
        X = check_csi_array(X, cfg.a, cfg.k)
        out = np.empty_like(X)
        for idx in _chunks(X.shape[0]):
            plans = [
                random_mask(cfg.num_patches, cfg.mask_ratio, np.random.default_rng(sample_seed(eval_seed, int(j))))
                for j in idx
            ]
            hs = [X[int(j)] for j in idx]
            preds = decode_batch(self.model_, encode_batch(self.model_, hs, plans), plans).data
            preds = preds.reshape(len(hs), cfg.num_patches, cfg.patch_dim)
            for s, j in enumerate(idx):
                out[int(j)] = unpatchify(preds[s], cfg.grid)
        return out

    def save(self, path, extra_meta: dict | None = None) -> None:
        self._check_fitted()
        meta = {"kind": "pretrain", "seeds": self.history_.seeds, "config_hash": self.config_hash()}
        meta.update(extra_meta or {})
        save_checkpoint(path, self.config_, self.model_.params, meta)

    @classmethod
    def load(cls, path) -> "ChannelMaskedAutoencoder":
        config, arrays, meta = load_checkpoint(path)
        est = cls(
            patch_rows=config.patch_rows,
            patch_cols=config.patch_cols,
            embed_dim=config.embed_dim,
            encoder_depth=config.encoder_depth,
            encoder_heads=config.encoder_heads,
            decoder_dim=config.decoder_dim,
            decoder_depth=config.decoder_depth,
            decoder_heads=config.decoder_heads,
            mlp_ratio=config.mlp_ratio,
            mask_ratio=config.mask_ratio,
        )
        model = init_model_params(config, np.random.default_rng(0))
        load_into_params(model.params, arrays)
        est.config_ = config
        est.model_ = model
        est.history_ = TrainHistory(
            task="pretrain", regime="pretrain", seeds=meta.get("seeds", {})
        )
        return est

    def config_hash(self) -> str:
        return params_hash(self.get_params())

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise ContractError("estimator is not fitted")


def _resolve_pretrained(pretrained) -> tuple[ModelConfig, dict[str, np.ndarray]]:
    if isinstance(pretrained, ChannelMaskedAutoencoder):
        pretrained._check_fitted()
        return pretrained.config_, {n: p.data for n, p in pretrained.model_.params.items()}
    config, arrays, _ = load_checkpoint(pretrained)
    return config, arrays


def _build_task_model(
    regime: str,
    pretrained,
    config: ModelConfig | None,
    x_shape: tuple[int, int],
    seed: int,
) -> tuple[ModelParams, np.random.Generator]:
    """Initialize a task model under a regime; encoder weights come from the
    pretrained source for frozen/finetune, random otherwise."""
    if regime not in REGIMES:
        raise ConfigError(f"unknown regime {regime!r}", ["regime"])
    if regime == "supervised":
        if pretrained is not None:
            raise ConfigError("the supervised regime forbids a pretrained model", ["pretrained"])
        cfg = config if config is not None else ModelConfig(a=x_shape[0], k=x_shape[1])
        cfg.validate()
    else:
        if pretrained is None:
            raise ConfigError(f"the {regime} regime requires a pretrained model", ["pretrained"])
        cfg, arrays = _resolve_pretrained(pretrained)
    if (cfg.a, cfg.k) != x_shape:
        raise ConfigError(
            f"model expects ({cfg.a}, {cfg.k}) CSI matrices, data is {x_shape}", ["pretrained"]
        )
    rng = np.random.default_rng(seed)
    model = init_model_params(cfg, rng)
    if regime != "supervised":
        encoder = {n: model[n] for n in model.encoder_names()}
        load_into_params(encoder, {n: arrays[n] for n in encoder})
        if regime == "frozen":
            model.freeze_encoder()
    return model, rng


def _train(
    optimizers: list[Adam],
    batch_loss,
    n: int,
    steps: int,
    batch_size: int,
    rng: np.random.Generator,
    warmup: int = 0,
    grad_clip: float = 0.0,
) -> list[float]:
    """Shared minibatch loop; one batched graph and backward per step."""
    sampler = _BatchSampler(n, batch_size, rng)
    peaks = [opt.lr for opt in optimizers]
    all_params = [p for opt in optimizers for p in opt.params]
    losses: list[float] = []
    for step in range(1, steps + 1):
        batch = sampler.next()
        for opt, peak in zip(optimizers, peaks):
            opt.lr = peak * warmup_factor(step, warmup)
            opt.zero_grad()
        loss = batch_loss(batch)
        value = loss.item()
        if not np.isfinite(value):
            raise NumericError("non-finite training loss")
        backward(loss)
        if grad_clip > 0:
            clip_gradient_norm(all_params, grad_clip)
        for opt in optimizers:
            opt.step()
        losses.append(value)
    return losses


class ChannelExtrapolator(BaseEstimator):
    """Predicts the masked half of a CSI matrix (antenna or subcarrier
    domain) from the visible half; visible patches are copied through."""

    def __init__(
        self,
        domain: str = "antenna",
        pattern: str | None = None,
        regime: str = "supervised",
        pretrained=None,
        config: ModelConfig | None = None,
        steps: int = 300,
        batch_size: int = 32,
        lr: float = 1e-3,
        warmup: int = 50,
        grad_clip: float = 1.0,
        seed: int = 0,
    ):
        self.domain = domain
        self.pattern = pattern
        self.regime = regime
        self.pretrained = pretrained
        self.config = config
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.warmup = warmup
        self.grad_clip = grad_clip
        self.seed = seed

    @property
    def task_name(self) -> str:
        return TASK_EXTRAPOLATION_ANTENNA if self.domain == "antenna" else TASK_EXTRAPOLATION_SUBCARRIER

    def _pattern(self) -> str:
        if self.pattern is not None:
            return self.pattern
        return "interleaved" if self.domain == "antenna" else "contiguous"

    def fit(self, X, y=None):
        t0 = time.perf_counter()
        X = check_csi_array(X)
        model, rng = _build_task_model(
            self.regime, self.pretrained, self.config, X.shape[2:], self.seed
        )
        cfg = model.config
        plan = structured_mask(cfg.grid, self.domain, self._pattern())
        targets = np.stack([patchify(X[i], cfg.grid) for i in range(X.shape[0])])
        detach = self.regime == "frozen"
        encoder_before = model.checksum(model.encoder_names())

        def batch_loss(idx):
            hs = [X[int(i)] for i in idx]
            plans = [plan] * len(hs)
            latent = encode_batch(model, hs, plans)
            if detach:
                latent = latent.detach()
            pred = decode_batch(model, latent, plans)
            return masked_mse_batch(pred, targets[idx], plans)

        opt = Adam(model.all(), lr=self.lr)
        losses = _train(
            [opt], batch_loss, X.shape[0], self.steps, self.batch_size, rng, self.warmup,
            self.grad_clip,
        )

        self.model_ = model
        self.config_ = cfg
        self.plan_ = plan
        self.frozen_encoder_unchanged_ = (
            model.checksum(model.encoder_names()) == encoder_before if detach else None
        )
        self.history_ = TrainHistory(
            task=self.task_name,
            regime=self.regime,
            seeds={"fit": self.seed},
            losses=losses,
            wall_clock_s=time.perf_counter() - t0,
        )
        return self

    def predict(self, X) -> np.ndarray:
        """Full reconstructions (n, 2, A, K): model output at masked patches,
        the input itself at visible patches."""
        self._check_fitted()
        cfg = self.config_
        X = check_csi_array(X, cfg.a, cfg.k)
        plan = self.plan_
        out = np.empty_like(X)
        for idx in _chunks(X.shape[0]):
            hs = [X[int(i)] for i in idx]
            plans = [plan] * len(hs)
            preds = decode_batch(self.model_, encode_batch(self.model_, hs, plans), plans).data
            preds = preds.reshape(len(hs), cfg.num_patches, cfg.patch_dim).copy()
            for s, i in enumerate(idx):
                target = patchify(X[int(i)], cfg.grid)
                preds[s][plan.visible] = target[plan.visible]
                out[int(i)] = unpatchify(preds[s], cfg.grid)
        return out

    def nmse(self, X) -> tuple[float, float]:
        """Dataset NMSE of predictions against the full matrices."""
        self._check_fitted()
        cfg = self.config_
        X = check_csi_array(X, cfg.a, cfg.k)
        preds = self.predict(X)
        linears = [nmse(X[i], preds[i])[0] for i in range(X.shape[0])]
        return dataset_nmse(linears)

    def evaluate(self, X, y=None, *, source="", target="", seeds=None, config_hash="") -> MetricsReport:
        linear, db = self.nmse(X)
        return MetricsReport(
            task=self.task_name,
            regime=self.regime,
            scenario_source=source,
            scenario_target=target or source,
            sample_count=int(np.asarray(X).shape[0]),
            config_hash=config_hash or params_hash(self.get_params()),
            seeds=seeds or {"fit": self.seed},
            nmse_linear=linear,
            nmse_db=db,
        )

    def save(self, path, extra_meta: dict | None = None) -> None:
        self._check_fitted()
        meta = {
            "kind": "task",
            "task": self.task_name,
            "regime": self.regime,
            "domain": self.domain,
            "pattern": self._pattern(),
        }
        meta.update(extra_meta or {})
        save_checkpoint(path, self.config_, self.model_.params, meta)

    @classmethod
    def load(cls, path) -> "ChannelExtrapolator":
        config, arrays, meta = load_checkpoint(path)
        est = cls(
            domain=meta.get("domain", "antenna"),
            pattern=meta.get("pattern"),
            regime=meta.get("regime", "supervised"),
        )
        model = init_model_params(config, np.random.default_rng(0))
        load_into_params(model.params, arrays)
        est.model_ = model
        est.config_ = config
        est.plan_ = structured_mask(config.grid, est.domain, est._pattern())
        est.frozen_encoder_unchanged_ = None
        est.history_ = TrainHistory(task=est.task_name, regime=est.regime)
        return est

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise ContractError("estimator is not fitted")


class ChannelFeedbackAutoencoder(BaseEstimator, TransformerMixin):
    """Compresses a CSI matrix to a short real code and reconstructs it.

    ``transform`` emits codes of length ``code_dim``; ``inverse_transform``
    rebuilds CSI from codes; ``predict`` is the round trip."""

    def __init__(
        self,
        code_dim: int = 128,
        regime: str = "supervised",
        pretrained=None,
        config: ModelConfig | None = None,
        steps: int = 300,
        batch_size: int = 32,
        lr: float = 1e-3,
        warmup: int = 50,
        grad_clip: float = 1.0,
        seed: int = 0,
    ):
        self.code_dim = code_dim
        self.regime = regime
        self.pretrained = pretrained
        self.config = config
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.warmup = warmup
        self.grad_clip = grad_clip
        self.seed = seed

    def fit(self, X, y=None):
        t0 = time.perf_counter()
        X = check_csi_array(X)
        model, rng = _build_task_model(
            self.regime, self.pretrained, self.config, X.shape[2:], self.seed
        )
        cfg = model.config
        bottleneck = init_feedback_bottleneck(cfg, self.code_dim, rng)
        targets = np.stack([patchify(X[i], cfg.grid) for i in range(X.shape[0])])
        detach = self.regime == "frozen"
        encoder_before = model.checksum(model.encoder_names())

        def batch_loss(idx):
            hs = [X[int(i)] for i in idx]
            codes = feedback_code_batch(model, bottleneck, hs, detach_latent=detach)
            pred = feedback_decode_batch(model, bottleneck, codes)
            tgt = targets[idx].reshape(len(hs) * cfg.num_patches, cfg.patch_dim)
            diff = pred - constant(tgt)
            return sum_all(diff * diff) * (1.0 / tgt.size)

        opt = Adam(model.all() + list(bottleneck.values()), lr=self.lr)
        losses = _train(
            [opt], batch_loss, X.shape[0], self.steps, self.batch_size, rng, self.warmup,
            self.grad_clip,
        )

        self.model_ = model
        self.config_ = cfg
        self.bottleneck_ = bottleneck
        self.compression_ratio_ = 2.0 * cfg.a * cfg.k / self.code_dim
        self.frozen_encoder_unchanged_ = (
            model.checksum(model.encoder_names()) == encoder_before if detach else None
        )
        self.history_ = TrainHistory(
            task=TASK_FEEDBACK,
            regime=self.regime,
            seeds={"fit": self.seed},
            losses=losses,
            wall_clock_s=time.perf_counter() - t0,
        )
        return self

    def transform(self, X) -> np.ndarray:
        """Codes (n, code_dim) for each CSI matrix."""
        self._check_fitted()
        X = check_csi_array(X, self.config_.a, self.config_.k)
        parts = []
        for idx in _chunks(X.shape[0]):
            hs = [X[int(i)] for i in idx]
            parts.append(feedback_code_batch(self.model_, self.bottleneck_, hs).data)
        return np.vstack(parts)

    def inverse_transform(self, codes) -> np.ndarray:
        """CSI reconstructions (n, 2, A, K) from codes alone."""
        self._check_fitted()
        codes = np.asarray(codes, dtype=np.float64)
        if codes.ndim != 2 or codes.shape[1] != self.code_dim:
            raise ConfigError(f"codes must be (n, {self.code_dim}), got {codes.shape}", ["codes"])
        cfg = self.config_
        out = np.empty((codes.shape[0], 2, cfg.a, cfg.k))
        for idx in _chunks(codes.shape[0]):
            preds = feedback_decode_batch(self.model_, self.bottleneck_, constant(codes[idx])).data
            preds = preds.reshape(len(idx), cfg.num_patches, cfg.patch_dim)
            for s, i in enumerate(idx):
                out[int(i)] = unpatchify(preds[s], cfg.grid)
        return out

    def predict(self, X) -> np.ndarray:
        return self.inverse_transform(self.transform(X))

    def nmse(self, X) -> tuple[float, float]:
        self._check_fitted()
        X = check_csi_array(X, self.config_.a, self.config_.k)
        preds = self.predict(X)
        linears = [nmse(X[i], preds[i])[0] for i in range(X.shape[0])]
        return dataset_nmse(linears)

    def evaluate(self, X, y=None, *, source="", target="", seeds=None, config_hash="") -> MetricsReport:
        linear, db = self.nmse(X)
        return MetricsReport(
            task=TASK_FEEDBACK,
            regime=self.regime,
            scenario_source=source,
            scenario_target=target or source,
            sample_count=int(np.asarray(X).shape[0]),
            config_hash=config_hash or params_hash(self.get_params()),
            seeds=seeds or {"fit": self.seed},
            nmse_linear=linear,
            nmse_db=db,
        )

    def save(self, path, extra_meta: dict | None = None) -> None:
        self._check_fitted()
        named = dict(self.model_.params)
        named.update(self.bottleneck_)
        meta = {"kind": "task", "task": TASK_FEEDBACK, "regime": self.regime, "code_dim": self.code_dim}
        meta.update(extra_meta or {})
        save_checkpoint(path, self.config_, named, meta)

    @classmethod
    def load(cls, path) -> "ChannelFeedbackAutoencoder":
        config, arrays, meta = load_checkpoint(path)
        code_dim = int(meta["code_dim"])
        est = cls(code_dim=code_dim, regime=meta.get("regime", "supervised"))
        rng = np.random.default_rng(0)
        model = init_model_params(config, rng)
        bottleneck = init_feedback_bottleneck(config, code_dim, rng)
        load_into_params(model.params, arrays)
        load_into_params(bottleneck, arrays)
        est.model_ = model
        est.config_ = config
        est.bottleneck_ = bottleneck
        est.compression_ratio_ = 2.0 * config.a * config.k / code_dim
        est.frozen_encoder_unchanged_ = None
        est.history_ = TrainHistory(task=TASK_FEEDBACK, regime=est.regime)
        return est

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise ContractError("estimator is not fitted")


class CsiPositioner(BaseEstimator, RegressorMixin):
    """Regresses the 2D UE position from the encoder's class token through
    an affine head (prediction is exactly W^T cls + b, in meters)."""

    def __init__(
        self,
        regime: str = "supervised",
        pretrained=None,
        config: ModelConfig | None = None,
        steps: int = 600,
        batch_size: int = 32,
        lr: float = 1e-3,
        head_lr: float = 0.05,
        warmup: int = 50,
        grad_clip: float = 1.0,
        seed: int = 0,
    ):
        self.regime = regime
        self.pretrained = pretrained
        self.config = config
        self.steps = steps
        self.batch_size = batch_size
        self.lr = lr
        self.head_lr = head_lr
        self.warmup = warmup
        self.grad_clip = grad_clip
        self.seed = seed

    def fit(self, X, y):
        t0 = time.perf_counter()
        X = check_csi_array(X)
        y = check_positions(y, X.shape[0])
        model, rng = _build_task_model(
            self.regime, self.pretrained, self.config, X.shape[2:], self.seed
        )
        head = init_position_head(model.config, rng)
        detach = self.regime == "frozen"
        encoder_before = model.checksum(model.encoder_names())

        def batch_loss(idx):
            hs = [X[int(i)] for i in idx]
            preds = position_forward_batch(model, head, hs, detach_latent=detach)
            diff = preds - constant(y[idx])
            return sum_all(diff * diff) * (1.0 / (2 * len(hs)))

        opt_model = Adam(model.all(), lr=self.lr)
        opt_head = Adam(list(head.values()), lr=self.head_lr)
        losses = _train(
            [opt_model, opt_head], batch_loss, X.shape[0], self.steps, self.batch_size, rng,
            self.warmup, self.grad_clip,
        )

        self.model_ = model
        self.config_ = model.config
        self.head_ = head
        self.frozen_encoder_unchanged_ = (
            model.checksum(model.encoder_names()) == encoder_before if detach else None
        )
        self.history_ = TrainHistory(
            task=TASK_POSITIONING,
            regime=self.regime,
            seeds={"fit": self.seed},
            losses=losses,
            wall_clock_s=time.perf_counter() - t0,
        )
        return self

    def predict(self, X) -> np.ndarray:
        self._check_fitted()
        X = check_csi_array(X, self.config_.a, self.config_.k)
        parts = []
        for idx in _chunks(X.shape[0]):
            hs = [X[int(i)] for i in idx]
            parts.append(position_forward_batch(self.model_, self.head_, hs).data)
        return np.vstack(parts)

    def rmse(self, X, y) -> float:
        preds = self.predict(X)
        y = check_positions(y, preds.shape[0])
        return float(np.sqrt((position_errors(preds, y) ** 2).mean()))

    def evaluate(self, X, y=None, *, source="", target="", seeds=None, config_hash="") -> MetricsReport:
        if y is None:
            raise ContractError("positioning evaluation needs ground-truth positions")
        preds = self.predict(X)
        y = check_positions(y, preds.shape[0])
        stats = cdf_table(position_errors(preds, y))
        return MetricsReport(
            task=TASK_POSITIONING,
            regime=self.regime,
            scenario_source=source,
            scenario_target=target or source,
            sample_count=preds.shape[0],
            config_hash=config_hash or params_hash(self.get_params()),
            seeds=seeds or {"fit": self.seed},
            positioning={
                "mean_m": stats.mean_m,
                "rmse_m": stats.rmse_m,
                "quantiles": stats.quantiles,
            },
        )

    def save(self, path, extra_meta: dict | None = None) -> None:
        self._check_fitted()
        named = dict(self.model_.params)
        named.update(self.head_)
        meta = {"kind": "task", "task": TASK_POSITIONING, "regime": self.regime}
        meta.update(extra_meta or {})
        save_checkpoint(path, self.config_, named, meta)

    @classmethod
    def load(cls, path) -> "CsiPositioner":
        config, arrays, meta = load_checkpoint(path)
        est = cls(regime=meta.get("regime", "supervised"))
        rng = np.random.default_rng(0)
        model = init_model_params(config, rng)
        head = init_position_head(config, rng)
        load_into_params(model.params, arrays)
        load_into_params(head, arrays)
        est.model_ = model
        est.config_ = config
        est.head_ = head
        est.frozen_encoder_unchanged_ = None
        est.history_ = TrainHistory(task=TASK_POSITIONING, regime=est.regime)
        return est

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise ContractError("estimator is not fitted")


def estimator_param_bytes(estimator) -> bytes:
    """Concatenated bytes of every learnable tensor of a fitted estimator."""
    parts = [p.data.tobytes() for p in estimator.model_.all()]
    for attr in ("head_", "bottleneck_"):
        extra = getattr(estimator, attr, None)
        if extra:
            parts.extend(p.data.tobytes() for p in extra.values())
    return b"".join(parts)


def zero_shot_eval(
    estimator,
    X,
    y=None,
    *,
    source: str = "",
    target: str = "",
    seeds: dict | None = None,
    config_hash: str = "",
) -> MetricsReport:
    """Evaluate a fitted task estimator on a foreign dataset without any
    parameter mutation (verified bit-exactly)."""
    before = estimator_param_bytes(estimator)
    report = estimator.evaluate(
        X, y, source=source, target=target, seeds=seeds, config_hash=config_hash
    )
    if estimator_param_bytes(estimator) != before:
        raise ContractError("evaluation mutated estimator parameters")
    return report
