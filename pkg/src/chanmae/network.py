"""Masked-autoencoder model over CSI patch tokens.

Asymmetric pre-norm transformer encoder/decoder. The encoder sees the
class token plus visible patches (fixed 2D sine-cosine positions added to
the patches, none to the class token); the decoder rebuilds the full token
sequence with a shared mask token at masked positions, adds its positional
table (class slot included) and predicts every patch.

Forward passes are batched: a batch of samples becomes one tall row-stacked
graph whose attention is segment-local, so every sample of a batch must
share one visible-patch count. Single-sample entry points wrap the batched
implementations.
"""

from __future__ import annotations

import hashlib
from dataclasses import asdict, dataclass, replace
from typing import Sequence

import numpy as np

from .autodiff import (
    Parameter,
    Tensor,
    backward,
    concat,
    constant,
    gather_rows,
    gelu,
    layer_norm,
    matmul,
    multi_head_attention,
    reshape,
    segment_mean_rows,
    sum_all,
    tile_rows,
)
from .errors import ConfigError, ContractError, NumericError, ShapeError
from .masking import MaskPlan, all_visible_plan, random_mask
from .optim import Adam, clip_gradient_norm
from .patching import PatchGrid, make_grid, patchify
from .posenc import build_posemb

LN_EPS = 1e-6
INIT_STD = 0.02


@dataclass(frozen=True)
class ModelConfig:
    """Desk-scale defaults; paper-scale values stay configurable."""

    a: int = 16
    k: int = 64
    patch_rows: int = 4
    patch_cols: int = 8
    embed_dim: int = 64
    encoder_depth: int = 4
    encoder_heads: int = 4
    decoder_dim: int = 32
    decoder_depth: int = 2
    decoder_heads: int = 4
    mlp_ratio: float = 4.0
    mask_ratio: float = 0.75

    def validate(self) -> None:
        bad = []
        if self.patch_rows <= 0 or self.a % self.patch_rows:
            bad.append("patch_rows")
        if self.patch_cols <= 0 or self.k % self.patch_cols:
            bad.append("patch_cols")
        if self.embed_dim % 4:
            bad.append("embed_dim")
        if self.embed_dim % self.encoder_heads:
            bad.append("encoder_heads")
        if self.decoder_dim % self.decoder_heads:
            bad.append("decoder_heads")
        if not 0.0 <= self.mask_ratio < 1.0:
            bad.append("mask_ratio")
        if self.encoder_depth < 0 or self.decoder_depth < 0:
            bad.append("encoder_depth")
        if not bad and make_grid(self.a, self.k, self.patch_rows, self.patch_cols).num_patches < 2:
            bad.append("patch_rows")
        if bad:
            raise ConfigError(f"invalid model config: {bad}", bad)

    @property
    def grid(self) -> PatchGrid:
        return make_grid(self.a, self.k, self.patch_rows, self.patch_cols)

    @property
    def num_patches(self) -> int:
        return self.grid.num_patches

    @property
    def patch_dim(self) -> int:
        return self.grid.patch_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        cfg = cls(**d)
        cfg.validate()
        return cfg

    def scaled(self, **kw) -> "ModelConfig":
        cfg = replace(self, **kw)
        cfg.validate()
        return cfg


def trunc_normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    """Normal(0, std) with resampling outside +-2 std."""
    x = rng.normal(0.0, std, size=shape)
    bad = np.abs(x) > 2.0 * std
    while bad.any():
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(x) > 2.0 * std
    return x


def _block_param_names(prefix: str) -> list[str]:
    return [
        f"{prefix}_ln1_g",
        f"{prefix}_ln1_b",
        f"{prefix}_wq",
        f"{prefix}_bq",
        f"{prefix}_wk",
        f"{prefix}_bk",
        f"{prefix}_wv",
        f"{prefix}_bv",
        f"{prefix}_wo",
        f"{prefix}_bo",
        f"{prefix}_ln2_g",
        f"{prefix}_ln2_b",
        f"{prefix}_mlp_w1",
        f"{prefix}_mlp_b1",
        f"{prefix}_mlp_w2",
        f"{prefix}_mlp_b2",
    ]


class ModelParams:
    """All learnable tensors, in a fixed creation order used everywhere
    (updates, checkpoints, checksums)."""

    def __init__(self, config: ModelConfig, params: dict[str, Parameter]):
        self.config = config
        self.params = params
        self.posemb = build_posemb(config.grid.grid_rows, config.grid.grid_cols, config.embed_dim)

    def __getitem__(self, name: str) -> Parameter:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def all(self) -> list[Parameter]:
        return list(self.params.values())

    def names(self) -> list[str]:
        return list(self.params.keys())

    def encoder_names(self) -> list[str]:
        names = ["patch_proj_w", "patch_proj_b", "cls_token"]
        for i in range(self.config.encoder_depth):
            names.extend(_block_param_names(f"enc{i}"))
        names.extend(["enc_norm_g", "enc_norm_b"])
        return names

    def decoder_names(self) -> list[str]:
        return [n for n in self.names() if n not in set(self.encoder_names())]

    def freeze_encoder(self) -> None:
        for name in self.encoder_names():
            self.params[name].trainable = False

    def checksum(self, names: list[str] | None = None) -> str:
        digest = hashlib.sha256()
        for name in names if names is not None else self.names():
            digest.update(name.encode())
            digest.update(self.params[name].data.tobytes())
        return digest.hexdigest()


def _add_block_params(params: dict[str, Parameter], prefix: str, dim: int, mlp_ratio: float, rng):
    hidden = int(dim * mlp_ratio)
    params[f"{prefix}_ln1_g"] = Parameter(f"{prefix}_ln1_g", np.ones(dim))
    params[f"{prefix}_ln1_b"] = Parameter(f"{prefix}_ln1_b", np.zeros(dim))
    # Query and key start as copies of one draw at std 1/sqrt(dim): then
    # q.k = h_q W^T W h_k ~ h_q.h_k at initialization, so attention is
    # similarity-/position-aware from step 0 instead of uniform, which cuts
    # hundreds of steps off short training budgets.
    qk = trunc_normal(rng, (dim, dim), std=1.0 / np.sqrt(dim))
    params[f"{prefix}_wq"] = Parameter(f"{prefix}_wq", qk.copy())
    params[f"{prefix}_bq"] = Parameter(f"{prefix}_bq", np.zeros(dim))
    params[f"{prefix}_wk"] = Parameter(f"{prefix}_wk", qk.copy())
    params[f"{prefix}_bk"] = Parameter(f"{prefix}_bk", np.zeros(dim))
    for w in ("wv", "wo"):
        params[f"{prefix}_{w}"] = Parameter(f"{prefix}_{w}", trunc_normal(rng, (dim, dim)))
        b = "b" + w[1]
        params[f"{prefix}_{b}"] = Parameter(f"{prefix}_{b}", np.zeros(dim))
    params[f"{prefix}_ln2_g"] = Parameter(f"{prefix}_ln2_g", np.ones(dim))
    params[f"{prefix}_ln2_b"] = Parameter(f"{prefix}_ln2_b", np.zeros(dim))
    params[f"{prefix}_mlp_w1"] = Parameter(f"{prefix}_mlp_w1", trunc_normal(rng, (dim, hidden)))
    params[f"{prefix}_mlp_b1"] = Parameter(f"{prefix}_mlp_b1", np.zeros(hidden))
    params[f"{prefix}_mlp_w2"] = Parameter(f"{prefix}_mlp_w2", trunc_normal(rng, (hidden, dim)))
    params[f"{prefix}_mlp_b2"] = Parameter(f"{prefix}_mlp_b2", np.zeros(dim))


def init_model_params(config: ModelConfig, rng: np.random.Generator) -> ModelParams:
    """Truncated-normal init: std 0.02 for value/output/MLP projections
    and tokens, std 1/sqrt(dim) with tied query/key draws (see
    _add_block_params), zero biases, unit norm gains. The decoder positional
    table is learnable, initialized from the 2D sine-cosine table (zero
    class row) when its width allows."""
    config.validate()
    d, dd = config.embed_dim, config.decoder_dim
    pd = config.patch_dim
    p = config.num_patches
    params: dict[str, Parameter] = {}
    params["patch_proj_w"] = Parameter("patch_proj_w", trunc_normal(rng, (pd, d)))
    params["patch_proj_b"] = Parameter("patch_proj_b", np.zeros(d))
    params["cls_token"] = Parameter("cls_token", trunc_normal(rng, (d,)))
    for i in range(config.encoder_depth):
        _add_block_params(params, f"enc{i}", d, config.mlp_ratio, rng)
    params["enc_norm_g"] = Parameter("enc_norm_g", np.ones(d))
    params["enc_norm_b"] = Parameter("enc_norm_b", np.zeros(d))
    params["enc2dec_w"] = Parameter("enc2dec_w", trunc_normal(rng, (d, dd)))
    params["enc2dec_b"] = Parameter("enc2dec_b", np.zeros(dd))
    params["mask_token"] = Parameter("mask_token", trunc_normal(rng, (dd,)))
    if dd % 4 == 0:
        grid = config.grid
        table = np.concatenate(
            [np.zeros((1, dd)), build_posemb(grid.grid_rows, grid.grid_cols, dd)], axis=0
        )
    else:
        table = trunc_normal(rng, (p + 1, dd))
    params["dec_pos"] = Parameter("dec_pos", table)
    for i in range(config.decoder_depth):
        _add_block_params(params, f"dec{i}", dd, config.mlp_ratio, rng)
    params["dec_norm_g"] = Parameter("dec_norm_g", np.ones(dd))
    params["dec_norm_b"] = Parameter("dec_norm_b", np.zeros(dd))
    params["recon_w"] = Parameter("recon_w", trunc_normal(rng, (dd, pd)))
    params["recon_b"] = Parameter("recon_b", np.zeros(pd))
    return ModelParams(config, params)


def init_position_head(config: ModelConfig, rng: np.random.Generator) -> dict[str, Parameter]:
    return {
        "pos_head_w": Parameter("pos_head_w", trunc_normal(rng, (config.embed_dim, 2))),
        "pos_head_b": Parameter("pos_head_b", np.zeros(2)),
    }


def init_feedback_bottleneck(
    config: ModelConfig, code_dim: int, rng: np.random.Generator
) -> dict[str, Parameter]:
    if code_dim <= 0:
        raise ConfigError(f"code_dim must be positive, got {code_dim}", ["code_dim"])
    width = (config.num_patches + 1) * config.decoder_dim
    return {
        "fb_down": Parameter("fb_down", trunc_normal(rng, (config.embed_dim, code_dim))),
        "fb_up": Parameter("fb_up", trunc_normal(rng, (code_dim, width))),
    }


def _attention(x: Tensor, params, prefix: str, heads: int, segments: int) -> Tensor:
    q = matmul(x, params[f"{prefix}_wq"].value) + params[f"{prefix}_bq"].value
    k = matmul(x, params[f"{prefix}_wk"].value) + params[f"{prefix}_bk"].value
    v = matmul(x, params[f"{prefix}_wv"].value) + params[f"{prefix}_bv"].value
    merged = multi_head_attention(q, k, v, heads, segments)
    return matmul(merged, params[f"{prefix}_wo"].value) + params[f"{prefix}_bo"].value


def _transformer_block(x: Tensor, params, prefix: str, heads: int, segments: int) -> Tensor:
    h = layer_norm(x, params[f"{prefix}_ln1_g"].value, params[f"{prefix}_ln1_b"].value, LN_EPS)
    x = x + _attention(h, params, prefix, heads, segments)
    h = layer_norm(x, params[f"{prefix}_ln2_g"].value, params[f"{prefix}_ln2_b"].value, LN_EPS)
    m = gelu(matmul(h, params[f"{prefix}_mlp_w1"].value) + params[f"{prefix}_mlp_b1"].value)
    m = matmul(m, params[f"{prefix}_mlp_w2"].value) + params[f"{prefix}_mlp_b2"].value
    return x + m


def _same_visible_count(plans: Sequence[MaskPlan]) -> int:
    v = plans[0].num_visible
    if any(p.num_visible != v for p in plans):
        raise ContractError("all plans in a batch must share one visible count")
    return v


def _stack_patches(hs, grid: PatchGrid) -> np.ndarray:
    return np.stack([patchify(h, grid) for h in hs])


def encode_tokens(
    model: ModelParams, token_vectors: np.ndarray, pos_rows: np.ndarray, segments: int = 1
) -> Tensor:
    """Encoder over explicit per-segment token vectors with their positional
    rows attached; returns (segments*(1+V), D) with each segment's class
    representation in its row 0."""
    cfg = model.config
    if token_vectors.shape[1] != cfg.patch_dim:
        raise ShapeError(f"token width {token_vectors.shape[1]} != patch_dim {cfg.patch_dim}")
    if token_vectors.shape[0] % segments:
        raise ShapeError(f"{token_vectors.shape[0]} tokens not divisible by {segments} segments")
    v = token_vectors.shape[0] // segments
    x = matmul(constant(token_vectors), model["patch_proj_w"].value) + model["patch_proj_b"].value
    x = x + constant(pos_rows)
    cls = reshape(model["cls_token"].value, (1, cfg.embed_dim))
    stacked = concat([cls, x], axis=0)
    index = np.zeros(segments * (1 + v), dtype=np.intp)
    for s in range(segments):
        index[s * (1 + v) + 1 : (s + 1) * (1 + v)] = 1 + s * v + np.arange(v)
    seq = gather_rows(stacked, index)
    for i in range(cfg.encoder_depth):
        seq = _transformer_block(seq, model, f"enc{i}", cfg.encoder_heads, segments)
    return layer_norm(seq, model["enc_norm_g"].value, model["enc_norm_b"].value, LN_EPS)


def encode_batch(model: ModelParams, hs, plans: Sequence[MaskPlan]) -> Tensor:
    """Encode a batch of CSI matrices, each under its own plan; returns
    (B*(1+V), D) with per-sample blocks in batch order."""
    cfg = model.config
    if len(plans) != len(hs):
        raise ShapeError(f"{len(hs)} samples but {len(plans)} plans")
    for plan in plans:
        if plan.num_patches != cfg.num_patches:
            raise ShapeError(
                f"plan covers {plan.num_patches} patches, model expects {cfg.num_patches}"
            )
    _same_visible_count(plans)
    tokens = np.concatenate(
        [patchify(h, cfg.grid)[plan.visible] for h, plan in zip(hs, plans)], axis=0
    )
    pos = np.concatenate([model.posemb[plan.visible] for plan in plans], axis=0)
    return encode_tokens(model, tokens, pos, segments=len(plans))


def encode(model: ModelParams, h: np.ndarray, plan: MaskPlan) -> Tensor:
    """Encode the visible patches of one CSI matrix under ``plan``."""
    return encode_batch(model, [h], [plan])


def _decoder_gather(model: ModelParams, latent: Tensor, plans: Sequence[MaskPlan]) -> Tensor:
    """Project the latent to decoder width and scatter each segment back to
    patch order with the shared mask token at masked slots (positions not
    yet added); each segment's row 0 is its class slot."""
    cfg = model.config
    b = len(plans)
    v = _same_visible_count(plans)
    if latent.shape != (b * (1 + v), cfg.embed_dim):
        raise ShapeError(
            f"latent shape {latent.shape} inconsistent with {b} plans of {v} visible patches"
        )
    y = matmul(latent, model["enc2dec_w"].value) + model["enc2dec_b"].value
    mask_row = reshape(model["mask_token"].value, (1, cfg.decoder_dim))
    stacked = concat([y, mask_row], axis=0)
    mask_index = b * (1 + v)
    p = cfg.num_patches
    index = np.full(b * (p + 1), mask_index, dtype=np.intp)
    for s, plan in enumerate(plans):
        base_out = s * (p + 1)
        base_in = s * (1 + v)
        index[base_out] = base_in
        index[base_out + 1 + plan.visible] = base_in + 1 + np.arange(v)
    return gather_rows(stacked, index)


def decoder_token_sequence(model: ModelParams, latent: Tensor, plan: MaskPlan) -> Tensor:
    return _decoder_gather(model, latent, [plan])


def decode_batch(model: ModelParams, latent: Tensor, plans: Sequence[MaskPlan]) -> Tensor:
    """Reconstruct all patches for each segment; returns (B*P, patch_dim)."""
    cfg = model.config
    b = len(plans)
    p = cfg.num_patches
    seq = _decoder_gather(model, latent, plans) + tile_rows(model["dec_pos"].value, b)
    for i in range(cfg.decoder_depth):
        seq = _transformer_block(seq, model, f"dec{i}", cfg.decoder_heads, b)
    seq = layer_norm(seq, model["dec_norm_g"].value, model["dec_norm_b"].value, LN_EPS)
    out = matmul(seq, model["recon_w"].value) + model["recon_b"].value
    keep = np.concatenate([s * (p + 1) + 1 + np.arange(p) for s in range(b)])
    return gather_rows(out, keep)


def decode(model: ModelParams, latent: Tensor, plan: MaskPlan) -> Tensor:
    """Reconstruct all patches from an encoded latent; returns (P, patch_dim)."""
    return decode_batch(model, latent, [plan])


def masked_mse_batch(pred: Tensor, targets: np.ndarray, plans: Sequence[MaskPlan]) -> Tensor:
    """Per-element mean squared error over every masked patch of the batch;
    equals the mean of per-sample masked losses (plans share one M)."""
    b, p, pd = targets.shape
    if pred.shape != (b * p, pd):
        raise ShapeError(f"prediction shape {pred.shape} != targets {(b * p, pd)}")
    m = plans[0].num_masked
    if m == 0:
        raise ContractError("masked_mse needs at least one masked patch")
    if any(plan.num_masked != m for plan in plans):
        raise ContractError("all plans in a batch must share one masked count")
    rows = np.concatenate([s * p + plan.masked for s, plan in enumerate(plans)])
    tgt = np.concatenate([targets[s][plan.masked] for s, plan in enumerate(plans)])
    diff = gather_rows(pred, rows) - constant(tgt)
    return sum_all(diff * diff) * (1.0 / (b * m * pd))


def masked_mse(pred: Tensor, target: np.ndarray, plan: MaskPlan) -> Tensor:
    """Per-element mean squared error over masked patches only; predictions
    at visible patches cannot influence the value."""
    if pred.shape != target.shape:
        raise ShapeError(f"prediction shape {pred.shape} != target shape {target.shape}")
    return masked_mse_batch(pred, target[None], [plan])


def reconstruct(
    model: ModelParams, h: np.ndarray, plan: MaskPlan, detach_latent: bool = False
) -> Tensor:
    latent = encode(model, h, plan)
    if detach_latent:
        latent = latent.detach()
    return decode(model, latent, plan)


def position_forward_batch(
    model: ModelParams, head: dict[str, Parameter], hs, detach_latent: bool = False
) -> Tensor:
    """Affine readout of each sample's class row under all-visible plans:
    (B, 2) meters."""
    cfg = model.config
    b = len(hs)
    plans = [all_visible_plan(cfg.num_patches)] * b
    latent = encode_batch(model, hs, plans)
    if detach_latent:
        latent = latent.detach()
    cls_rows = gather_rows(latent, np.arange(b) * (1 + cfg.num_patches))
    return matmul(cls_rows, head["pos_head_w"].value) + head["pos_head_b"].value


def position_forward(
    model: ModelParams, head: dict[str, Parameter], h: np.ndarray, detach_latent: bool = False
) -> Tensor:
    return position_forward_batch(model, head, [h], detach_latent)


def feedback_code_batch(
    model: ModelParams, bottleneck: dict[str, Parameter], hs, detach_latent: bool = False
) -> Tensor:
    """Compress fully visible encodings to codes (B, L): mean pool over all
    tokens of each sample (class included), then project down."""
    cfg = model.config
    plans = [all_visible_plan(cfg.num_patches)] * len(hs)
    latent = encode_batch(model, hs, plans)
    if detach_latent:
        latent = latent.detach()
    pooled = segment_mean_rows(latent, len(hs))
    return matmul(pooled, bottleneck["fb_down"].value)


def feedback_code(
    model: ModelParams, bottleneck: dict[str, Parameter], h: np.ndarray, detach_latent: bool = False
) -> Tensor:
    return feedback_code_batch(model, bottleneck, [h], detach_latent)


def feedback_decode_batch(
    model: ModelParams, bottleneck: dict[str, Parameter], codes: Tensor
) -> Tensor:
    """Expand codes (B, L) to decoder token sequences and predict all
    patches; returns (B*P, patch_dim)."""
    cfg = model.config
    b = codes.shape[0]
    p = cfg.num_patches
    seq = reshape(matmul(codes, bottleneck["fb_up"].value), (b * (p + 1), cfg.decoder_dim))
    seq = seq + tile_rows(model["dec_pos"].value, b)
    for i in range(cfg.decoder_depth):
        seq = _transformer_block(seq, model, f"dec{i}", cfg.decoder_heads, b)
    seq = layer_norm(seq, model["dec_norm_g"].value, model["dec_norm_b"].value, LN_EPS)
    out = matmul(seq, model["recon_w"].value) + model["recon_b"].value
    keep = np.concatenate([s * (p + 1) + 1 + np.arange(p) for s in range(b)])
    return gather_rows(out, keep)


def feedback_decode(model: ModelParams, bottleneck: dict[str, Parameter], code: Tensor) -> Tensor:
    return feedback_decode_batch(model, bottleneck, code)


def feedback_forward(
    model: ModelParams,
    bottleneck: dict[str, Parameter],
    h: np.ndarray,
    detach_latent: bool = False,
) -> tuple[Tensor, Tensor]:
    """Full compress-reconstruct round trip: (code (1, L), pred (P, patch_dim))."""
    code = feedback_code(model, bottleneck, h, detach_latent)
    return code, feedback_decode(model, bottleneck, code)


def pretrain_step(
    model: ModelParams,
    batch: list[np.ndarray],
    rng: np.random.Generator,
    optimizer: Adam,
    grad_clip: float = 0.0,
) -> float:
    """One optimizer update: fresh random plan per sample (drawn in batch
    order), masked-MSE averaged over the batch. ``grad_clip`` > 0 bounds the
    joint gradient norm before the update."""
    if not len(batch):
        raise ContractError("pretrain_step needs a non-empty batch")
    cfg = model.config
    optimizer.zero_grad()
    plans = [random_mask(cfg.num_patches, cfg.mask_ratio, rng) for _ in batch]
    targets = _stack_patches(batch, cfg.grid)
    pred = decode_batch(model, encode_batch(model, batch, plans), plans)
    loss = masked_mse_batch(pred, targets, plans)
    value = loss.item()
    if not np.isfinite(value):
        raise NumericError("non-finite pretraining loss")
    backward(loss)
    if grad_clip > 0:
        clip_gradient_norm(optimizer.params, grad_clip)
    optimizer.step()
    return value
