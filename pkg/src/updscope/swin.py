"""Deterministic numpy forward pass of a small shifted-window transformer.

The network follows the usual four-stage hierarchy: 4x4 patch partition and
linear embedding, pairs of (shifted) window attention blocks, and 2x2 patch
merging between stages. The classifier head is LayerNorm -> global average
pool -> linear, producing two logits (index 1 = disorder).

Relative position bias is deliberately left out and patch merging is a
plain bias-free linear map of the concatenated 2x2 neighbourhood.

All functions operate on float64 arrays with a leading batch axis
``(B, rows, cols, dim)``; single images are promoted transparently.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.special import erf

from .raster import FeatureGrid, ImageRaster

LN_EPS = 1e-5
INIT_STD = 0.02
_INV_SQRT2 = 1.0 / np.sqrt(2.0)


class ConfigError(ValueError):
    """Model configuration incompatible with the input or itself."""


@dataclass(frozen=True)
class SwinConfig:
    patch_size: int = 4
    embed_dim: int = 32
    depths: tuple[int, ...] = (2, 2, 2, 2)
    num_heads: tuple[int, ...] = (2, 4, 8, 16)
    window_size: int = 7
    mlp_ratio: float = 4.0
    num_classes: int = 2
    seed: int = 0
    in_chans: int = 3

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(int(d) for d in self.depths))
        object.__setattr__(self, "num_heads", tuple(int(h) for h in self.num_heads))
        if len(self.depths) != 4 or len(self.num_heads) != 4:
            raise ConfigError("depths and num_heads must both have 4 entries")
        if self.patch_size < 1 or self.embed_dim < 1 or self.window_size < 1:
            raise ConfigError("patch_size, embed_dim and window_size must be positive")
        if any(d < 1 for d in self.depths):
            raise ConfigError("every stage needs at least one block")
        for s, heads in enumerate(self.num_heads):
            if heads < 1 or self.stage_dim(s) % heads:
                raise ConfigError(
                    f"stage {s + 1} dim {self.stage_dim(s)} not divisible by {heads} heads"
                )
        if self.mlp_ratio <= 0 or int(round(self.embed_dim * self.mlp_ratio)) < 1:
            raise ConfigError("mlp_ratio must give a positive hidden width")
        if self.num_classes != 2:
            raise ConfigError("only binary classification is supported")

    def stage_dim(self, stage: int) -> int:
        """Channel count of stage ``stage`` (0-based): C * 2**stage."""
        return self.embed_dim * 2**stage

    def hidden_dim(self, stage: int) -> int:
        return int(round(self.stage_dim(stage) * self.mlp_ratio))

    @property
    def num_features(self) -> int:
        return self.stage_dim(3)

    def stage_grids(self, height: int, width: int) -> list[tuple[int, int]]:
        p = self.patch_size
        return [(height // (p * 2**s), width // (p * 2**s)) for s in range(4)]

    def check_input(self, height: int, width: int) -> None:
        """Raise ConfigError unless every stage grid is window-aligned."""
        unit = self.patch_size * 8
        if height % unit or width % unit:
            raise ConfigError(
                f"input {height}x{width} must be divisible by patch_size*8 = {unit}"
            )
        m = self.window_size
        for s, (rows, cols) in enumerate(self.stage_grids(height, width)):
            if rows % m or cols % m:
                raise ConfigError(
                    f"stage {s + 1} grid {rows}x{cols} not divisible by window size {m}"
                )


def _param_rng(seed: int, path: str) -> np.random.Generator:
    # counter-based generator keyed on (seed, parameter path)
    digest = hashlib.sha256(f"{seed}:{path}".encode()).digest()
    key = np.frombuffer(digest[:16], dtype="<u8")
    return np.random.Generator(np.random.Philox(key=key))


def trunc_normal(seed: int, path: str, shape: tuple[int, ...], std: float = INIT_STD) -> np.ndarray:
    """Normal(0, std) truncated to +-2 std, drawn by rejection."""
    rng = _param_rng(seed, path)
    n = int(np.prod(shape))
    out = rng.standard_normal(n)
    bad = np.abs(out) > 2.0
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > 2.0
    return (out * std).reshape(shape)


def param_shapes(cfg: SwinConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Every parameter name and shape, in the canonical serialization order."""
    shapes: list[tuple[str, tuple[int, ...]]] = []
    patch_len = cfg.patch_size * cfg.patch_size * cfg.in_chans
    shapes.append(("patch_embed.weight", (patch_len, cfg.embed_dim)))
    shapes.append(("patch_embed.bias", (cfg.embed_dim,)))
    for s in range(4):
        dim = cfg.stage_dim(s)
        if s > 0:
            shapes.append((f"stages.{s}.merge.weight", (4 * cfg.stage_dim(s - 1), dim)))
        hidden = cfg.hidden_dim(s)
        for b in range(cfg.depths[s]):
            pre = f"stages.{s}.blocks.{b}."
            shapes += [
                (pre + "norm1.weight", (dim,)),
                (pre + "norm1.bias", (dim,)),
                (pre + "attn.qkv.weight", (dim, 3 * dim)),
                (pre + "attn.qkv.bias", (3 * dim,)),
                (pre + "attn.proj.weight", (dim, dim)),
                (pre + "attn.proj.bias", (dim,)),
                (pre + "norm2.weight", (dim,)),
                (pre + "norm2.bias", (dim,)),
                (pre + "mlp.fc1.weight", (dim, hidden)),
                (pre + "mlp.fc1.bias", (hidden,)),
                (pre + "mlp.fc2.weight", (hidden, dim)),
                (pre + "mlp.fc2.bias", (dim,)),
            ]
    shapes.append(("norm.weight", (cfg.num_features,)))
    shapes.append(("norm.bias", (cfg.num_features,)))
    shapes.append(("head.weight", (cfg.num_features, cfg.num_classes)))
    shapes.append(("head.bias", (cfg.num_classes,)))
    return shapes


def _init_param(cfg: SwinConfig, name: str, shape: tuple[int, ...]) -> np.ndarray:
    if name.endswith(".bias"):
        return np.zeros(shape)
    if name.endswith("norm1.weight") or name.endswith("norm2.weight") or name == "norm.weight":
        return np.ones(shape)
    return trunc_normal(cfg.seed, name, shape)


@dataclass(frozen=True)
class SwinWeights:
    """Immutable parameter set for a SwinConfig."""

    config: SwinConfig
    params: Mapping[str, np.ndarray] = field(repr=False)

    def __post_init__(self):
        expected = dict(param_shapes(self.config))
        if set(expected) != set(self.params):
            missing = sorted(set(expected) - set(self.params))
            extra = sorted(set(self.params) - set(expected))
            raise ConfigError(f"parameter mismatch; missing={missing[:3]} extra={extra[:3]}")
        frozen = {}
        for name, shape in expected.items():
            arr = np.array(self.params[name], dtype=np.float64, copy=True)
            if arr.shape != shape:
                raise ConfigError(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"{name}: non-finite values")
            arr.setflags(write=False)
            frozen[name] = arr
        object.__setattr__(self, "params", frozen)

    @classmethod
    def initialize(cls, cfg: SwinConfig) -> SwinWeights:
        return cls(cfg, {name: _init_param(cfg, name, shape) for name, shape in param_shapes(cfg)})

    def sub(self, prefix: str) -> dict[str, np.ndarray]:
        """Parameters under ``prefix`` with the prefix stripped."""
        return {k[len(prefix):]: v for k, v in self.params.items() if k.startswith(prefix)}

    def with_head(self, weight: np.ndarray, bias: np.ndarray) -> SwinWeights:
        params = dict(self.params)
        params["head.weight"] = weight
        params["head.bias"] = bias
        return SwinWeights(self.config, params)


# ---------------------------------------------------------------------------
# numeric kernels


def layer_norm(x: np.ndarray, weight: np.ndarray, bias: np.ndarray, eps: float = LN_EPS) -> np.ndarray:
    mean = x.mean(axis=-1, keepdims=True)
    centred = x - mean
    var = np.mean(centred * centred, axis=-1, keepdims=True)
    return centred / np.sqrt(var + eps) * weight + bias


def gelu(x: np.ndarray) -> np.ndarray:
    """Exact GELU, 0.5 x (1 + erf(x / sqrt 2))."""
    out = erf(x * _INV_SQRT2)
    out += 1.0
    out *= x
    out *= 0.5
    return out


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    """Numerically stable softmax; -inf entries get exactly zero mass."""
    peak = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - peak)
    return e / e.sum(axis=axis, keepdims=True)


def _batched(x: np.ndarray) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ConfigError(f"expected (rows, cols, dim) or (B, rows, cols, dim), got {x.shape}")
    return x, False


# ---------------------------------------------------------------------------
# patch partition / merging


def patch_partition(images: np.ndarray, patch_size: int) -> np.ndarray:
    """Split ``(B, H, W, 3)`` images into flattened ``p*p*3`` patch vectors.

    Each vector lists the patch pixels row by row, RGB interleaved.
    """
    b, h, w, c = images.shape
    p = patch_size
    if h % p or w % p:
        raise ConfigError(f"image {h}x{w} not divisible by patch size {p}")
    x = images.reshape(b, h // p, p, w // p, p, c).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, h // p, w // p, p * p * c)


def patch_partition_embed(image, cfg: SwinConfig, weights: SwinWeights) -> np.ndarray:
    """Patch partition followed by the linear embedding to ``C`` channels."""
    if isinstance(image, ImageRaster):
        image = image.data
    imgs, single = _batched(image)
    patches = patch_partition(imgs, cfg.patch_size)
    out = patches @ weights.params["patch_embed.weight"] + weights.params["patch_embed.bias"]
    return out[0] if single else out


def patch_merge(grid: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """Concatenate each 2x2 neighbourhood (4C) and project it linearly.

    Concatenation order is (top-left, bottom-left, top-right, bottom-right).
    """
    x, single = _batched(grid)
    _, rows, cols, dim = x.shape
    if rows % 2 or cols % 2:
        raise ConfigError(f"patch merging needs even grid dims, got {rows}x{cols}")
    if weight.shape[0] != 4 * dim:
        raise ConfigError(f"merge weight expects {weight.shape[0]} inputs, grid gives {4 * dim}")
    cat = np.concatenate(
        [x[:, 0::2, 0::2], x[:, 1::2, 0::2], x[:, 0::2, 1::2], x[:, 1::2, 1::2]], axis=-1
    )
    out = cat @ weight
    return out[0] if single else out


# ---------------------------------------------------------------------------
# window attention


def window_partition(x: np.ndarray, m: int) -> np.ndarray:
    """``(B, R, C, D)`` -> ``(B * nW, m*m, D)``, windows in row-major order."""
    b, rows, cols, d = x.shape
    x = x.reshape(b, rows // m, m, cols // m, m, d).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b * (rows // m) * (cols // m), m * m, d)


def window_reverse(windows: np.ndarray, m: int, b: int, rows: int, cols: int) -> np.ndarray:
    d = windows.shape[-1]
    x = windows.reshape(b, rows // m, cols // m, m, m, d).transpose(0, 1, 3, 2, 4, 5)
    return x.reshape(b, rows, cols, d)


def shift_amounts(rows: int, cols: int, m: int, shifted: bool) -> tuple[int, int]:
    """Cyclic shift per axis: m // 2, or 0 where the axis holds a single window."""
    if not shifted:
        return 0, 0
    return (m // 2 if rows > m else 0), (m // 2 if cols > m else 0)


def _region_labels(n: int, m: int, shift: int) -> np.ndarray:
    # labels over the rolled axis; tokens that wrapped around get their own label
    labels = np.zeros(n, dtype=np.int64)
    if shift:
        labels[n - m:n - shift] = 1
        labels[n - shift:] = 2
    return labels


def attention_mask(rows: int, cols: int, m: int, shifts: tuple[int, int]) -> np.ndarray | None:
    """Additive ``(nW, m*m, m*m)`` mask (0 or -inf), or None if no shift."""
    if shifts == (0, 0):
        return None
    lr = _region_labels(rows, m, shifts[0])
    lc = _region_labels(cols, m, shifts[1])
    labels = (lr[:, None] * 3 + lc[None, :]).astype(np.float64)
    win = window_partition(labels[None, :, :, None], m)[..., 0]
    same = win[:, :, None] == win[:, None, :]
    return np.where(same, 0.0, -np.inf)


def window_token_index(rows: int, cols: int, m: int, shifted: bool) -> np.ndarray:
    """Original flat token index of each position in each window, ``(nW, m*m)``."""
    idx = np.arange(rows * cols, dtype=np.float64).reshape(1, rows, cols, 1)
    sr, sc = shift_amounts(rows, cols, m, shifted)
    idx = np.roll(idx, shift=(-sr, -sc), axis=(1, 2))
    return window_partition(idx, m)[..., 0].astype(np.int64)


def window_attention(
    grid: np.ndarray,
    shifted: bool,
    params: Mapping[str, np.ndarray],
    num_heads: int,
    window_size: int,
    return_attention: bool = False,
):
    """Multi-head self-attention restricted to ``M x M`` windows.

    With ``shifted`` the grid is rolled by ``-(M//2)`` on both axes before
    partitioning, wrapped-around regions are masked from each other, and
    the roll is undone afterwards.

    Args:
        grid: ``(rows, cols, dim)`` or ``(B, rows, cols, dim)`` tokens.
        params: mapping with ``qkv.weight``, ``qkv.bias``, ``proj.weight``,
            ``proj.bias``.
        return_attention: also return the ``(B * nW, heads, N, N)`` softmax
            weights, windows ordered as in :func:`window_token_index`.
    """
    x, single = _batched(grid)
    b, rows, cols, dim = x.shape
    m = window_size
    if rows % m or cols % m:
        raise ConfigError(f"grid {rows}x{cols} not divisible by window size {m}")
    if dim % num_heads:
        raise ConfigError(f"dim {dim} not divisible by {num_heads} heads")
    head_dim = dim // num_heads
    shifts = shift_amounts(rows, cols, m, shifted)
    if shifts != (0, 0):
        x = np.roll(x, shift=(-shifts[0], -shifts[1]), axis=(1, 2))

    windows = window_partition(x, m)
    bw, n, _ = windows.shape
    n_win = bw // b
    qkv = windows @ params["qkv.weight"] + params["qkv.bias"]
    qkv = qkv.reshape(bw, n, 3, num_heads, head_dim).transpose(2, 0, 3, 1, 4)
    q, k, v = qkv[0], qkv[1], qkv[2]
    scores = (q @ k.transpose(0, 1, 3, 2)) * (head_dim ** -0.5)
    mask = attention_mask(rows, cols, m, shifts)
    if mask is not None:
        scores = scores.reshape(b, n_win, num_heads, n, n) + mask[None, :, None]
        scores = scores.reshape(bw, num_heads, n, n)
    attn = softmax(scores, axis=-1)
    out = (attn @ v).transpose(0, 2, 1, 3).reshape(bw, n, dim)
    out = out @ params["proj.weight"] + params["proj.bias"]
    out = window_reverse(out, m, b, rows, cols)
    if shifts != (0, 0):
        out = np.roll(out, shift=shifts, axis=(1, 2))
    if single:
        out = out[0]
    return (out, attn) if return_attention else out


def swin_block(
    grid: np.ndarray,
    shifted: bool,
    params: Mapping[str, np.ndarray],
    num_heads: int,
    window_size: int,
) -> np.ndarray:
    """Pre-norm block: z = x + WMSA(LN(x)); out = z + MLP(LN(z))."""
    x, single = _batched(grid)
    attn_params = {k[len("attn."):]: v for k, v in params.items() if k.startswith("attn.")}
    h = layer_norm(x, params["norm1.weight"], params["norm1.bias"])
    z = x + window_attention(h, shifted, attn_params, num_heads, window_size)
    h = layer_norm(z, params["norm2.weight"], params["norm2.bias"])
    h = gelu(h @ params["mlp.fc1.weight"] + params["mlp.fc1.bias"])
    out = z + (h @ params["mlp.fc2.weight"] + params["mlp.fc2.bias"])
    return out[0] if single else out


# ---------------------------------------------------------------------------
# full forward


@dataclass(frozen=True)
class ForwardTrace:
    """Everything one forward pass produces for a single image.

    ``stages`` holds the raw output grid of each stage; ``final_grid`` is the
    last stage after the head LayerNorm, i.e. the tokens that are pooled
    into ``pooled`` and fed to the linear classifier.
    """

    stages: tuple[FeatureGrid, ...]
    final_grid: FeatureGrid
    pooled: np.ndarray
    logits: np.ndarray
    probabilities: np.ndarray

    @property
    def label(self) -> int:
        return int(np.argmax(self.probabilities))

    @property
    def p_upd(self) -> float:
        return float(self.probabilities[1])


@dataclass
class BatchTrace:
    stages: list[np.ndarray]
    final_grid: np.ndarray
    pooled: np.ndarray
    logits: np.ndarray
    probabilities: np.ndarray

    def item(self, i: int) -> ForwardTrace:
        return ForwardTrace(
            stages=tuple(FeatureGrid(s[i]) for s in self.stages),
            final_grid=FeatureGrid(self.final_grid[i]),
            pooled=self.pooled[i].copy(),
            logits=self.logits[i].copy(),
            probabilities=self.probabilities[i].copy(),
        )


def forward_batch(images: np.ndarray, weights: SwinWeights, keep_stages: bool = True) -> BatchTrace:
    """Run ``(B, H, W, 3)`` images through the network."""
    cfg = weights.config
    imgs = np.asarray(images, dtype=np.float64)
    if imgs.ndim != 4 or imgs.shape[-1] != cfg.in_chans:
        raise ConfigError(f"expected (B, H, W, {cfg.in_chans}) images, got {imgs.shape}")
    cfg.check_input(imgs.shape[1], imgs.shape[2])

    x = patch_partition_embed(imgs, cfg, weights)
    stages = []
    for s in range(4):
        if s > 0:
            x = patch_merge(x, weights.params[f"stages.{s}.merge.weight"])
        for blk in range(cfg.depths[s]):
            x = swin_block(
                x,
                shifted=bool(blk % 2),
                params=weights.sub(f"stages.{s}.blocks.{blk}."),
                num_heads=cfg.num_heads[s],
                window_size=cfg.window_size,
            )
        if keep_stages or s == 3:
            stages.append(x)

    final = layer_norm(x, weights.params["norm.weight"], weights.params["norm.bias"])
    pooled = final.mean(axis=(1, 2))
    logits = pooled @ weights.params["head.weight"] + weights.params["head.bias"]
    probs = softmax(logits, axis=-1)
    return BatchTrace(stages, final, pooled, logits, probs)


def forward(image, weights: SwinWeights) -> ForwardTrace:
    """Classify one image, returning the full trace (label 1 = disorder)."""
    data = image.data if isinstance(image, ImageRaster) else np.asarray(image, dtype=np.float64)
    return forward_batch(data[None], weights).item(0)


class SwinClassifier:
    """Callable model wrapper used by the explainer and the pipeline.

    ``predict_proba`` evaluates images in fixed-size chunks so memory stays
    bounded; chunking is deterministic, which keeps results reproducible.
    """

    def __init__(self, weights: SwinWeights, chunk_size: int = 16):
        self.weights = weights
        self.config = weights.config
        self.chunk_size = chunk_size

    def trace(self, image) -> ForwardTrace:
        return forward(image, self.weights)

    def predict_proba(self, images: np.ndarray) -> np.ndarray:
        imgs = np.asarray(images, dtype=np.float64)
        out = [
            forward_batch(imgs[i:i + self.chunk_size], self.weights, keep_stages=False).probabilities
            for i in range(0, len(imgs), self.chunk_size)
        ]
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.config.num_classes))

    def features(self, images: np.ndarray) -> np.ndarray:
        """Pooled head-input features for ``(B, H, W, 3)`` images."""
        imgs = np.asarray(images, dtype=np.float64)
        out = [
            forward_batch(imgs[i:i + self.chunk_size], self.weights, keep_stages=False).pooled
            for i in range(0, len(imgs), self.chunk_size)
        ]
        return np.concatenate(out, axis=0) if out else np.zeros((0, self.config.num_features))


# ---------------------------------------------------------------------------
# complexity accounting


def complexity_msa(h: int, w: int, c: int) -> int:
    """Global self-attention cost: 4hwC^2 + 2(hw)^2 C."""
    h, w, c = _positive_ints(h, w, c)
    return 4 * h * w * c * c + 2 * (h * w) ** 2 * c


def complexity_wmsa(h: int, w: int, c: int, m: int) -> int:
    """Window self-attention cost: 4hwC^2 + 2 M^2 hw C."""
    h, w, c, m = _positive_ints(h, w, c, m)
    return 4 * h * w * c * c + 2 * m * m * h * w * c


def _positive_ints(*values) -> tuple[int, ...]:
    out = []
    for v in values:
        if isinstance(v, bool) or int(v) != v or v < 1:
            raise ValueError(f"expected a positive integer, got {v!r}")
        out.append(int(v))
    return tuple(out)
