"""Quick oracle checks runnable without a test framework (``updscope selftest``)."""
from __future__ import annotations

import numpy as np

from .metrics import RankingJudgment, image_rank_metrics
from .perception import q_formula
from .raster import bilinear_resize, minmax_normalize
from .scorecam import ExplainerConfig, ScoreCAM
from .swin import (
    SwinClassifier,
    SwinConfig,
    SwinWeights,
    complexity_msa,
    complexity_wmsa,
    shift_amounts,
    window_attention,
    window_token_index,
)
from .trainer import cross_entropy


def _check_complexity():
    h = w = 56
    c, m = 96, 7
    brute_msa = 4 * h * w * c * c + 2 * (h * w) * (h * w) * c
    brute_wmsa = 4 * h * w * c * c + 2 * (m * m) * (h * w) * c
    ok = complexity_msa(h, w, c) == brute_msa and complexity_wmsa(h, w, c, m) == brute_wmsa
    return ok, f"msa={complexity_msa(h, w, c)} wmsa={complexity_wmsa(h, w, c, m)}"


def _check_resize():
    rng = np.random.default_rng(0)
    x = rng.random((5, 7))
    same = np.allclose(bilinear_resize(x, 5, 7), x)
    const = np.allclose(bilinear_resize(np.full((3, 3), 2.5), 12, 9), 2.5)
    return same and const, "identity and constant preserved"


def _check_minmax():
    y = minmax_normalize(np.array([[1.0, 3.0], [2.0, 5.0]]))
    ok = y.min() == 0.0 and y.max() == 1.0 and not minmax_normalize(np.ones((2, 2))).any()
    return ok, "range [0, 1], constant -> 0"


def _check_shift_mask(seed):
    """Masked attention weights vanish exactly between wrapped regions."""
    rows = cols = 8
    m, c, heads = 4, 8, 2
    rng = np.random.default_rng(seed)
    params = {
        "qkv.weight": rng.normal(size=(c, 3 * c)) * 0.3,
        "qkv.bias": np.zeros(3 * c),
        "proj.weight": np.eye(c),
        "proj.bias": np.zeros(c),
    }
    grid = rng.normal(size=(1, rows, cols, c))
    _, attn = window_attention(grid, True, params, heads, m, return_attention=True)
    index = window_token_index(rows, cols, m, True)
    r, q = np.divmod(index, cols)
    # tokens share a region iff they are within one window of each other in
    # the unrolled grid, on both axes
    near = (np.abs(r[:, :, None] - r[:, None, :]) < m) & (np.abs(q[:, :, None] - q[:, None, :]) < m)
    far = np.broadcast_to(~near[:, None], attn.shape)
    zeros_where_far = bool(np.all(attn[far] == 0.0))
    positive_where_near = bool(np.all(attn[~far] > 0.0))
    ok = zeros_where_far and positive_where_near and shift_amounts(rows, cols, m, True) == (2, 2)
    return ok, "cross-region attention is exactly zero"


def _check_cross_entropy():
    z = np.array([2.0, -1.0])
    naive = -np.log(np.exp(z[1]) / np.exp(z).sum())
    big = cross_entropy(np.array([1000.0, 0.0]), 1)
    return bool(np.isclose(cross_entropy(z, 1), naive) and np.isclose(big, 1000.0)), "matches naive, stable"


def _check_rank_metrics():
    perfect = image_rank_metrics(RankingJudgment((3, 5, 7), (3, 5, 7)), 3)
    disjoint = image_rank_metrics(RankingJudgment((1, 2), (3, 4)), 2)
    ok = np.allclose(perfect, 1.0) and np.allclose(disjoint, 0.0)
    return ok, f"perfect={perfect} disjoint={disjoint}"


def _check_q_formula():
    ok = q_formula(1.0, [1.0], []) == 10.0 and q_formula(0.0, [], [1.0]) == 0.0
    return ok, "extremes map to 10 and 0"


def _check_scorecam(seed):
    cfg = SwinConfig(embed_dim=8, depths=(1, 1, 1, 1), num_heads=(1, 2, 2, 4), window_size=2, seed=seed)
    model = SwinClassifier(SwinWeights.initialize(cfg))
    image = np.random.default_rng(seed).random((64, 64, 3))
    amap = ScoreCAM(ExplainerConfig(channel_budget=4)).explain(image, model)
    a = amap.data
    ok = a.shape == (64, 64) and a.min() >= 0.0 and a.max() <= 1.0 and np.all(np.isfinite(a))
    return ok, f"map {a.shape} in [{a.min():.3f}, {a.max():.3f}]"


CHECKS = [
    ("complexity", lambda seed: _check_complexity()),
    ("bilinear_resize", lambda seed: _check_resize()),
    ("minmax_normalize", lambda seed: _check_minmax()),
    ("shifted_window_mask", _check_shift_mask),
    ("cross_entropy", lambda seed: _check_cross_entropy()),
    ("ranking_metrics", lambda seed: _check_rank_metrics()),
    ("q_formula", lambda seed: _check_q_formula()),
    ("scorecam", _check_scorecam),
]


def run_all(seed: int = 0) -> list[tuple[str, bool, str]]:
    results = []
    for name, check in CHECKS:
        try:
            ok, detail = check(seed)
        except Exception as exc:  # report, keep going
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        results.append((name, bool(ok), detail))
    return results
