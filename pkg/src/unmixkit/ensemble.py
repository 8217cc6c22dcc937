"""Bayesian model averaging over NNLS fits, with optional pairwise interaction terms.

The model space is every singleton plus seeded random subsets of sizes
``2..max_subset_size``. Each subset is fitted by NNLS on its columns and
weighted by ``exp(-BIC / 2)``; abundances are the weighted average of the
member fits.
"""
from __future__ import annotations

import dataclasses
import itertools
import math
import time
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .metrics import rmse
from .solvers import Technique, build_model, nnls, _design
from .spectra import SpectralLibrary

RSS_FLOOR = 1e-300
ENSEMBLE_SUPPORT_TOL = 1e-6
# Sizes with at most this many subsets are sampled from an explicit pool.
_POOL_LIMIT = 20_000


@dataclass(frozen=True)
class BmaConfig:
    max_subset_size: int = 5
    n_models: int = 10_000
    seed: int = 0
    top_t_for_pairs: int = 15
    weight_floor: float = 1e-12

    def __post_init__(self):
        if self.max_subset_size < 1:
            raise ConfigError("max_subset_size must be >= 1")
        if self.n_models < 1:
            raise ConfigError("n_models must be >= 1")
        if self.top_t_for_pairs < 0 or self.weight_floor < 0:
            raise ConfigError("top_t_for_pairs and weight_floor must be >= 0")


@dataclass(frozen=True, eq=False)
class WeightedModel:
    support: tuple
    abundances: np.ndarray
    bic: float
    weight: float


def bic_of_fit(y, S, support, abundances):
    """BIC proxy ``m ln(RSS/m) + k ln m`` of a fit on ``S[:, support]``."""
    y = np.asarray(y, dtype=np.float64)
    m = y.size
    support = list(support)
    resid = y - S[:, support] @ np.asarray(abundances, dtype=np.float64) if support else y
    rss = max(float(resid @ resid), RSS_FLOOR)
    return m * math.log(rss / m) + len(support) * math.log(m)


def sample_model_space(n, max_subset_size, n_models, seed):
    """Deterministic list of subsets (sorted index tuples) forming the ensemble.

    All singletons come first. The remaining ``n_models - n`` slots are filled
    with distinct subsets of size 2..max_subset_size: every such subset when
    they all fit, otherwise draws that pick a size uniformly among sizes not
    yet exhausted and then a subset of that size uniformly.
    """
    subsets = [(i,) for i in range(n)]
    want = n_models - n
    sizes = list(range(2, min(max_subset_size, n) + 1))
    if want <= 0 or not sizes:
        return subsets
    counts = {s: math.comb(n, s) for s in sizes}
    if want >= sum(counts.values()):
        for s in sizes:
            subsets.extend(itertools.combinations(range(n), s))
        return subsets

    rng = np.random.default_rng(seed)
    pools = {}
    seen = set()
    open_sizes = list(sizes)
    while want > 0:
        s = open_sizes[int(rng.integers(len(open_sizes)))]
        if counts[s] <= _POOL_LIMIT:
            pool = pools.get(s)
            if pool is None:
                pool = pools[s] = list(itertools.combinations(range(n), s))
            pick = int(rng.integers(len(pool)))
            subset = pool[pick]
            pool[pick] = pool[-1]
            pool.pop()
            if not pool:
                open_sizes.remove(s)
        else:
            subset = tuple(sorted(int(i) for i in rng.choice(n, size=s, replace=False)))
            if subset in seen:
                continue
        seen.add(subset)
        subsets.append(subset)
        want -= 1
    return subsets


def _fit_subsets(S, y, subsets):
    """NNLS coefficients for every subset, in input order.

    Subsets are fitted in batches of equal size by unconstrained least squares
    (QR); fits that come out strictly positive and well conditioned are already
    the NNLS answer, the rest go through Lawson-Hanson.
    """
    coefs = [None] * len(subsets)
    by_size = {}
    for pos, sub in enumerate(subsets):
        by_size.setdefault(len(sub), []).append(pos)
    for k, positions in by_size.items():
        idx = np.array([subsets[p] for p in positions])
        blocks = np.transpose(S[:, idx], (1, 0, 2))  # (batch, m, k)
        Q, R = np.linalg.qr(blocks)
        diag = np.abs(np.diagonal(R, axis1=1, axis2=2))
        scale = np.linalg.norm(blocks, axis=1)
        ok = np.all(diag > 1e-10 * np.maximum(scale, 1e-300), axis=1)
        sol = np.zeros((len(positions), k))
        if ok.any():
            rhs = np.einsum("bmk,m->bk", Q[ok], y)
            sol[ok] = np.linalg.solve(R[ok], rhs[..., None])[..., 0]
        done = ok & np.all(sol > 0, axis=1)
        for row, p in enumerate(positions):
            if done[row]:
                coefs[p] = sol[row]
            else:
                coefs[p] = nnls(blocks[row], y)
    return coefs


def bma_ensemble(S, y, cfg):
    """Fit the whole model space; returns ``(abundances, subsets, coefs, bics, weights)``."""
    n = S.shape[1]
    subsets = sample_model_space(n, cfg.max_subset_size, cfg.n_models, cfg.seed)
    coefs = _fit_subsets(S, y, subsets)
    bics = np.array([bic_of_fit(y, S, sub, c) for sub, c in zip(subsets, coefs)])
    w = np.exp(-0.5 * (bics - bics.min()))
    w = np.maximum(w, cfg.weight_floor)
    w /= w.sum()
    a = np.zeros(n)
    for sub, c, wm in zip(subsets, coefs, w):
        a[list(sub)] += wm * c
    return a, subsets, coefs, bics, w


def weighted_models(model):
    """Ensemble members of a BMA result as WeightedModel records."""
    d = model.diagnostics
    return [
        WeightedModel(tuple(sub), np.asarray(c), float(b), float(w))
        for sub, c, b, w in zip(d["subsets"], d["coefs"], d["bics"], d["weights"])
    ]


def unmix_bma(y, lib, cfg=BmaConfig()):
    t0 = time.perf_counter()
    y, S = _design(y, lib)
    a, subsets, coefs, bics, w = bma_ensemble(S, y, cfg)
    return build_model(
        Technique.BMA, y, S, a, t0, support_mask=a >= ENSEMBLE_SUPPORT_TOL,
        subsets=subsets, coefs=coefs, bics=bics, weights=w,
    )


def build_quadratic_features(lib, pairs):
    """Append one interaction column ``s_i * s_j`` per pair to the library.

    Each product is rescaled to the mean Euclidean norm of its two parents;
    an all-zero product stays zero.
    """
    n = lib.n_spectra
    seen = set()
    cols, names = [], []
    for pair in pairs:
        i, j = (int(v) for v in pair)
        if not (0 <= i <= j < n):
            raise DataError(f"invalid interaction pair ({i}, {j}) for a library of {n} spectra")
        if (i, j) in seen:
            raise DataError(f"duplicate interaction pair ({i}, {j})")
        seen.add((i, j))
        si, sj = lib.columns[:, i], lib.columns[:, j]
        prod = si * sj
        norm = np.linalg.norm(prod)
        if norm > 0:
            prod = prod * (0.5 * (np.linalg.norm(si) + np.linalg.norm(sj)) / norm)
        cols.append(prod)
        names.append(f"{lib.names[i]} × {lib.names[j]}")
    if not cols:
        return lib
    return SpectralLibrary(lib.names + tuple(names), lib.grid, np.column_stack([lib.columns] + cols))


def unmix_bma_q(y, lib, cfg=BmaConfig()):
    """Two-stage BMA: plain ensemble, then an ensemble with pairwise interaction columns.

    Interactions are built among the ``top_t_for_pairs`` strongest stage-one
    materials. Material abundances come from the linear columns; interaction
    coefficients are returned in ``diagnostics["interactions"]`` keyed by pair.
    """
    t0 = time.perf_counter()
    y, S = _design(y, lib)
    n = S.shape[1]
    first = bma_ensemble(S, y, cfg)
    stage1 = first[0]
    kept = np.flatnonzero(stage1 >= ENSEMBLE_SUPPORT_TOL)
    order = sorted(kept.tolist(), key=lambda i: (-stage1[i], i))
    top = sorted(order[: cfg.top_t_for_pairs])
    pairs = list(itertools.combinations(top, 2))
    if not pairs:
        a, subsets, coefs, bics, w = first
        return build_model(
            Technique.BMA_Q, y, S, a, t0, support_mask=a >= ENSEMBLE_SUPPORT_TOL,
            subsets=subsets, coefs=coefs, bics=bics, weights=w, interactions={}, pairs=[],
        )
    aug = build_quadratic_features(lib, pairs)
    a_aug, subsets, coefs, bics, w = bma_ensemble(aug.columns, y, cfg)
    a_aug[a_aug < ENSEMBLE_SUPPORT_TOL] = 0.0
    material = a_aug[:n]
    interactions = {pair: float(v) for pair, v in zip(pairs, a_aug[n:])}
    model = build_model(
        Technique.BMA_Q, y, S, material, t0, support_mask=material >= ENSEMBLE_SUPPORT_TOL,
        subsets=subsets, coefs=coefs, bics=bics, weights=w, interactions=interactions, pairs=pairs,
    )
    # the prediction includes the interaction terms
    recon = aug.columns @ a_aug
    return dataclasses.replace(model, reconstruction=recon, rmse=rmse(y, recon))
