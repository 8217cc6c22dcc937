"""Single-model unmixing techniques under the linear mixing model ``y = S a + e``.

Every ``unmix_*`` function takes a pixel spectrum ``y`` (length ``n_bands``),
a :class:`~unmixkit.spectra.SpectralLibrary` and a :class:`SolverConfig`, and
returns an :class:`AbundanceModel`. None of the fits carry an intercept.
"""
from __future__ import annotations

import enum
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import linalg
from .errors import ConfigError, DimensionError, NNLSIterationError, NotSPDError, PValueError
from .metrics import rmse

SUPPORT_TOL = 1e-12
# Residual norms below ZERO_RESIDUAL * max(1, ||y||) count as an exact fit.
ZERO_RESIDUAL = 1e-10
# Candidates whose component outside the current model span is below this
# fraction of their norm are treated as collinear and never enter FSR.
COLLINEAR_TOL = 1e-8
BSR_SCREEN_LAMBDA = 1e-6


class Technique(str, enum.Enum):
    OLS = "ols"
    NNLS = "nnls"
    RIDGE = "ridge"
    LASSO = "lasso"
    FSR = "fsr"
    BSR = "bsr"
    BMA = "bma"
    BMA_Q = "bma-q"

    def __str__(self):
        return self.value

    @classmethod
    def parse(cls, text):
        try:
            return cls(str(text).strip().lower())
        except ValueError:
            valid = ", ".join(t.value for t in cls)
            raise ConfigError(f"unknown technique {text!r}; choose from {valid}") from None


@dataclass(frozen=True)
class SolverConfig:
    ridge_lambda: float = 1.0
    lasso_lambda: float = 1e-3
    lasso_positive: bool = True
    lasso_max_iter: int = 10_000
    lasso_tol: float = 1e-8
    p_enter: float = 0.05
    p_remove: float = 0.10
    stepwise_max_size: int = 25
    rcond: float = linalg.DEFAULT_RCOND

    def __post_init__(self):
        if self.ridge_lambda < 0 or self.lasso_lambda < 0:
            raise ConfigError("regularization strengths must be >= 0")
        if self.lasso_tol <= 0 or self.rcond <= 0:
            raise ConfigError("tolerances must be > 0")
        if self.lasso_max_iter < 1 or self.stepwise_max_size < 0:
            raise ConfigError("iteration and size limits must be positive")
        # 0 and 1 are accepted as the degenerate "never enter" / "never remove" settings.
        if not (0 <= self.p_enter <= 1 and 0 <= self.p_remove <= 1):
            raise ConfigError("p_enter and p_remove must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class AbundanceModel:
    """One unmixing result.

    ``abundances`` is aligned with the library columns; ``support`` lists the
    indices kept after the technique's zeroing rule, so ``model_size`` is its
    length. ``reconstruction`` is the predicted spectrum.
    """

    technique: Technique
    support: tuple
    abundances: np.ndarray
    reconstruction: np.ndarray
    rmse: float
    model_size: int
    elapsed: float = 0.0
    converged: bool = True
    diagnostics: dict = field(default_factory=dict)

    @property
    def nonnegative(self):
        return bool(np.all(self.abundances >= -SUPPORT_TOL))


def _design(y, lib):
    y = np.asarray(y, dtype=np.float64)
    if y.ndim != 1:
        raise DimensionError(f"pixel must be a 1-D spectrum, got shape {y.shape}")
    if y.size != lib.n_bands:
        raise DimensionError(f"pixel has {y.size} bands but library has {lib.n_bands}")
    return y, lib.columns


def _zero_tol(y):
    return ZERO_RESIDUAL * max(1.0, float(np.linalg.norm(y)))


def build_model(technique, y, S, abundances, t0, support_mask=None, converged=True, **diagnostics):
    """Package a coefficient vector into an AbundanceModel.

    ``support_mask`` defaults to ``|a| > SUPPORT_TOL``; entries outside it are
    set to exactly zero before the reconstruction is formed.
    """
    a = np.array(abundances, dtype=np.float64)
    if support_mask is None:
        support_mask = np.abs(a) > SUPPORT_TOL
    a[~support_mask] = 0.0
    recon = S @ a
    support = tuple(int(i) for i in np.flatnonzero(support_mask))
    return AbundanceModel(
        technique=Technique(technique),
        support=support,
        abundances=a,
        reconstruction=recon,
        rmse=rmse(y, recon),
        model_size=len(support),
        elapsed=time.perf_counter() - t0,
        converged=converged,
        diagnostics=diagnostics,
    )


# ---------------------------------------------------------------------------
# Ordinary and non-negative least squares
# ---------------------------------------------------------------------------


def unmix_ols(y, lib, cfg=SolverConfig()):
    t0 = time.perf_counter()
    y, S = _design(y, lib)
    a = linalg.lstsq_min_norm(S, y, cfg.rcond)
    return build_model(Technique.OLS, y, S, a, t0, rank=linalg.numerical_rank(S, cfg.rcond))


def nnls(A, b, max_iter=None, tol=None):
    """Lawson-Hanson active-set solution of ``min ||A x - b|| s.t. x >= 0``.

    Stops when every inactive gradient entry of ``A.T (b - A x)`` is at most
    ``tol`` (default ``1e-8 * max|A.T b|``). Raises NNLSIterationError after
    ``max_iter`` (default ``3 * n``) outer iterations.
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    m, n = A.shape
    if b.shape != (m,):
        raise DimensionError(f"matrix has {m} rows but right-hand side has shape {b.shape}")
    if max_iter is None:
        max_iter = 3 * n
    Atb = A.T @ b
    if tol is None:
        tol = 1e-8 * (float(np.max(np.abs(Atb))) if n else 0.0)

    x = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    blocked = np.zeros(n, dtype=bool)
    w = Atb.copy()
    outer = 0
    while True:
        free = ~passive & ~blocked
        if not free.any():
            break
        cand = np.flatnonzero(free)
        j = int(cand[np.argmax(w[cand])])
        if w[j] <= tol:
            break
        if outer >= max_iter:
            raise NNLSIterationError(f"NNLS did not converge in {max_iter} iterations", best=x.copy())
        outer += 1
        x_before = x.copy()
        passive[j] = True
        while True:
            P = np.flatnonzero(passive)
            z = np.linalg.lstsq(A[:, P], b, rcond=None)[0]
            if np.all(z > 0):
                x[:] = 0.0
                x[P] = z
                break
            xp = x[P]
            neg = z <= 0
            ratios = xp[neg] / (xp[neg] - z[neg])
            k = int(np.argmin(ratios))
            alpha = ratios[k]
            x[P] = xp + alpha * (z - xp)
            x[P[np.flatnonzero(neg)[k]]] = 0.0
            leaving = P[x[P] <= 0]
            x[leaving] = 0.0
            passive[leaving] = False
        if not passive[j] and np.array_equal(x, x_before):
            # j cannot enter without a zero step; skip it until x moves
            blocked[j] = True
        else:
            blocked[:] = False
        w = A.T @ (b - A @ x)
    return x


def unmix_nnls(y, lib, cfg=SolverConfig()):
    t0 = time.perf_counter()
    y, S = _design(y, lib)
    a = nnls(S, y)
    return build_model(Technique.NNLS, y, S, a, t0, support_mask=a > 0)


# ---------------------------------------------------------------------------
# Ridge and lasso
# ---------------------------------------------------------------------------


def ridge_coefficients(S, y, lam, rcond=linalg.DEFAULT_RCOND):
    """Solve ``(S.T S + lam I) a = S.T y``; returns ``(a, fell_back)``.

    When the system is not numerically SPD (only possible near ``lam = 0``)
    the minimum-norm least-squares solution is returned instead.
    """
    n = S.shape[1]
    A = linalg.gram(S)
    A[np.diag_indices(n)] += lam
    try:
        return linalg.spd_solve(A, S.T @ y), False
    except NotSPDError:
        return linalg.lstsq_min_norm(S, y, rcond), True


def unmix_ridge(y, lib, cfg=SolverConfig()):
    t0 = time.perf_counter()
    y, S = _design(y, lib)
    a, fell_back = ridge_coefficients(S, y, cfg.ridge_lambda, cfg.rcond)
    return build_model(Technique.RIDGE, y, S, a, t0, lstsq_fallback=fell_back, ridge_lambda=cfg.ridge_lambda)


def soft_threshold(z, lam):
    return np.sign(z) * np.maximum(np.abs(z) - lam, 0.0)


def lasso_objective(S, y, a, lam):
    r = y - S @ a
    return 0.5 * float(r @ r) + lam * float(np.sum(np.abs(a)))


def lasso_cd(S, y, lam, positive=True, max_iter=10_000, tol=1e-8, callback=None):
    """Cyclic coordinate descent for ``0.5 ||y - S a||^2 + lam ||a||_1``.

    Works in covariance form (Gram matrix and correlation vector).
    Convergence means a full sweep moved no coordinate by more than ``tol``;
    ``max_iter`` caps the number of sweeps. ``callback(sweep, a)`` is called
    after every sweep with a copy of the iterate.

    Nearly collinear columns make plain CD crawl, so after every sweep an
    active-set descent step is taken on the current nonzero set, never past
    a sign change. Each such step lowers the objective.

    Returns ``(a, n_sweeps, converged)``.
    """
    S = np.asarray(S, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    G = linalg.gram(S)
    n = G.shape[0]
    c = S.T @ y
    a = np.zeros(n)
    q = c.copy()  # S^T (y - S a), kept current as a changes
    diag = np.diag(G).tolist()
    coords = [j for j in range(n) if diag[j] > 0]

    def sweep(indices):
        nonlocal q
        biggest = 0.0
        for j in indices:
            d = diag[j]
            old = a[j]
            rho = q[j] + d * old
            if positive:
                new = (rho - lam) / d if rho > lam else 0.0
            elif rho > lam:
                new = (rho - lam) / d
            elif rho < -lam:
                new = (rho + lam) / d
            else:
                new = 0.0
            if new != old:
                delta = new - old
                q -= delta * G[j]
                a[j] = new
                if abs(delta) > biggest:
                    biggest = abs(delta)
        return biggest

    def polish():
        # Active-set descent on the current sign pattern. A nonsingular face
        # heads for its optimum; a singular one (more nonzeros than rank)
        # moves along a null direction that lowers the l1 term. Either way
        # the step stops where the first coefficient reaches zero.
        nonlocal q
        idx = np.flatnonzero(a)
        while idx.size:
            signs = np.sign(a[idx])
            cur = a[idx]
            G_face = G[np.ix_(idx, idx)]
            try:
                direction = linalg.spd_solve(G_face, c[idx] - lam * signs) - cur
                t_best = 1.0
            except NotSPDError:
                _, vecs = np.linalg.eigh(G_face)
                direction = vecs[:, 0]
                slope = direction @ (G_face @ cur - c[idx] + lam * signs)
                if slope > 0:
                    direction, slope = -direction, -slope
                curvature = direction @ (G_face @ direction)
                if slope == 0.0:
                    break
                t_best = -slope / curvature if curvature > 0 else np.inf
            shrinking = direction * signs < 0
            t_cross = np.full(idx.size, np.inf)
            t_cross[shrinking] = -cur[shrinking] / direction[shrinking]
            k = int(np.argmin(t_cross))
            if t_best < t_cross[k]:
                a[idx] = cur + t_best * direction
                break
            if not np.isfinite(t_cross[k]):
                break
            a[idx] = cur + t_cross[k] * direction
            a[idx[k]] = 0.0
            a[idx[np.sign(a[idx]) != signs]] = 0.0
            idx = np.flatnonzero(a)
        q = c - G @ a

    sweeps = 0
    converged = False
    while sweeps < max_iter:
        change = sweep(coords)
        sweeps += 1
        if callback is not None:
            callback(sweeps, a.copy())
        if change <= tol:
            converged = True
            break
        polish()
    return a, sweeps, converged


def unmix_lasso(y, lib, cfg=SolverConfig()):
    t0 = time.perf_counter()
    y, S = _design(y, lib)
    a, sweeps, converged = lasso_cd(
        S, y, cfg.lasso_lambda, positive=cfg.lasso_positive, max_iter=cfg.lasso_max_iter, tol=cfg.lasso_tol
    )
    return build_model(
        Technique.LASSO, y, S, a, t0, support_mask=a != 0, converged=converged,
        sweeps=sweeps, lasso_lambda=cfg.lasso_lambda,
    )


# ---------------------------------------------------------------------------
# Stepwise regression
# ---------------------------------------------------------------------------


def _two_sided_p(t, df):
    return 2.0 * stats.t.sf(np.abs(t), df)


def ols_t_statistics(y, S_active):
    """OLS fit with per-coefficient t-statistics.

    Returns ``(coefficients, t, df, rss)``. For an exact fit the statistic of
    every coefficient that contributes to the fit is ``inf`` and that of every
    numerically-zero coefficient is ``0``.
    """
    y = np.asarray(y, dtype=np.float64)
    S = np.asarray(S_active, dtype=np.float64)
    if S.ndim != 2 or S.shape[0] != y.size:
        raise DimensionError(f"design shape {S.shape} does not match pixel length {y.size}")
    m, k = S.shape
    if m <= k:
        raise PValueError(f"p-values undefined with {m} bands and {k} columns; need more bands than columns")
    coef = linalg.lstsq_min_norm(S, y)
    resid = y - S @ coef
    rss = float(resid @ resid)
    df = m - k
    if math.sqrt(rss) < _zero_tol(y):
        contrib = np.abs(coef) * np.linalg.norm(S, axis=0)
        t = np.where(contrib > ZERO_RESIDUAL * max(float(np.linalg.norm(y)), 1e-300), np.inf, 0.0)
        return coef, t, df, 0.0
    cov_diag = np.diag(np.linalg.pinv(linalg.gram(S)))
    se = np.sqrt(np.maximum(rss / df * cov_diag, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(se > 0, coef / se, 0.0)
    return coef, t, df, rss


def stepwise_pvalues(y, S_active):
    """Two-sided OLS coefficient p-values with ``m - k`` degrees of freedom."""
    _, t, df, _ = ols_t_statistics(y, S_active)
    return _two_sided_p(t, df)


def _ols_refit(technique, y, S, chosen, t0, **diagnostics):
    chosen = sorted(chosen)  # canonical column order, so the refit is reproducible from the support alone
    a = np.zeros(S.shape[1])
    if chosen:
        a[chosen] = linalg.lstsq_min_norm(S[:, chosen], y)
    mask = np.zeros(S.shape[1], dtype=bool)
    mask[chosen] = True
    mask &= np.abs(a) > SUPPORT_TOL
    return build_model(technique, y, S, a, t0, support_mask=mask, **diagnostics)


def _candidate_t(y, S, selected):
    """|t| of each column when added to the model ``selected`` (candidate in context).

    Uses the Frisch-Waugh-Lovell identity: the candidate coefficient and its
    standard error come from the candidate and the pixel residualized against
    the current model. Ineligible columns get ``-1``. Returns ``(abs_t, df)``.
    """
    m, n = S.shape
    k = len(selected)
    if selected:
        Q, _ = np.linalg.qr(S[:, selected])
        r = y - Q @ (Q.T @ y)
        R = S - Q @ (Q.T @ S)
    else:
        r = y.copy()
        R = S.copy()
    df = m - (k + 1)
    nc = np.einsum("ij,ij->j", R, R)
    col_norm2 = np.einsum("ij,ij->j", S, S)
    eligible = nc > (COLLINEAR_TOL ** 2) * col_norm2
    eligible[selected] = False
    abs_t = np.full(n, -1.0)
    if not eligible.any():
        return abs_t, df
    idx = np.flatnonzero(eligible)
    Rc = R[:, idx]
    b = (Rc.T @ r) / nc[idx]
    resid = r[:, None] - Rc * b
    rss = np.einsum("ij,ij->j", resid, resid)
    exact = np.sqrt(rss) < _zero_tol(y)
    with np.errstate(divide="ignore", invalid="ignore"):
        se = np.sqrt(rss / df / nc[idx])
        t = np.abs(b) / se
    t[exact] = np.where(np.abs(b[exact]) > 0, np.inf, 0.0)
    abs_t[idx] = t
    return abs_t, df


def unmix_fsr(y, lib, cfg=SolverConfig()):
    t0 = time.perf_counter()
    y, S = _design(y, lib)
    m = S.shape[0]
    selected = []
    zero_tol = _zero_tol(y)
    rounds = 0
    while len(selected) < cfg.stepwise_max_size and len(selected) + 1 < m:
        if selected:
            coef = linalg.lstsq_min_norm(S[:, selected], y)
            resid_norm = np.linalg.norm(y - S[:, selected] @ coef)
        else:
            resid_norm = np.linalg.norm(y)
        if resid_norm < zero_tol:
            break
        abs_t, df = _candidate_t(y, S, selected)
        best = int(np.argmax(abs_t))  # first maximum = lowest index on ties
        if abs_t[best] < 0:
            break
        p = float(_two_sided_p(abs_t[best], df))
        rounds += 1
        if not p < cfg.p_enter:
            break
        selected.append(best)
    return _ols_refit(Technique.FSR, y, S, selected, t0, rounds=rounds, entry_order=tuple(selected))


def unmix_bsr(y, lib, cfg=SolverConfig()):
    t0 = time.perf_counter()
    y, S = _design(y, lib)
    m, n = S.shape
    active = list(range(n))
    norms = np.linalg.norm(S, axis=0)

    screened = 0
    if len(active) >= m:
        # Underdetermined start: ridge in kernel form, (S S^T + lam I) alpha = y, a = S^T alpha
        K = S @ S.T
        while len(active) >= m and active:
            Sa = S[:, active]
            if screened % 50 == 0:
                K = Sa @ Sa.T
            A = K.copy()
            A[np.diag_indices(m)] += BSR_SCREEN_LAMBDA
            a = Sa.T @ linalg.spd_solve(A, y)
            score = np.abs(a) * norms[active]
            lowest = np.flatnonzero(score == score.min())
            pos = int(lowest[-1])  # highest library index loses ties
            col = S[:, active[pos]]
            K -= np.outer(col, col)
            del active[pos]
            screened += 1

    removed = []
    while active:
        _, t, df, _ = ols_t_statistics(y, S[:, active])
        abs_t = np.abs(t)
        weakest = np.flatnonzero(abs_t == abs_t.min())
        pos = int(weakest[-1])
        p = float(_two_sided_p(abs_t[pos], df))
        if not p > cfg.p_remove:
            break
        removed.append(active.pop(pos))
    return _ols_refit(Technique.BSR, y, S, active, t0, screened=screened, removed=tuple(removed))


SOLVERS = {
    Technique.OLS: unmix_ols,
    Technique.NNLS: unmix_nnls,
    Technique.RIDGE: unmix_ridge,
    Technique.LASSO: unmix_lasso,
    Technique.FSR: unmix_fsr,
    Technique.BSR: unmix_bsr,
}
