"""l1 reconstruction and an exhaustive l0 reference.

``l1_reconstruct`` solves

    minimize    ||s||_1
    subject to  ||A s - y||_2 <= epsilon      (and s >= 0 if nonneg)

by following the penalized path ``min 0.5||As - y||^2 + lam ||s||_1`` as
``lam`` decreases from ``||A^T y||_inf``. The path is piecewise linear, so
it is traced exactly one breakpoint at a time (an index joins or leaves the
active set). The walk stops where the residual norm first reaches
``epsilon``, or at ``lam = 0`` for the equality-constrained problem, and
the endpoint is checked with a duality gap.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import List, Optional

import numpy as np

from .errors import DimensionError, NonFiniteError, SizeError

_TINY = 1e-12


@dataclass(frozen=True)
class SolverConfig:
    """Tunables for :func:`l1_reconstruct`.

    ``max_iterations`` bounds the number of path breakpoints. With
    ``normalize_columns`` the objective becomes the weighted norm
    ``sum_i ||A[:, i]|| |s_i|``, i.e. plain l1 over the column-normalized
    matrix.
    """

    epsilon: float = 0.0
    max_iterations: int = 20_000
    convergence_tol: float = 1e-8
    nonneg: bool = True
    normalize_columns: bool = False

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be nonnegative")
        if self.max_iterations < 1 or not self.convergence_tol > 0:
            raise ValueError("max_iterations and convergence_tol must be positive")

    def replace(self, **kw) -> "SolverConfig":
        return replace(self, **kw)


@dataclass(frozen=True, eq=False)
class Reconstruction:
    s_hat: np.ndarray
    residual_l2: float
    iterations_used: int
    converged: bool
    duality_gap: float = float("nan")


def _validate(A, y):
    A = np.asarray(A, dtype=float)
    y = np.asarray(y, dtype=float)
    if A.ndim != 2 or y.ndim != 1:
        raise DimensionError("A must be 2-D and y 1-D")
    if A.shape[0] != y.shape[0]:
        raise DimensionError(f"A has {A.shape[0]} rows but y has {y.shape[0]} entries")
    if A.shape[0] < 1 or A.shape[1] < 1:
        raise DimensionError("need at least one measurement and one unknown")
    if not (np.all(np.isfinite(A)) and np.all(np.isfinite(y))):
        raise NonFiniteError("A and y must be finite")
    return A, y


def duality_gap(A, y, s, p, epsilon=0.0, nonneg=False) -> float:
    """Relative gap between ``||s||_1`` and the dual bound from ``p``.

    The dual of the residual-ball problem is ``max y.p - eps ||p||`` over
    ``||A^T p||_inf <= 1`` (``A^T p <= 1`` when nonneg); ``p`` is rescaled
    into that set first.
    """
    g = A.T @ p
    m = g.max() if nonneg else np.abs(g).max()
    primal = np.abs(s).sum()
    if not m > 0:
        return np.inf
    dual = (y @ p - epsilon * np.linalg.norm(p)) / m
    return float((primal - dual) / max(primal, 1e-300))


class _Path:
    """State of the homotopy walk on a problem scaled to ``||A||_2 = 1``."""

    def __init__(self, A, y, nonneg):
        self.A, self.y, self.nonneg = A, y, nonneg
        self.n = A.shape[1]
        self.x = np.zeros(self.n)
        self.r = y.copy()
        self.c = A.T @ y
        self.rank = np.linalg.matrix_rank(A)
        self.active: List[int] = []
        self.signs: List[float] = []
        self.lam = self._max_corr()
        self.lam0 = self.lam

    def _max_corr(self):
        return max(self.c.max(), 0.0) if self.nonneg else np.abs(self.c).max()

    def direction(self):
        AI = self.A[:, self.active]
        sig = np.array(self.signs)
        d, *_ = np.linalg.lstsq(AI.T @ AI, sig, rcond=None)
        return d, AI @ d

    def next_event(self, d, v, banned):
        """Step length to the next breakpoint and what happens there."""
        a = self.A.T @ v
        lam, c = self.lam, self.c
        best, event = lam, ("zero", None)
        inactive = np.ones(self.n, dtype=bool)
        inactive[self.active] = False
        # at full rank every inactive correlation is a fixed multiple of lam,
        # so no index can join before lam = 0
        if len(self.active) >= self.rank:
            inactive[:] = False
        with np.errstate(divide="ignore", invalid="ignore"):
            up = np.where(inactive & (1 - a > _TINY), (lam - c) / (1 - a), np.inf)
            if self.nonneg:
                dn = np.full(self.n, np.inf)
            else:
                dn = np.where(inactive & (1 + a > _TINY), (lam + c) / (1 + a), np.inf)
        # a just-dropped index may come back, but only with the opposite sign
        if banned is not None:
            j, sgn = banned
            (up if sgn > 0 else dn)[j] = np.inf
        up[up <= 0] = np.inf
        dn[dn <= 0] = np.inf
        j_up, j_dn = int(np.argmin(up)), int(np.argmin(dn))
        if up[j_up] < best:
            best, event = up[j_up], ("join", (j_up, 1.0))
        if dn[j_dn] < best:
            best, event = dn[j_dn], ("join", (j_dn, -1.0))
        xI = self.x[self.active]
        with np.errstate(divide="ignore", invalid="ignore"):
            cross = np.where(d * np.array(self.signs) < 0, -xI / d, np.inf)
        cross[cross <= 0] = np.inf
        if len(cross):
            i = int(np.argmin(cross))
            if cross[i] < best:
                best, event = cross[i], ("drop", i)
        return best, event

    def advance(self, gamma, d, v):
        self.x[self.active] += gamma * d
        self.r = self.y - self.A @ self.x
        self.c = self.A.T @ self.r
        self.lam -= gamma


def _residual_crossing(r, v, gamma_max, eps):
    """Smallest step in [0, gamma_max] where ||r - g v|| falls to eps, else None."""
    rr, rv, vv = r @ r, r @ v, v @ v
    if np.linalg.norm(r - gamma_max * v) > eps:
        return None
    if vv <= 0:
        return 0.0
    disc = max(rv * rv - vv * (rr - eps * eps), 0.0)
    return float(np.clip((rv - np.sqrt(disc)) / vv, 0.0, gamma_max))


def _polish_equality(A, y, active, signs, nonneg):
    """Exact fit on the final active set; also returns the dual certificate."""
    x = np.zeros(A.shape[1])
    if not active:
        return x, None
    AI = A[:, active]
    # on the last segment r = lam * AI G^-1 signs, so this dual holds either way
    q, *_ = np.linalg.lstsq(AI.T @ AI, np.array(signs), rcond=None)
    w, *_ = np.linalg.lstsq(AI, y, rcond=None)
    if nonneg and np.any(w < 0):
        return None, AI @ q
    x[active] = w
    return x, AI @ q


def _homotopy(A, y, eps, nonneg, max_steps, tol):
    path = _Path(A, y, nonneg)
    steps = 0
    if path.lam <= 0 or np.linalg.norm(y) <= eps:
        return path.x, 0, None
    j = int(np.argmax(path.c if nonneg else np.abs(path.c)))
    path.active.append(j)
    path.signs.append(1.0 if nonneg else float(np.sign(path.c[j])))
    banned = None
    dual_p = breakpoint_dual = None
    while steps < max_steps:
        steps += 1
        d, v = path.direction()
        gamma, (kind, info) = path.next_event(d, v, banned)
        if eps > 0:
            g_eps = _residual_crossing(path.r, v, gamma, eps)
            if g_eps is not None:
                path.advance(g_eps, d, v)
                if path.lam > 0:
                    dual_p = path.r / path.lam
                return path.x, steps, dual_p
        path.advance(gamma, d, v)
        banned = None
        if kind == "zero" or path.lam <= tol * path.lam0:
            break
        if path.lam > 1e-9 * path.lam0:
            breakpoint_dual = path.r / path.lam
        if kind == "join":
            jj, sgn = info
            path.active.append(jj)
            path.signs.append(sgn)
        else:
            idx = path.active.pop(info)
            banned = (idx, path.signs.pop(info))
            path.x[idx] = 0.0
    x = path.x
    if eps == 0 or path.lam <= tol * path.lam0:
        polished, dual_p = _polish_equality(A, y, path.active, path.signs, nonneg)
        if polished is not None and np.linalg.norm(A @ polished - y) <= max(
            np.linalg.norm(A @ x - y), eps
        ) + 1e-12 * np.linalg.norm(y):
            x = polished
    if dual_p is None and path.lam > 0:
        dual_p = path.r / path.lam
    # near lam = 0 rounding can spoil the polished dual; any feasible dual is
    # a valid bound, so keep whichever certifies the endpoint best
    if breakpoint_dual is not None and (
        dual_p is None
        or duality_gap(A, y, x, breakpoint_dual, eps, nonneg) < duality_gap(A, y, x, dual_p, eps, nonneg)
    ):
        dual_p = breakpoint_dual
    return x, steps, dual_p


def l1_reconstruct(A, y, cfg: Optional[SolverConfig] = None) -> Reconstruction:
    """Solve ``min ||s||_1 s.t. ||A s - y||_2 <= epsilon`` (optionally ``s >= 0``).

    Parameters
    ----------
    A : ndarray (M, n)
        Sensing matrix.
    y : ndarray (M,)
        Samples.
    cfg : SolverConfig
        Residual bound, breakpoint limit and sign constraint.

    Returns
    -------
    Reconstruction
        ``converged`` is true when the walk finished inside the breakpoint
        budget and the returned point meets the residual bound to within
        ``convergence_tol``.
    """
    cfg = cfg or SolverConfig()
    A, y = _validate(A, y)
    n = A.shape[1]
    weights = np.ones(n)
    if cfg.normalize_columns:
        norms = np.linalg.norm(A, axis=0)
        weights = np.where(norms > 0, norms, np.inf)
    Aw = A / weights

    scale = np.linalg.norm(Aw, 2)
    ynorm = np.linalg.norm(y)
    if scale == 0 or ynorm <= cfg.epsilon:
        return Reconstruction(np.zeros(n), float(ynorm), 0, ynorm <= cfg.epsilon, 0.0)
    An = Aw / scale
    w, steps, p = _homotopy(An, y, cfg.epsilon, cfg.nonneg, cfg.max_iterations, 1e-14)
    s_hat = w / (scale * weights)
    resid = float(np.linalg.norm(A @ s_hat - y))
    gap = duality_gap(An, y, w, p, cfg.epsilon, cfg.nonneg) if p is not None else 0.0
    converged = steps < cfg.max_iterations and resid <= cfg.epsilon + cfg.convergence_tol * max(
        1.0, ynorm
    )
    return Reconstruction(s_hat, resid, steps, bool(converged), gap)


def _fit_supports(A, y, size, tol):
    n = A.shape[1]
    fits = []
    for sup in itertools.combinations(range(n), size):
        cols = A[:, sup]
        w, *_ = np.linalg.lstsq(cols, y, rcond=None)
        if np.linalg.norm(cols @ w - y) <= tol:
            s = np.zeros(n)
            s[list(sup)] = w
            fits.append(s)
    return fits


def l0_solutions(A, y, k_max: int) -> List[np.ndarray]:
    """All distinct sparsest exact fits with at most ``k_max`` nonzeros."""
    A, y = _validate(A, y)
    n = A.shape[1]
    if n > 24 or k_max > 3:
        raise SizeError(f"exhaustive search limited to n <= 24 and k_max <= 3 (got n={n}, k_max={k_max})")
    tol = 1e-8 * max(1.0, np.linalg.norm(y))
    if np.linalg.norm(y) <= tol:
        return [np.zeros(n)]
    for size in range(1, k_max + 1):
        distinct: List[np.ndarray] = []
        for s in _fit_supports(A, y, size, tol):
            if not any(np.allclose(s, t, atol=1e-8, rtol=0) for t in distinct):
                distinct.append(s)
        if distinct:
            return distinct
    return []


def l0_oracle(A, y, k_max: int) -> Optional[np.ndarray]:
    """Sparsest exact fit by enumeration, ties broken by smaller l1 norm.

    Returns None when no support of size ``<= k_max`` fits ``y`` to 1e-8.
    """
    sols = l0_solutions(A, y, k_max)
    if not sols:
        return None
    return min(sols, key=lambda s: np.abs(s).sum())
