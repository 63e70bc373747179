"""Small projected problems ``N y ~ beta1 e1`` with upper Hessenberg ``N``.

Contains the incrementally updated Givens QR used by the LSQR-type solvers,
dense Tikhonov solves of the projected problem and a discrepancy-principle
choice of the Tikhonov parameter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

__all__ = [
    "GivensQRState",
    "ProjectedProblem",
    "DiscrepancyResult",
    "qr_append_column",
    "solve_ls",
    "tikhonov_solve",
    "tikhonov_residual",
    "discrepancy_lambda",
]


class GivensQRState:
    """QR factorization of ``[N_{k+}, beta1 e1]`` updated one column at a time.

    After ``k`` appends, ``Q_k [N_{k+}, beta1 e1] = [[G_k, f_k], [0, phi]]``
    with ``G_k`` upper triangular and ``|phi|`` the minimal projected residual.
    Rotations are chosen so that the diagonal of ``G`` is nonnegative.
    """

    def __init__(self, beta1, capacity=16):
        if not np.isfinite(beta1):
            raise ValueError("beta1 must be finite")
        self.beta1 = float(beta1)
        self._G = np.zeros((capacity, capacity))
        self._f = np.zeros(capacity)
        self.phi = self.beta1
        self.rotations = []
        self.k = 0

    @property
    def G(self):
        return self._G[: self.k, : self.k]

    @property
    def f(self):
        return self._f[: self.k]

    def _grow(self):
        cap = 2 * self._G.shape[0]
        G = np.zeros((cap, cap))
        G[: self.k, : self.k] = self.G
        f = np.zeros(cap)
        f[: self.k] = self.f
        self._G, self._f = G, f

    def append_column(self, col):
        """Append column ``k`` of ``N_{k+}`` (``k + 1`` entries, last one subdiagonal).

        Returns the new column of ``G`` (length ``k``).
        """
        k = self.k + 1
        col = np.array(col, dtype=float)
        if col.shape != (k + 1,):
            raise ValueError(f"column {k} must have {k + 1} entries, got {col.shape}")
        if not np.all(np.isfinite(col)):
            raise ValueError("column contains non-finite entries")
        for i, (c, s) in enumerate(self.rotations):
            a, b = col[i], col[i + 1]
            col[i] = c * a + s * b
            col[i + 1] = -s * a + c * b
        a, b = col[k - 1], col[k]
        r = float(np.hypot(a, b))
        if r == 0.0:
            c, s = 1.0, 0.0
        else:
            c, s = a / r, b / r
        self.rotations.append((c, s))
        col[k - 1] = r
        if k > self._G.shape[0]:
            self._grow()
        self._G[:k, k - 1] = col[:k]
        self._f[k - 1] = c * self.phi
        self.phi = -s * self.phi
        self.k = k
        return self._G[:k, k - 1]

    def solve(self):
        """Least squares coefficients ``y_k`` via back substitution ``G y = f``."""
        G = self.G
        diag = np.diag(G)
        zero = np.flatnonzero(diag == 0.0)
        if zero.size:
            raise np.linalg.LinAlgError(f"G is singular: zero pivot at position {zero[0] + 1}")
        return scipy.linalg.solve_triangular(G, self.f, lower=False)


def qr_append_column(state, new_col):
    state.append_column(new_col)
    return state


def solve_ls(state):
    return state.solve()


@dataclass(frozen=True)
class ProjectedProblem:
    """Upper Hessenberg ``(k+1) x k`` matrix with right-hand side ``beta1 e1``."""

    N: np.ndarray
    beta1: float

    def __post_init__(self):
        N = np.array(self.N, dtype=float)
        if N.ndim != 2 or N.shape[0] != N.shape[1] + 1:
            raise ValueError(f"projected matrix must be (k+1) x k, got shape {N.shape}")
        if np.any(np.tril(N, -2)):
            raise ValueError("projected matrix is not upper Hessenberg")
        if self.beta1 <= 0:
            raise ValueError("beta1 must be positive")
        object.__setattr__(self, "N", N)
        object.__setattr__(self, "beta1", float(self.beta1))

    @property
    def k(self):
        return self.N.shape[1]

    def rhs(self):
        e = np.zeros(self.k + 1)
        e[0] = self.beta1
        return e

    def residual(self, y):
        return float(np.linalg.norm(self.N @ y - self.rhs()))


def tikhonov_solve(p, lam, J=None):
    """Minimize ``|N y - beta1 e1|^2 + lam^2 |J y|^2`` (``J = I`` if omitted).

    Solved densely through a QR factorization of the stacked system.
    """
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    k = p.k
    if J is None:
        J = np.eye(k)
    else:
        J = np.asarray(J, dtype=float)
        if J.shape != (k, k):
            raise ValueError(f"J must be {k} x {k}, got {J.shape}")
    if lam == 0.0 and np.linalg.matrix_rank(p.N) < k:
        raise np.linalg.LinAlgError("lambda = 0 with a rank-deficient projected matrix")
    K = np.vstack([p.N, lam * J])
    rhs = np.concatenate([p.rhs(), np.zeros(k)])
    Q, R = np.linalg.qr(K)
    return scipy.linalg.solve_triangular(R, Q.T @ rhs, lower=False)


class _FilterFactors:
    """SVD of ``N`` for cheap evaluation of Tikhonov residuals and solutions."""

    def __init__(self, p):
        P, sigma, Wt = np.linalg.svd(p.N, full_matrices=True)
        k = p.k
        self.sigma = sigma
        self.Wt = Wt
        c = p.beta1 * P[0, :]
        self.c = c[:k]
        # component of beta1 e1 outside range(N), read off the last left vector
        self.out_sq = float(c[k] ** 2)

    def residual(self, lam):
        if lam == 0.0:
            damp = (self.sigma == 0).astype(float)
        else:
            lam2 = lam * lam
            damp = lam2 / (self.sigma ** 2 + lam2)
        return float(np.sqrt(np.sum((damp * self.c) ** 2) + self.out_sq))

    def solution(self, lam):
        s = self.sigma
        with np.errstate(divide="ignore", invalid="ignore"):
            phi = np.where(s > 0, s / (s * s + lam * lam), 0.0)
        return self.Wt.T @ (phi * self.c)


def tikhonov_residual(p, lam):
    """Projected residual norm of the identity-Tikhonov solution at ``lam``."""
    return _FilterFactors(p).residual(lam)


@dataclass(frozen=True)
class DiscrepancyResult:
    lam: float
    y: np.ndarray
    residual: float
    attained: bool


class _GeneralTikhonov:
    """Residual and solution maps for a general regularization matrix ``J``."""

    def __init__(self, p, J):
        self.p = p
        self.J = np.asarray(J, dtype=float)
        sj = np.linalg.svd(self.J, compute_uv=False)
        self.sigma = np.linalg.svd(p.N, compute_uv=False) / max(sj[-1], np.finfo(float).tiny)

    def solution(self, lam):
        if lam == 0.0:
            return np.linalg.lstsq(self.p.N, self.p.rhs(), rcond=None)[0]
        return tikhonov_solve(self.p, lam, self.J)

    def residual(self, lam):
        return self.p.residual(self.solution(lam))


def discrepancy_lambda(p, target, J=None, max_iter=200, bracket_factor=1e3, rtol=1e-10):
    """Choose ``lam`` so that the Tikhonov residual equals ``target``.

    Bisection on ``log(lam)`` over ``(0, bracket_factor * sigma_max(N)]``,
    relying on the residual being nondecreasing in ``lam``.

    Returns ``lam = 0`` with ``attained=False`` when even the least squares
    residual is above ``target``; returns the upper bracket end when
    ``target`` is at or beyond the residual reachable inside the bracket.
    """
    if not target >= 0:
        raise ValueError("target must be a nonnegative number")
    ff = _FilterFactors(p) if J is None else _GeneralTikhonov(p, J)
    res0 = ff.residual(0.0)
    if res0 >= target:
        if J is None and ff.sigma[-1] == 0:
            y = np.linalg.lstsq(p.N, p.rhs(), rcond=None)[0]
        else:
            y = ff.solution(0.0)
        return DiscrepancyResult(0.0, y, res0, res0 == target)
    smax = float(ff.sigma[0])
    hi = bracket_factor * smax
    res_hi = ff.residual(hi)
    if res_hi <= target:
        return DiscrepancyResult(hi, ff.solution(hi), res_hi, bool(abs(res_hi - target) <= 1e-6 * target))
    log_lo, log_hi = np.log(smax * 1e-16), np.log(hi)
    lam, res = hi, res_hi
    for _ in range(max_iter):
        mid = 0.5 * (log_lo + log_hi)
        lam = float(np.exp(mid))
        res = ff.residual(lam)
        if abs(res - target) <= rtol * target:
            break
        if res > target:
            log_hi = mid
        else:
            log_lo = mid
    return DiscrepancyResult(lam, ff.solution(lam), res, bool(abs(res - target) <= 1e-6 * target))
