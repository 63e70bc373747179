"""Measurements behind the comparison plots and tables.

Matrix norms in the orthogonality measures are spectral norms from a dense
SVD; the matrices involved are ``k x k`` with ``k`` at most a few hundred.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .operators import LinearOperator

__all__ = [
    "DiagnosticSeries",
    "orthogonality_loss_u",
    "triangularity_loss",
    "factorization_residual",
    "fgk_factorization_residuals",
    "fafgk_factorization_residuals",
    "sv_compare",
    "basis_rank_diff",
    "speedup_tau",
    "relative_error_series",
    "orthogonality_curves",
    "SV_ENTRY_LIMIT",
]

SV_ENTRY_LIMIT = 2000 * 2000


@dataclass
class DiagnosticSeries:
    name: str
    k_values: list = field(default_factory=list)
    values: list = field(default_factory=list)

    def __post_init__(self):
        self.k_values = [int(k) for k in self.k_values]
        self.values = [float(v) for v in self.values]
        if len(self.k_values) != len(self.values):
            raise ValueError("k_values and values must have equal length")
        if any(b <= a for a, b in zip(self.k_values, self.k_values[1:])):
            raise ValueError("k_values must be strictly increasing")

    def __len__(self):
        return len(self.values)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["k", self.name])
            for k, v in zip(self.k_values, self.values):
                writer.writerow([k, f"{v:.17g}"])

    @classmethod
    def read_csv(cls, path):
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        return cls(header[1], [int(r[0]) for r in rows], [float(r[1]) for r in rows])


def _spectral(M):
    if M.size == 0:
        return 0.0
    return float(np.linalg.norm(M, 2))


def orthogonality_loss_u(U):
    """``|I - U^T U|_2``."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if U.shape[1] == 0:
        raise ValueError("U has no columns")
    return _spectral(np.eye(U.shape[1]) - U.T @ U)


def triangularity_loss(V, Z):
    """``|I - tril(V^T Z)^T tril(V^T Z)|_2``; zero when ``V^T Z`` is unit upper triangular."""
    V = np.atleast_2d(np.asarray(V, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if V.shape[1] != Z.shape[1]:
        raise ValueError(f"V has {V.shape[1]} columns, Z has {Z.shape[1]}")
    L = np.tril(V.T @ Z)
    return _spectral(np.eye(L.shape[0]) - L.T @ L)


def _apply_columns(A, X):
    if isinstance(A, LinearOperator):
        return np.column_stack([A.apply(X[:, j]) for j in range(X.shape[1])])
    return np.asarray(A) @ X


def _apply_adjoint_columns(A, Y):
    if isinstance(A, LinearOperator):
        return np.column_stack([A.apply_adjoint(Y[:, j]) for j in range(Y.shape[1])])
    return np.asarray(A).T @ Y


def _fro(A):
    if isinstance(A, LinearOperator):
        return A.fro_norm()
    return float(np.linalg.norm(A))


def factorization_residual(A, Z, U_plus, N_plus):
    """``|A Z - U_plus N_plus|_F / (|A|_F |Z|_F + eps)``."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    U_plus = np.atleast_2d(np.asarray(U_plus, dtype=float))
    N_plus = np.atleast_2d(np.asarray(N_plus, dtype=float))
    if U_plus.shape[1] != N_plus.shape[0] or Z.shape[1] != N_plus.shape[1]:
        raise ValueError(f"dimension mismatch: Z {Z.shape}, U {U_plus.shape}, N {N_plus.shape}")
    R = _apply_columns(A, Z) - U_plus @ N_plus
    return float(np.linalg.norm(R)) / (_fro(A) * float(np.linalg.norm(Z)) + np.finfo(float).eps)


def _adjoint_residual(A, U, V, T):
    """``|A^T U - V T|_F / (|A|_F |U|_F + eps)``."""
    R = _apply_adjoint_columns(A, U) - V @ T
    return float(np.linalg.norm(R)) / (_fro(A) * float(np.linalg.norm(U)) + np.finfo(float).eps)


def fafgk_factorization_residuals(state):
    """Relative residuals of ``A Z = U_{k+1} N`` and ``A^T U_k = V_k L_k^T``."""
    k = state.k
    return (factorization_residual(state.A, state.Z, state.U_plus(), state.N),
            _adjoint_residual(state.A, state.U_plus()[:, :k], state.V, state.L.T))


def fgk_factorization_residuals(state):
    """Relative residuals of ``A Z = U_{k+1} N`` and ``A^T U_k = V_k T_k``."""
    k = state.k
    return (factorization_residual(state.A, state.Z, state.U_plus(), state.N),
            _adjoint_residual(state.A, state.U_plus()[:, :k], state.V, state.T))


def sv_compare(M):
    """Singular values of a small matrix (or small operator), descending."""
    if isinstance(M, LinearOperator):
        if M.m * M.n > SV_ENTRY_LIMIT:
            raise ValueError("operator too large for a dense SVD; sampled estimation is not implemented")
        M = M.todense()
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size > SV_ENTRY_LIMIT:
        raise ValueError("matrix too large for a dense SVD; sampled estimation is not implemented")
    return np.linalg.svd(M, compute_uv=False)


def basis_rank_diff(Z, Z_tilde, tol=1e-10, x=None, x_tilde=None):
    """Numerical rank of ``[Z, Z_tilde]`` and, given iterates, ``|x - x~| / |x|``.

    The rank counts singular values above ``tol * sigma_max``.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    Z_tilde = np.atleast_2d(np.asarray(Z_tilde, dtype=float))
    if Z.size == 0 or Z_tilde.size == 0:
        raise ValueError("empty basis")
    if Z.ndim == 2 and Z.shape[0] == 1 and Z_tilde.shape[0] != 1:
        Z = Z.T
    s = np.linalg.svd(np.hstack([Z, Z_tilde]), compute_uv=False)
    rank = int(np.sum(s > tol * s[0]))
    diff = None
    if x is not None and x_tilde is not None:
        diff = float(np.linalg.norm(np.asarray(x) - np.asarray(x_tilde)) / np.linalg.norm(x))
    return rank, diff


def speedup_tau(T, T_o):
    """Percentage speed-up ``100 * (1 - T / T_o)``."""
    if not T_o > 0:
        raise ValueError("reference time must be positive")
    return 100.0 * (1.0 - T / T_o)


def relative_error_series(history, x_exact=None):
    """``|x_k - x_exact| / |x_exact|`` for ``k = 0, 1, ...`` (``k = 0`` is ``x0``).

    Uses errors recorded during the run when present, otherwise the stored
    iterates (which then need ``x_exact``).
    """
    errors = history.errors
    if x_exact is None:
        raise ValueError("relative error needs x_exact")
    x_exact = np.asarray(x_exact, dtype=float)
    xn = float(np.linalg.norm(x_exact))
    first = float(np.linalg.norm(history.x0 - x_exact)) / xn
    if len(errors) and np.all(np.isfinite(errors)):
        vals = list(errors)
    elif history.iterates and len(history.iterates) == len(history.records):
        vals = [float(np.linalg.norm(x - x_exact)) / xn for x in history.iterates]
    else:
        raise ValueError("history has neither recorded errors nor stored iterates")
    return DiagnosticSeries(f"{history.solver}_rel_error", range(len(vals) + 1), [first] + vals)


def orthogonality_curves(state, k_values=None):
    """Loss-of-orthogonality series for a fast flexible run with stored basis.

    Returns ``(u_loss, vz_loss)`` evaluated on the leading ``k`` columns.
    """
    U = state.U
    V, Z = state.V, state.Z
    kmax = state.k
    if k_values is None:
        k_values = range(1, kmax + 1)
    k_values = [k for k in k_values if 1 <= k <= kmax]
    UtU = U.T @ U
    VtZ = np.tril(V.T @ Z)
    u_loss, vz_loss = [], []
    for k in k_values:
        ku = min(k, U.shape[1])
        u_loss.append(_spectral(np.eye(ku) - UtU[:ku, :ku]))
        L = VtZ[:k, :k]
        vz_loss.append(_spectral(np.eye(k) - L.T @ L))
    return DiagnosticSeries("u_loss", k_values, u_loss), DiagnosticSeries("vz_loss", k_values, vz_loss)
