"""Flexible Golub-Kahan bidiagonalization engines.

:class:`FastFGKState` keeps a long (modified Gram-Schmidt) recurrence for the
left vectors ``u`` and a short recurrence for the right vectors ``v``::

    v_k = A^T u_k - beta_k v_{k-1},   z_k = M_k^{-1} v_k,
    alpha_k = (z_k, v_k)^{1/2},       beta_{k+1} u_{k+1} = A z_k - sum_j n_{j,k} u_j

so that ``A Z_k = U_{k+1} N_{k+}`` and ``A^T U_k = V_k L_k^T`` with ``N_{k+}``
upper Hessenberg and ``L_k`` lower bidiagonal.

:class:`FGKState` is the classical flexible variant that orthogonalizes both
sequences with long recurrences: ``A Z_k = U_{k+1} N_{k+}`` and
``A^T U_k = V_k T_k`` with ``T_k`` upper triangular.

Both are single-owner state machines driven by ``step``.
"""

from __future__ import annotations

import os

import numpy as np

from .operators import write_matrix_market

__all__ = [
    "Breakdown",
    "AlreadyConverged",
    "FastFGKState",
    "FGKState",
    "fafgk_init",
    "fafgk_step",
    "fgk_init",
    "fgk_step",
    "BREAKDOWN_RTOL",
]

BREAKDOWN_RTOL = np.sqrt(np.finfo(float).eps)


class Breakdown(Exception):
    """The recurrence cannot produce the next basis vector."""

    def __init__(self, kind, k, message=""):
        super().__init__(message or f"{kind} at iteration {k}")
        self.kind = kind
        self.k = k


class AlreadyConverged(Exception):
    """The initial residual is zero: ``x0`` already solves the system."""


class _Columns:
    """Growable column store backed by one Fortran-ordered array."""

    def __init__(self, rows, capacity=16):
        self._data = np.empty((rows, max(int(capacity), 1)), order="F")
        self.count = 0

    def append(self, col):
        if self.count == self._data.shape[1]:
            grown = np.empty((self._data.shape[0], 2 * self._data.shape[1]), order="F")
            grown[:, : self.count] = self._data[:, : self.count]
            self._data = grown
        self._data[:, self.count] = col
        self.count += 1

    def __getitem__(self, j):
        return self._data[:, j]

    @property
    def array(self):
        return self._data[:, : self.count]


class _FlexibleBidiag:
    def __init__(self, A, b, x0=None, store_basis=False, reorthogonalize=False, capacity=16):
        b = np.asarray(b, dtype=float)
        if b.shape != (A.m,):
            raise ValueError(f"b: expected length {A.m}, got {b.shape}")
        x0 = np.zeros(A.n) if x0 is None else np.asarray(x0, dtype=float)
        if x0.shape != (A.n,):
            raise ValueError(f"x0: expected length {A.n}, got {x0.shape}")
        self.A = A
        self.x0 = x0
        self.store_basis = store_basis
        self.reorthogonalize = reorthogonalize
        r0 = b - A.apply(x0) if np.any(x0) else b.copy()
        beta1 = float(np.linalg.norm(r0))
        if beta1 == 0.0:
            raise AlreadyConverged("initial residual is zero")
        self.beta1 = beta1
        self._U = _Columns(A.m, capacity + 1)
        self._U.append(r0 / beta1)
        self._Z = _Columns(A.n, capacity) if store_basis else None
        self._V = _Columns(A.n, capacity) if store_basis else None
        self._ncols = []
        self.z = None
        self.k = 0
        self.happy_breakdown = False

    @property
    def U(self):
        """Stored left basis ``U_{k+1}`` (``U_k`` after a happy breakdown)."""
        return self._U.array

    @property
    def Z(self):
        if self._Z is None:
            raise AttributeError("basis storage disabled; construct with store_basis=True")
        return self._Z.array

    @property
    def V(self):
        if self._V is None:
            raise AttributeError("basis storage disabled; construct with store_basis=True")
        return self._V.array

    @property
    def N(self):
        """Upper Hessenberg ``(k+1) x k`` coefficient matrix."""
        out = np.zeros((self.k + 1, self.k))
        for j, col in enumerate(self._ncols):
            out[: j + 2, j] = col
        return out

    def last_column(self):
        """Newest column of ``N_{k+}`` (length ``k + 1``)."""
        return self._ncols[-1]

    def U_plus(self):
        """``U_{k+1}``, padded with a zero column after a happy breakdown."""
        U = self.U
        if U.shape[1] == self.k + 1:
            return U
        return np.hstack([U, np.zeros((U.shape[0], self.k + 1 - U.shape[1]))])

    def _extend_u(self, w):
        """Orthogonalize ``w = A z_k`` against ``u_1..u_k``; return the N column."""
        k = self.k + 1
        ref = float(np.linalg.norm(w))
        coeffs = np.zeros(k + 1)
        passes = 2 if self.reorthogonalize else 1
        for _ in range(passes):
            for j in range(k):
                uj = self._U[j]
                c = uj @ w
                w -= c * uj
                coeffs[j] += c
        beta = float(np.linalg.norm(w))
        if beta <= BREAKDOWN_RTOL * ref:
            self.happy_breakdown = True
            coeffs[k] = 0.0
        else:
            coeffs[k] = beta
            self._U.append(w / beta)
        return coeffs

    def _check_not_finished(self):
        if self.happy_breakdown:
            raise Breakdown("happy breakdown", self.k, "factorization already terminated by a happy breakdown")

    def export_snapshot(self, directory):
        """Write ``U.mtx``, ``N.mtx`` and (when stored) ``Z.mtx`` into ``directory``."""
        os.makedirs(directory, exist_ok=True)
        write_matrix_market(os.path.join(directory, "U.mtx"), self.U_plus())
        write_matrix_market(os.path.join(directory, "N.mtx"), self.N)
        if self._Z is not None:
            write_matrix_market(os.path.join(directory, "Z.mtx"), self.Z)


class FastFGKState(_FlexibleBidiag):
    """Fast flexible Golub-Kahan factorization (one long, one short recurrence).

    Parameters
    ----------
    A : LinearOperator
    b : array_like
        Right-hand side, length ``A.m``.
    x0 : array_like, optional
        Initial approximation; zero by default.
    store_basis : bool
        Keep the columns ``z_k`` and ``v_k``. The ``u_k`` are always kept since
        the long recurrence needs them.
    reorthogonalize : bool
        Run a second modified Gram-Schmidt pass on each ``u_{k+1}``.

    Raises
    ------
    AlreadyConverged
        If ``b - A x0`` vanishes.
    """

    def __init__(self, A, b, x0=None, store_basis=False, reorthogonalize=False, capacity=16):
        super().__init__(A, b, x0, store_basis, reorthogonalize, capacity)
        self.v = np.zeros(A.n)
        self.v_prev = np.zeros(A.n)
        self.alphas = []
        self.betas = []  # beta_2 .. beta_{k+1}
        self.scalings = []

    @property
    def L(self):
        """Lower bidiagonal ``k x k`` matrix with ``alpha`` on the diagonal."""
        k = self.k
        out = np.diag(np.asarray(self.alphas, dtype=float))
        if k > 1:
            out[np.arange(1, k), np.arange(k - 1)] = self.betas[: k - 1]
        return out

    def step(self, precond, x_prev=None):
        """Run one iteration; ``x_prev`` feeds the preconditioner for ``M_k``."""
        self._check_not_finished()
        k = self.k + 1
        A = self.A
        w = A.apply_adjoint(self._U[k - 1])
        ref = float(np.linalg.norm(w))
        if k > 1:
            beta_k = self.betas[-1]
            w -= beta_k * self.v
            ref += beta_k * float(np.linalg.norm(self.v))
        scaling = precond.next_inverse(k, x_prev)
        z = scaling.apply_inverse(w)
        alpha_sq = float(z @ w)
        if not np.isfinite(alpha_sq) or float(np.linalg.norm(w)) <= BREAKDOWN_RTOL * ref or alpha_sq <= 0.0:
            raise Breakdown("v-breakdown", k)
        alpha = np.sqrt(alpha_sq)
        z /= alpha
        w /= alpha
        self.v_prev = self.v
        self.v = w
        self.z = z
        self.alphas.append(alpha)
        self.scalings.append(scaling)
        if self._Z is not None:
            self._Z.append(z)
            self._V.append(w)
        coeffs = self._extend_u(A.apply(z))
        self._ncols.append(coeffs)
        self.betas.append(coeffs[-1])
        self.k = k
        return self


class FGKState(_FlexibleBidiag):
    """Flexible Golub-Kahan factorization with two long recurrences.

    The right vectors ``v_k`` are always stored because the second long
    recurrence needs them; ``z_k`` only with ``store_basis``.
    """

    def __init__(self, A, b, x0=None, store_basis=False, reorthogonalize=False, capacity=16):
        super().__init__(A, b, x0, store_basis, reorthogonalize, capacity)
        self._V = _Columns(A.n, capacity)
        self._tcols = []
        self.scalings = []

    @property
    def V(self):
        return self._V.array

    @property
    def T(self):
        """Upper triangular ``k x k`` matrix with ``A^T U_k = V_k T_k``."""
        out = np.zeros((self.k, self.k))
        for j, col in enumerate(self._tcols):
            out[: j + 1, j] = col
        return out

    def step(self, precond, x_prev=None):
        self._check_not_finished()
        k = self.k + 1
        A = self.A
        w = A.apply_adjoint(self._U[k - 1])
        ref = float(np.linalg.norm(w))
        tcol = np.zeros(k)
        passes = 2 if self.reorthogonalize else 1
        for _ in range(passes):
            for j in range(k - 1):
                vj = self._V[j]
                c = vj @ w
                w -= c * vj
                tcol[j] += c
        t_kk = float(np.linalg.norm(w))
        if not np.isfinite(t_kk) or t_kk <= BREAKDOWN_RTOL * ref:
            raise Breakdown("v-breakdown", k)
        tcol[k - 1] = t_kk
        w /= t_kk
        self._V.append(w)
        self._tcols.append(tcol)
        scaling = precond.next_inverse(k, x_prev)
        z = scaling.apply_inverse(w)
        self.z = z
        self.scalings.append(scaling)
        if self._Z is not None:
            self._Z.append(z)
        coeffs = self._extend_u(A.apply(z))
        self._ncols.append(coeffs)
        self.k = k
        return self


def fafgk_init(A, b, x0=None, **kwargs):
    return FastFGKState(A, b, x0, **kwargs)


def fafgk_step(state, precond, x_prev=None):
    return state.step(precond, x_prev)


def fgk_init(A, b, x0=None, **kwargs):
    return FGKState(A, b, x0, **kwargs)


def fgk_step(state, precond, x_prev=None):
    return state.step(precond, x_prev)
