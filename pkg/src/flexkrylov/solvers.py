"""Flexibly preconditioned least squares solvers.

* :func:`faflsqr` - fast flexible LSQR built on :class:`~flexkrylov.bidiag.FastFGKState`
* :func:`flsqr` - flexible LSQR built on :class:`~flexkrylov.bidiag.FGKState`
* :func:`fcgls` - flexible CGLS, optionally with ``q_k = A p_k`` recomputed
* :func:`lsqr_baseline` - unpreconditioned LSQR with short recurrences

Every solver returns an :class:`IterationHistory`. Wall-clock time only
covers the algorithmic work of each iteration; diagnostics such as the true
residual and the error against a known solution are computed off the clock.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .bidiag import AlreadyConverged, Breakdown, FastFGKState, FGKState, _Columns
from .preconditioning import FlexiblePreconditioner, identity_preconditioner
from .projected import GivensQRState, ProjectedProblem, discrepancy_lambda

__all__ = [
    "SolverOptions",
    "IterationRecord",
    "IterationHistory",
    "faflsqr",
    "flsqr",
    "fcgls",
    "lsqr_baseline",
    "run_hybrid",
    "eta_coefficients",
    "SOLVERS",
    "run_solver",
]

HYBRID_MODES = ("off", "tikhonov", "tikhonov-J")
STOP_RULES = ("max_iter", "discrepancy", "oracle_best")


@dataclass
class SolverOptions:
    """Run configuration shared by all solvers.

    ``noise_level`` is the relative noise level ``eta``; together with ``nu``
    it defines the discrepancy target ``nu * eta * |b|`` used by the hybrid
    parameter choice and by ``stop_rule="discrepancy"``.
    ``J_builder`` maps ``k`` to a ``k x k`` matrix for ``hybrid="tikhonov-J"``.
    """

    max_iter: int = 100
    store_iterates: bool = False
    store_basis: bool = False
    hybrid: str = "off"
    J_builder: object = None
    stop_rule: str = "max_iter"
    noise_level: float | None = None
    nu: float = 1.01
    reorthogonalize: bool = False
    track_residual: bool = True

    def __post_init__(self):
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be >= 1")
        self.max_iter = int(self.max_iter)
        if self.hybrid not in HYBRID_MODES:
            raise ValueError(f"hybrid must be one of {HYBRID_MODES}, got {self.hybrid!r}")
        if self.hybrid == "tikhonov-J" and self.J_builder is None:
            raise ValueError("hybrid='tikhonov-J' needs a J_builder")
        if self.stop_rule not in STOP_RULES:
            raise ValueError(f"stop_rule must be one of {STOP_RULES}, got {self.stop_rule!r}")
        if (self.hybrid != "off" or self.stop_rule == "discrepancy") and self.noise_level is None:
            raise ValueError("the discrepancy target needs noise_level")


@dataclass
class IterationRecord:
    k: int
    residual: float
    proj_residual: float
    rel_error: float
    lam: float
    seconds: float


CSV_COLUMNS = ("k", "residual", "proj_residual", "rel_error", "lambda", "seconds")


@dataclass
class IterationHistory:
    solver: str
    x0: np.ndarray
    x: np.ndarray
    records: list = field(default_factory=list)
    reason: str = "max_iter"
    iterates: list = field(default_factory=list)
    best_k: int | None = None
    best_error: float | None = None
    best_x: np.ndarray | None = None
    extras: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.records)

    def column(self, name):
        attr = "lam" if name == "lambda" else name
        return np.array([getattr(r, attr) for r in self.records], dtype=float)

    @property
    def residuals(self):
        return self.column("residual")

    @property
    def proj_residuals(self):
        return self.column("proj_residual")

    @property
    def errors(self):
        return self.column("rel_error")

    @property
    def lambdas(self):
        return self.column("lambda")

    @property
    def seconds(self):
        return self.column("seconds")

    @property
    def total_seconds(self):
        return self.records[-1].seconds if self.records else 0.0

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for r in self.records:
                writer.writerow([r.k] + [f"{v:.17g}" for v in (r.residual, r.proj_residual, r.rel_error, r.lam, r.seconds)])

    @staticmethod
    def read_csv(path):
        """Parse a history CSV back into a list of :class:`IterationRecord`."""
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != CSV_COLUMNS:
                raise ValueError(f"{path}:1: unexpected header {header}")
            return [IterationRecord(int(row[0]), *(float(v) for v in row[1:])) for row in reader]

    def summary(self):
        out = {
            "solver": self.solver,
            "iterations": len(self.records),
            "reason": self.reason,
            "final_residual": self.records[-1].residual if self.records else None,
            "total_seconds": self.total_seconds,
        }
        if self.best_k is not None:
            out["min_error"] = self.best_error
            out["argmin_k"] = self.best_k
        return out

    def to_json(self, path=None):
        data = self.summary()
        data["records"] = [asdict(r) for r in self.records]
        text = json.dumps(data, indent=2, allow_nan=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text


class _Recorder:
    """Bookkeeping shared by all solvers: timing, diagnostics, stop rules."""

    def __init__(self, name, A, b, x0, opts, x_exact):
        if opts.stop_rule == "oracle_best" and x_exact is None:
            raise ValueError("stop_rule='oracle_best' needs x_exact")
        self.A, self.b, self.opts = A, b, opts
        self.x_exact = None if x_exact is None else np.asarray(x_exact, dtype=float)
        self.xnorm = None if x_exact is None else float(np.linalg.norm(self.x_exact))
        self.target = None
        if opts.noise_level is not None:
            self.target = opts.nu * opts.noise_level * float(np.linalg.norm(b))
        self.history = IterationHistory(name, x0.copy(), x0.copy())
        self.elapsed = 0.0
        self._t0 = None

    def tic(self):
        self._t0 = time.perf_counter()

    def toc(self):
        self.elapsed += time.perf_counter() - self._t0

    def record(self, k, x, proj_residual, lam=0.0):
        """Store iteration ``k``; return True if the stop rule fires."""
        h, opts = self.history, self.opts
        residual = float(np.linalg.norm(self.b - self.A.apply(x))) if opts.track_residual else float("nan")
        err = float("nan")
        if self.x_exact is not None:
            err = float(np.linalg.norm(x - self.x_exact)) / self.xnorm
            if h.best_error is None or err < h.best_error:
                h.best_k, h.best_error = k, err
                if opts.stop_rule == "oracle_best":
                    h.best_x = x.copy()
        h.records.append(IterationRecord(k, residual, float(proj_residual), err, float(lam), self.elapsed))
        if opts.store_iterates:
            h.iterates.append(x.copy())
        h.x = x
        if opts.stop_rule == "discrepancy" and abs(proj_residual) <= self.target:
            h.reason = "discrepancy"
            return True
        return False

    def finish(self, x, reason=None):
        self.history.x = x
        if reason is not None:
            self.history.reason = reason
        return self.history


def _prepare(A, b, x0, precond, opts, kwargs):
    if opts is None:
        opts = SolverOptions(**kwargs)
    elif kwargs:
        raise TypeError("pass either opts or keyword options, not both")
    b = np.asarray(b, dtype=float)
    if b.shape != (A.m,):
        raise ValueError(f"b: expected length {A.m}, got {b.shape}")
    x0 = np.zeros(A.n) if x0 is None else np.array(x0, dtype=float)
    if x0.shape != (A.n,):
        raise ValueError(f"x0: expected length {A.n}, got {x0.shape}")
    if precond is None:
        precond = identity_preconditioner(A.n)
    return b, x0, precond, opts


def _flexible_lsqr(engine, name, A, b, x0, precond, opts, x_exact):
    hybrid = opts.hybrid != "off"
    rec = _Recorder(name, A, b, x0, opts, x_exact)
    cap = min(opts.max_iter, 4096)
    try:
        state = engine(A, b, x0, store_basis=opts.store_basis or hybrid,
                       reorthogonalize=opts.reorthogonalize, capacity=cap)
    except AlreadyConverged:
        return rec.finish(x0.copy(), "already converged")
    qr = GivensQRState(state.beta1, capacity=cap)
    D = None if hybrid else _Columns(A.n, cap)
    x = x0.copy()
    lambdas = []
    reason = "max_iter"
    for k in range(1, opts.max_iter + 1):
        rec.tic()
        try:
            state.step(precond, x)
        except Breakdown as exc:
            rec.toc()
            reason = exc.kind
            break
        gcol = qr.append_column(state.last_column())
        lam = 0.0
        if hybrid:
            J = opts.J_builder(k) if opts.hybrid == "tikhonov-J" else None
            res = discrepancy_lambda(ProjectedProblem(state.N, state.beta1), rec.target, J=J)
            lam, proj_res = res.lam, res.residual
            x = x0 + state.Z @ res.y
        else:
            g_kk = gcol[k - 1]
            if g_kk == 0.0:
                rec.toc()
                reason = "singular projected matrix"
                break
            d = state.z - D.array @ gcol[: k - 1] if k > 1 else state.z.copy()
            d /= g_kk
            D.append(d)
            x = x + qr.f[k - 1] * d
            proj_res = abs(qr.phi)
        rec.toc()
        lambdas.append(lam)
        stop = rec.record(k, x, proj_res, lam)
        if state.happy_breakdown:
            reason = "happy breakdown"
            break
        if stop:
            reason = "discrepancy"
            break
    h = rec.finish(x, reason)
    h.extras["beta1"] = state.beta1
    h.extras["N"] = state.N
    h.extras["G"] = qr.G.copy()
    if isinstance(state, FastFGKState):
        h.extras["alphas"] = np.array(state.alphas)
        h.extras["betas"] = np.array([state.beta1] + list(state.betas))
    if opts.store_basis or hybrid:
        h.extras["Z"] = state.Z.copy()
        h.extras["V"] = state.V.copy()
        h.extras["U"] = state.U_plus().copy()
        if isinstance(state, FGKState):
            h.extras["T"] = state.T
        if D is not None:
            h.extras["D"] = D.array.copy()
        h.extras["state"] = state
    return h


def faflsqr(A, b, x0=None, precond=None, opts=None, x_exact=None, **kwargs):
    """Fast flexible LSQR.

    Each iteration extends the fast flexible Golub-Kahan factorization by one
    column, updates the Givens QR of ``[N_{k+}, beta1 e1]`` and updates the
    iterate through ``d_k = (z_k - sum_i g_{i,k} d_i) / g_{k,k}``,
    ``x_k = x_{k-1} + f_k(k) d_k``. In hybrid mode the Tikhonov-regularized
    projected problem is solved instead and ``x_k = x0 + Z_k y_k``.

    Parameters
    ----------
    A : LinearOperator
    b : array_like
    x0 : array_like, optional
    precond : FlexiblePreconditioner, optional
        Defaults to the identity.
    opts : SolverOptions, optional
        Alternatively pass the option fields as keyword arguments.
    x_exact : array_like, optional
        Enables relative-error tracking.

    Returns
    -------
    IterationHistory
    """
    b, x0, precond, opts = _prepare(A, b, x0, precond, opts, kwargs)
    name = "faflsqr" if opts.hybrid == "off" else "hybrid-faflsqr"
    return _flexible_lsqr(FastFGKState, name, A, b, x0, precond, opts, x_exact)


def flsqr(A, b, x0=None, precond=None, opts=None, x_exact=None, **kwargs):
    """Flexible LSQR (two long recurrences). Same interface as :func:`faflsqr`."""
    b, x0, precond, opts = _prepare(A, b, x0, precond, opts, kwargs)
    name = "flsqr" if opts.hybrid == "off" else "hybrid-flsqr"
    return _flexible_lsqr(FGKState, name, A, b, x0, precond, opts, x_exact)


def run_hybrid(kind, A, b, x0=None, precond=None, noise_level=None, opts=None, x_exact=None, **kwargs):
    """Hybrid (Tikhonov + discrepancy principle) variant of ``faflsqr`` or ``flsqr``."""
    if kind not in ("faflsqr", "flsqr"):
        raise ValueError(f"hybrid runs support 'faflsqr' and 'flsqr', got {kind!r}")
    if opts is None:
        kwargs.setdefault("hybrid", "tikhonov")
        kwargs["noise_level"] = noise_level
        opts = SolverOptions(**kwargs)
    elif opts.hybrid == "off" or opts.noise_level is None:
        raise ValueError("opts must enable a hybrid mode and carry noise_level")
    solver = faflsqr if kind == "faflsqr" else flsqr
    return solver(A, b, x0, precond, opts, x_exact)


def fcgls(A, b, x0=None, precond=None, opts=None, x_exact=None, modified=False, **kwargs):
    """Flexible CGLS.

    The direction vectors ``p_k`` are made ``A^T A``-orthogonal by a full
    modified Gram-Schmidt recurrence against all previous ``q_j = A p_j``.
    With ``modified=True`` the recurrence for ``q_k`` is replaced by the
    explicit product ``q_k = A p_k`` (one extra operator application per
    iteration).
    """
    b, x0, precond, opts = _prepare(A, b, x0, precond, opts, kwargs)
    if opts.hybrid != "off":
        raise ValueError("fcgls has no hybrid variant")
    name = "fcgls-modified" if modified else "fcgls"
    rec = _Recorder(name, A, b, x0, opts, x_exact)
    store = opts.store_basis
    x = x0.copy()
    r = b - A.apply(x0) if np.any(x0) else b.copy()
    if np.linalg.norm(r) == 0.0:
        return rec.finish(x, "already converged")
    cap = min(opts.max_iter, 4096)
    P, Q = _Columns(A.n, cap), _Columns(A.m, cap)
    qnorm2 = []
    gammas = []
    extras = {"S": [], "S_hat": [], "R": [r.copy()], "scalings": []} if store else None

    rec.tic()
    s = A.apply_adjoint(r)
    s0_norm = float(np.linalg.norm(s))
    scaling = precond.next_inverse(1, x)
    s_hat = scaling.apply_inverse(s)
    p = s_hat
    q = A.apply(p)
    rec.toc()
    if store:
        extras["S"].append(s.copy())
        extras["S_hat"].append(s_hat.copy())
        extras["scalings"].append(scaling)
    reason = "max_iter"
    if s0_norm == 0.0:
        return rec.finish(x, "already converged")
    for k in range(1, opts.max_iter + 1):
        rec.tic()
        qq = float(q @ q)
        if not qq > 0.0:
            rec.toc()
            reason = "breakdown"
            break
        P.append(p)
        Q.append(q)
        qnorm2.append(qq)
        gamma = float(r @ q) / qq
        gammas.append(gamma)
        x = x + gamma * p
        r = r - gamma * q
        s = A.apply_adjoint(r)
        converged = float(np.linalg.norm(s)) <= np.finfo(float).eps * s0_norm
        last = k == opts.max_iter or converged
        if not last:
            scaling = precond.next_inverse(k + 1, x)
            s_hat = scaling.apply_inverse(s)
            w = A.apply(s_hat)
            p = s_hat.copy()
            for j in range(k):
                qj = Q[j]
                theta = -float(w @ qj) / qnorm2[j]
                w += theta * qj
                p += theta * P[j]
            q = A.apply(p) if modified else w
        rec.toc()
        if store:
            extras["R"].append(r.copy())
            extras["S"].append(s.copy())
            if not last:
                extras["S_hat"].append(s_hat.copy())
                extras["scalings"].append(scaling)
        stop = rec.record(k, x, float(np.linalg.norm(r)))
        if converged:
            reason = "converged"
            break
        if stop:
            reason = "discrepancy"
            break
    h = rec.finish(x, reason)
    h.extras["gammas"] = np.array(gammas)
    if store:
        for key in ("S", "S_hat", "R"):
            h.extras[key] = np.column_stack(extras[key])
        h.extras["scalings"] = extras["scalings"]
        h.extras["P"] = P.array.copy()
        h.extras["Q"] = Q.array.copy()
    return h


def lsqr_baseline(A, b, x0=None, opts=None, x_exact=None, **kwargs):
    """Plain LSQR: Golub-Kahan with short recurrences and a Givens-QR update."""
    b, x0, _, opts = _prepare(A, b, x0, None, opts, kwargs)
    rec = _Recorder("lsqr", A, b, x0, opts, x_exact)
    x = x0.copy()
    u = b - A.apply(x0) if np.any(x0) else b.copy()
    beta1 = float(np.linalg.norm(u))
    if beta1 == 0.0:
        return rec.finish(x, "already converged")
    rec.tic()
    u /= beta1
    v = A.apply_adjoint(u)
    alpha = float(np.linalg.norm(v))
    rec.toc()
    if alpha == 0.0:
        return rec.finish(x, "already converged")
    v /= alpha
    qr = GivensQRState(beta1, capacity=min(opts.max_iter, 4096))
    d_prev = None
    alphas, betas = [], [beta1]
    reason = "max_iter"
    for k in range(1, opts.max_iter + 1):
        rec.tic()
        alphas.append(alpha)
        w = A.apply(v) - alpha * u
        beta = float(np.linalg.norm(w))
        happy = beta <= np.finfo(float).eps * alpha
        if not happy:
            u = w / beta
        else:
            beta = 0.0
        betas.append(beta)
        col = np.zeros(k + 1)
        col[k - 1], col[k] = alpha, beta
        gcol = qr.append_column(col)
        d = v.copy()
        if k > 1:
            d -= gcol[k - 2] * d_prev
        d /= gcol[k - 1]
        d_prev = d
        x = x + qr.f[k - 1] * d
        done = happy
        if not happy and k < opts.max_iter:
            v = A.apply_adjoint(u) - beta * v
            alpha = float(np.linalg.norm(v))
            if alpha <= np.finfo(float).eps * beta:
                done = True
            else:
                v /= alpha
        rec.toc()
        stop = rec.record(k, x, abs(qr.phi))
        if done:
            reason = "happy breakdown" if happy else "converged"
            break
        if stop:
            reason = "discrepancy"
            break
    h = rec.finish(x, reason)
    h.extras["alphas"] = np.array(alphas)
    h.extras["betas"] = np.array(betas)
    return h


def eta_coefficients(fa_history, cg_history, ratio_floor=1e-8, max_dispersion=1e-4):
    """Scalars with ``z_k = eta_k * s_hat_{k-1}`` between FaFLSQR and FCGLS.

    Returns ``(measured, formula)``. The measured value is the median of the
    elementwise ratios over entries of ``s_hat_{k-1}`` larger than
    ``ratio_floor`` times its largest entry. The formula is
    ``eta_k = (-1)^(k+1) / (alpha_1 beta_1) * prod_{i=2..k} 1 / (alpha_i beta_i gamma_{i-2})``.

    Raises
    ------
    ValueError
        If the runs lack stored bases or the ratios scatter by more than
        ``max_dispersion`` (relative), i.e. the two runs have drifted apart.
    """
    try:
        Z = fa_history.extras["Z"]
        S_hat = cg_history.extras["S_hat"]
    except KeyError:
        raise ValueError("both histories need store_basis=True") from None
    alphas = fa_history.extras["alphas"]
    betas = fa_history.extras["betas"]
    gammas = cg_history.extras["gammas"]
    K = min(Z.shape[1], S_hat.shape[1], len(alphas))
    measured, formula = [], []
    value = 1.0 / (alphas[0] * betas[0])
    for k in range(1, K + 1):
        if k > 1:
            if k - 2 >= len(gammas):
                break
            value *= -1.0 / (alphas[k - 1] * betas[k - 1] * gammas[k - 2])
        z, sh = Z[:, k - 1], S_hat[:, k - 1]
        mask = np.abs(sh) > ratio_floor * np.max(np.abs(sh))
        ratios = z[mask] / sh[mask]
        med = float(np.median(ratios))
        spread = float(np.max(np.abs(ratios - med))) / abs(med)
        if spread > max_dispersion:
            raise ValueError(f"z_{k} and s_hat_{k - 1} are not collinear (relative ratio spread {spread:.3g})")
        measured.append(med)
        formula.append(value)
    return np.array(measured), np.array(formula)


SOLVERS = {
    "faflsqr": lambda A, b, x0, M, opts, xe: faflsqr(A, b, x0, M, opts, xe),
    "flsqr": lambda A, b, x0, M, opts, xe: flsqr(A, b, x0, M, opts, xe),
    "fcgls": lambda A, b, x0, M, opts, xe: fcgls(A, b, x0, M, opts, xe),
    "fcgls-modified": lambda A, b, x0, M, opts, xe: fcgls(A, b, x0, M, opts, xe, modified=True),
    "lsqr": lambda A, b, x0, M, opts, xe: lsqr_baseline(A, b, x0, opts, xe),
    "hybrid-faflsqr": lambda A, b, x0, M, opts, xe: faflsqr(A, b, x0, M, opts, xe),
    "hybrid-flsqr": lambda A, b, x0, M, opts, xe: flsqr(A, b, x0, M, opts, xe),
}


def run_solver(name, A, b, x0=None, precond=None, opts=None, x_exact=None):
    """Dispatch by solver name (see :data:`SOLVERS`)."""
    if name not in SOLVERS:
        raise ValueError(f"unknown solver {name!r}; expected one of {sorted(SOLVERS)}")
    if precond is not None and not isinstance(precond, FlexiblePreconditioner):
        raise TypeError("precond must be a FlexiblePreconditioner")
    return SOLVERS[name](A, b, x0, precond, opts, x_exact)
