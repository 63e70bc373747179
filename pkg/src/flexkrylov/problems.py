"""Test problems with known exact solutions and white-noise data."""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .operators import (
    ConvolutionOperator,
    DenseOperator,
    LinearOperator,
    SparseOperator,
    identity,
    read_matrix_market,
    write_matrix_market,
)

__all__ = [
    "ProblemInstance",
    "add_noise",
    "make_instance",
    "random_dense",
    "random_sparse",
    "heat_like",
    "heat_kernel",
    "gaussian_psf",
    "dot_phantom",
    "blur2d",
    "identity_problem",
    "save_instance",
    "load_instance",
]


@dataclass(frozen=True)
class ProblemInstance:
    A: LinearOperator
    b: np.ndarray
    b_exact: np.ndarray
    e: np.ndarray
    eta: float
    x_exact: np.ndarray
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        A = self.A
        if self.b.shape != (A.m,) or self.b_exact.shape != (A.m,) or self.e.shape != (A.m,):
            raise ValueError("data vectors must have length A.m")
        if self.x_exact.shape != (A.n,):
            raise ValueError("x_exact must have length A.n")
        if not np.array_equal(self.b, self.b_exact + self.e):
            raise ValueError("b must equal b_exact + e")
        nb = np.linalg.norm(self.b_exact)
        if nb > 0 and abs(np.linalg.norm(self.e) / nb - self.eta) > 1e-12 * max(self.eta, 1.0):
            raise ValueError("noise vector does not match the declared noise level")
        if np.linalg.norm(A.apply(self.x_exact) - self.b_exact) > 1e-12 * max(nb, np.finfo(float).tiny):
            raise ValueError("A x_exact does not reproduce b_exact")

    @property
    def noise_norm(self):
        return float(np.linalg.norm(self.e))


def add_noise(b_exact, eta, seed=0):
    """Return ``(b, e)`` with Gaussian white ``e`` scaled to ``|e| = eta |b_exact|``."""
    if eta < 0:
        raise ValueError("noise level must be nonnegative")
    b_exact = np.asarray(b_exact, dtype=float)
    if eta == 0:
        e = np.zeros_like(b_exact)
        return b_exact.copy(), e
    nb = np.linalg.norm(b_exact)
    if nb == 0:
        raise ValueError("cannot scale noise relative to a zero right-hand side")
    g = np.random.default_rng(seed).standard_normal(b_exact.shape[0])
    e = (eta * nb / np.linalg.norm(g)) * g
    return b_exact + e, e


def make_instance(A, x_exact, eta=0.0, seed=0, **params):
    x_exact = np.asarray(x_exact, dtype=float)
    b_exact = A.apply(x_exact)
    b, e = add_noise(b_exact, eta, seed)
    params = dict(params, eta=eta, seed=seed)
    return ProblemInstance(A, b, b_exact, e, float(eta), x_exact, params)


def random_dense(n, seed=0, eta=1e-4, m=None):
    """Standard normal ``m x n`` matrix and exact solution."""
    m = n if m is None else m
    if n < 2 or m < 2:
        raise ValueError("random_dense needs at least 2 rows and columns")
    rng = np.random.default_rng(seed)
    A = DenseOperator(rng.standard_normal((m, n)))
    x = rng.standard_normal(n)
    return make_instance(A, x, eta, seed, generator="random_dense", n=n, m=m)


def random_sparse(n, density=0.05, seed=0, eta=1e-4):
    """Square sparse matrix with a uniformly random pattern and normal values."""
    if n < 2:
        raise ValueError("random_sparse needs n >= 2")
    if not 0 < density <= 1:
        raise ValueError("density must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    mat = sp.random(n, n, density=density, format="csr", random_state=rng, data_rvs=rng.standard_normal)
    A = SparseOperator(mat)
    x = rng.standard_normal(n)
    return make_instance(A, x, eta, seed, generator="random_sparse", n=n, density=density)


def heat_kernel(t):
    """``t^{-3/2} exp(-1/(4t)) / (2 sqrt(pi))`` for ``t > 0``."""
    t = np.asarray(t, dtype=float)
    return t ** -1.5 * np.exp(-1.0 / (4.0 * t)) / (2.0 * np.sqrt(np.pi))


def heat_solution(s):
    return np.exp(-(((s - 0.3) / 0.1) ** 2)) + 0.6 * np.exp(-(((s - 0.7) / 0.08) ** 2))


def heat_like(n, seed=0, eta=1e-4):
    """Lower triangular Volterra problem with the heat kernel on ``[0, 1]``.

    Midpoint rule with step ``h = 1/n``: ``A[i, j] = h * k((i - j + 1/2) h)``
    for ``j <= i``. The exact solution is a two-bump profile sampled at the
    midpoints. The source term is deterministic; ``seed`` drives the noise.
    """
    if n < 16:
        raise ValueError("heat_like needs n >= 16")
    h = 1.0 / n
    c = h * heat_kernel((np.arange(n) + 0.5) * h)
    i, j = np.indices((n, n))
    A = np.where(j <= i, c[np.clip(i - j, 0, n - 1)], 0.0)
    x = heat_solution((np.arange(n) + 0.5) * h)
    return make_instance(DenseOperator(A), x, eta, seed, generator="heat_like", n=n)


def gaussian_psf(side, sigma):
    """Normalized Gaussian on a ``side x side`` grid, centred at ``side // 2``."""
    if sigma <= 0:
        raise ValueError("psf_sigma must be positive")
    d = np.arange(side) - side // 2
    g = np.exp(-(d[:, None] ** 2 + d[None, :] ** 2) / (2.0 * sigma ** 2))
    return g / g.sum()


def dot_phantom(side, count=None, seed=0):
    """Sparse nonnegative spike image: ``count`` positive impulses on zero."""
    rng = np.random.default_rng(seed)
    if count is None:
        count = max(1, side * side // 50)
    count = min(count, side * side)
    img = np.zeros(side * side)
    where = rng.choice(side * side, size=count, replace=False)
    img[where] = rng.uniform(0.5, 1.0, size=count)
    return img.reshape(side, side)


def blur2d(side, psf_sigma=2.0, phantom="sparse-dots", seed=0, eta=5e-2, dots=None):
    """Periodic Gaussian deblurring of a ``side x side`` image.

    ``phantom`` is ``"sparse-dots"``, ``"delta"`` or a 2D array.
    """
    if side < 16:
        raise ValueError("blur2d needs side >= 16")
    A = ConvolutionOperator(gaussian_psf(side, psf_sigma), side)
    if isinstance(phantom, str):
        if phantom == "sparse-dots":
            img = dot_phantom(side, dots, seed)
        elif phantom == "delta":
            img = np.zeros((side, side))
            img[side // 2, side // 2] = 1.0
        else:
            raise ValueError(f"unknown phantom {phantom!r}")
        label = phantom
    else:
        img = np.asarray(phantom, dtype=float)
        if img.shape != (side, side):
            raise ValueError(f"supplied image must be {side}x{side}")
        label = "supplied"
    return make_instance(A, img.reshape(-1), eta, seed, generator="blur2d", side=side,
                         psf_sigma=psf_sigma, phantom=label)


def identity_problem(n=3, seed=0, eta=0.0):
    rng = np.random.default_rng(seed)
    return make_instance(identity(n), rng.standard_normal(n), eta, seed, generator="identity", n=n)


def save_instance(directory, inst):
    """Write ``A.mtx``, plain-text vectors and ``manifest.json`` into ``directory``."""
    os.makedirs(directory, exist_ok=True)
    write_matrix_market(os.path.join(directory, "A.mtx"), inst.A)
    for name in ("b", "b_exact", "e", "x_exact"):
        np.savetxt(os.path.join(directory, f"{name}.txt"), getattr(inst, name), fmt="%.17g")
    manifest = {k: v for k, v in inst.params.items() if isinstance(v, (int, float, str, bool, type(None)))}
    manifest["eta"] = inst.eta
    with open(os.path.join(directory, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def load_instance(directory):
    A = read_matrix_market(os.path.join(directory, "A.mtx"))
    vec = {name: np.atleast_1d(np.loadtxt(os.path.join(directory, f"{name}.txt")))
           for name in ("b_exact", "e", "x_exact")}
    with open(os.path.join(directory, "manifest.json")) as fh:
        params = json.load(fh)
    return ProblemInstance(A, vec["b_exact"] + vec["e"], vec["b_exact"], vec["e"], float(params["eta"]),
                           vec["x_exact"], params)
