"""Iteration-dependent diagonal preconditioners.

A preconditioner here is described by the diagonal of ``M_k^{-1}``; solvers
ask for iteration ``k`` and hand over the previous iterate.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DiagonalScaling",
    "FlexiblePreconditioner",
    "identity_preconditioner",
    "magnitude_preconditioner",
    "sequence_preconditioner",
    "power_sequence",
    "load_sequence_csv",
    "save_sequence_csv",
]

KINDS = ("identity", "magnitude", "sequence")


@dataclass(frozen=True)
class DiagonalScaling:
    """Diagonal of ``M_k^{-1}``; all entries strictly positive."""

    entries: np.ndarray

    def __post_init__(self):
        entries = np.array(self.entries, dtype=float, copy=True).reshape(-1)
        if not np.all(np.isfinite(entries)):
            raise ValueError("scaling entries must be finite")
        if np.any(entries <= 0):
            raise ValueError("scaling entries must be strictly positive")
        entries.setflags(write=False)
        object.__setattr__(self, "entries", entries)

    @property
    def n(self):
        return self.entries.shape[0]

    def apply_inverse(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape != self.entries.shape:
            raise ValueError(f"apply_inverse: expected length {self.n}, got {v.shape[0] if v.ndim else 0}")
        return self.entries * v


def apply_inverse(scaling, v):
    return scaling.apply_inverse(v)


@dataclass
class FlexiblePreconditioner:
    """Sequence ``M_1^{-1}, M_2^{-1}, ...`` of diagonal scalings.

    kind
        ``"identity"``: always the identity.
        ``"magnitude"``: ``M_1 = I`` and for ``k > 1`` the entries of
        ``M_k^{-1}`` are ``max(|x_{k-1}|, tol)`` taken elementwise.
        ``"sequence"``: replays ``sequence[k - 1]`` verbatim.
    """

    kind: str = "magnitude"
    tol: float = 1e-10
    n: int | None = None
    sequence: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown preconditioner kind {self.kind!r}; expected one of {KINDS}")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        self.sequence = [s if isinstance(s, DiagonalScaling) else DiagonalScaling(s) for s in self.sequence]
        if self.kind == "sequence" and not self.sequence:
            raise ValueError("sequence preconditioner needs at least one scaling")

    def next_inverse(self, k, x_prev=None):
        """Diagonal of ``M_k^{-1}`` for iteration ``k >= 1``."""
        if k < 1:
            raise ValueError(f"iteration index must be >= 1, got {k}")
        if self.kind == "sequence":
            if k > len(self.sequence):
                raise IndexError(f"preconditioner sequence has {len(self.sequence)} entries, iteration {k} requested")
            return self.sequence[k - 1]
        if self.kind == "identity" or k == 1:
            n = self._length(x_prev)
            return DiagonalScaling(np.ones(n))
        if x_prev is None:
            raise ValueError(f"magnitude preconditioner needs the previous iterate at k={k}")
        x_prev = np.asarray(x_prev, dtype=float)
        if not np.all(np.isfinite(x_prev)):
            raise ValueError("previous iterate contains non-finite entries")
        if self.n is not None and x_prev.shape[0] != self.n:
            raise ValueError(f"previous iterate has length {x_prev.shape[0]}, expected {self.n}")
        return DiagonalScaling(np.maximum(np.abs(x_prev), self.tol))

    def _length(self, x_prev):
        if x_prev is not None:
            return np.asarray(x_prev).shape[0]
        if self.n is None:
            raise ValueError("cannot size the identity scaling: pass x_prev or set n")
        return self.n


def identity_preconditioner(n=None):
    return FlexiblePreconditioner("identity", n=n)


def magnitude_preconditioner(tol=1e-10, n=None):
    return FlexiblePreconditioner("magnitude", tol=tol, n=n)


def sequence_preconditioner(scalings):
    scalings = list(scalings)
    n = np.asarray(scalings[0].entries if isinstance(scalings[0], DiagonalScaling) else scalings[0]).shape[0]
    return FlexiblePreconditioner("sequence", n=n, sequence=scalings)


def power_sequence(n, count):
    """``M_i^{-1} = diag(i^2, (i+1)^2, ..., (i+n-1)^2)`` for ``i = 1..count``."""
    return [DiagonalScaling((i + np.arange(n, dtype=float)) ** 2) for i in range(1, count + 1)]


def load_sequence_csv(path):
    """One row per iteration, one column per diagonal entry."""
    rows = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                rows.append(DiagonalScaling([float(v) for v in row]))
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise ValueError(f"{path}: no scalings found")
    if len({s.n for s in rows}) != 1:
        raise ValueError(f"{path}: rows have differing lengths")
    return sequence_preconditioner(rows)


def save_sequence_csv(path, scalings):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for s in scalings:
            entries = s.entries if isinstance(s, DiagonalScaling) else np.asarray(s)
            writer.writerow([f"{v:.17g}" for v in entries])
