"""Matrix-free linear operators.

Every solver in this package touches the system matrix only through
:meth:`LinearOperator.apply` and :meth:`LinearOperator.apply_adjoint`.
Three backends are shipped: dense arrays, compressed-row sparse matrices and
2D periodic convolution with a point-spread function.
"""

from __future__ import annotations

import numpy as np
import scipy.io
import scipy.sparse as sp

__all__ = [
    "LinearOperator",
    "DenseOperator",
    "SparseOperator",
    "ConvolutionOperator",
    "identity",
    "check_adjoint",
    "read_matrix_market",
    "write_matrix_market",
    "read_image",
    "write_image",
]


def _as_vector(x, length, name):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        x = x.reshape(-1)
    if x.shape[0] != length:
        raise ValueError(f"{name}: expected a vector of length {length}, got length {x.shape[0]}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name}: input contains non-finite entries")
    return x


class LinearOperator:
    """Base class: an immutable ``m x n`` real operator.

    Subclasses implement ``_matvec`` and ``_rmatvec`` on already validated
    float vectors.
    """

    def __init__(self, m, n):
        if int(m) < 1 or int(n) < 1:
            raise ValueError(f"operator dimensions must be positive, got ({m}, {n})")
        self._shape = (int(m), int(n))

    @property
    def m(self):
        return self._shape[0]

    @property
    def n(self):
        return self._shape[1]

    @property
    def shape(self):
        return self._shape

    def apply(self, x):
        """Return ``A @ x`` for a length-``n`` vector."""
        return self._matvec(_as_vector(x, self.n, "apply"))

    def apply_adjoint(self, y):
        """Return ``A.T @ y`` for a length-``m`` vector."""
        return self._rmatvec(_as_vector(y, self.m, "apply_adjoint"))

    def _matvec(self, x):
        raise NotImplementedError

    def _rmatvec(self, y):
        raise NotImplementedError

    def fro_norm(self):
        """Frobenius norm of the operator (exact for every shipped backend)."""
        raise NotImplementedError

    def todense(self):
        """Densify column by column. Intended for small operators only."""
        out = np.empty(self.shape)
        e = np.zeros(self.n)
        for j in range(self.n):
            e[j] = 1.0
            out[:, j] = self._matvec(e)
            e[j] = 0.0
        return out

    def __repr__(self):
        return f"{type(self).__name__}(m={self.m}, n={self.n})"


class DenseOperator(LinearOperator):
    def __init__(self, matrix):
        matrix = np.array(matrix, dtype=float, copy=True)
        if matrix.ndim != 2:
            raise ValueError("dense backend needs a 2D array")
        if not np.all(np.isfinite(matrix)):
            raise ValueError("dense backend: matrix contains non-finite entries")
        matrix.setflags(write=False)
        super().__init__(*matrix.shape)
        self.matrix = matrix

    def _matvec(self, x):
        return self.matrix @ x

    def _rmatvec(self, y):
        return self.matrix.T @ y

    def fro_norm(self):
        return float(np.linalg.norm(self.matrix))

    def todense(self):
        return np.array(self.matrix)


class SparseOperator(LinearOperator):
    """Compressed-row backend. Duplicates are summed and column indices sorted."""

    def __init__(self, matrix):
        csr = sp.csr_matrix(matrix, dtype=float, copy=True)
        csr.sum_duplicates()
        csr.sort_indices()
        if not np.all(np.isfinite(csr.data)):
            raise ValueError("sparse backend: matrix contains non-finite entries")
        super().__init__(*csr.shape)
        self.matrix = csr
        self._csr_t = csr.T.tocsr()

    @classmethod
    def from_coo(cls, rows, cols, values, shape):
        return cls(sp.coo_matrix((values, (rows, cols)), shape=shape))

    def _matvec(self, x):
        return self.matrix @ x

    def _rmatvec(self, y):
        return self._csr_t @ y

    def fro_norm(self):
        return float(np.sqrt(np.sum(self.matrix.data ** 2)))

    def todense(self):
        return self.matrix.toarray()


class ConvolutionOperator(LinearOperator):
    """Periodic 2D convolution of a ``side x side`` image with a PSF.

    The PSF centre is at index ``(p // 2, q // 2)`` of the kernel array, so a
    delta image placed at ``(side // 2, side // 2)`` is mapped to the kernel
    itself when the kernel has the full image size. Images are flattened in
    row-major order.
    """

    def __init__(self, psf, side):
        psf = np.array(psf, dtype=float, copy=True)
        side = int(side)
        if psf.ndim != 2:
            raise ValueError("PSF must be a 2D array")
        if psf.shape[0] > side or psf.shape[1] > side:
            raise ValueError(f"PSF of shape {psf.shape} does not fit a {side}x{side} image")
        if not np.all(np.isfinite(psf)):
            raise ValueError("PSF contains non-finite entries")
        super().__init__(side * side, side * side)
        psf.setflags(write=False)
        self.psf = psf
        self.side = side
        padded = np.zeros((side, side))
        padded[: psf.shape[0], : psf.shape[1]] = psf
        padded = np.roll(padded, (-(psf.shape[0] // 2), -(psf.shape[1] // 2)), axis=(0, 1))
        self._otf = np.fft.rfft2(padded)

    def _matvec(self, x):
        img = x.reshape(self.side, self.side)
        return np.fft.irfft2(np.fft.rfft2(img) * self._otf, s=img.shape).reshape(-1)

    def _rmatvec(self, y):
        img = y.reshape(self.side, self.side)
        return np.fft.irfft2(np.fft.rfft2(img) * np.conj(self._otf), s=img.shape).reshape(-1)

    def fro_norm(self):
        # every column is a wrapped copy of the PSF
        return float(self.side * np.linalg.norm(self.psf))


def identity(n):
    """Sparse identity operator of size ``n``."""
    return SparseOperator(sp.identity(int(n), format="csr"))


def check_adjoint(op, trials=10, seed=0):
    """Largest relative adjoint mismatch over random vector pairs.

    Returns ``max |<Ax, y> - <x, A^T y>| / (|Ax||y| + |x||A^T y| + eps)``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = np.random.default_rng(seed)
    worst = 0.0
    eps = np.finfo(float).eps
    for _ in range(trials):
        x = rng.standard_normal(op.n)
        y = rng.standard_normal(op.m)
        ax = op.apply(x)
        aty = op.apply_adjoint(y)
        scale = np.linalg.norm(ax) * np.linalg.norm(y) + np.linalg.norm(x) * np.linalg.norm(aty) + eps
        worst = max(worst, abs(ax @ y - x @ aty) / scale)
    return float(worst)


def read_matrix_market(path):
    """Load a Matrix Market file (coordinate or array) as an operator."""
    data = scipy.io.mmread(str(path))
    if sp.issparse(data):
        return SparseOperator(data)
    return DenseOperator(np.asarray(data))


def write_matrix_market(path, op_or_matrix):
    if isinstance(op_or_matrix, SparseOperator):
        scipy.io.mmwrite(str(path), op_or_matrix.matrix, precision=17)
    elif isinstance(op_or_matrix, LinearOperator):
        scipy.io.mmwrite(str(path), op_or_matrix.todense(), precision=17)
    else:
        mat = op_or_matrix
        if not sp.issparse(mat):
            mat = np.atleast_2d(np.asarray(mat, dtype=float))
        scipy.io.mmwrite(str(path), mat, precision=17)


def read_image(path):
    """Read a whitespace-separated real grid preceded by a ``rows cols`` header."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise ValueError(f"{path}:1: expected header 'rows cols', got {' '.join(header)!r}")
        rows, cols = int(header[0]), int(header[1])
        values = np.array(fh.read().split(), dtype=float)
    if values.size != rows * cols:
        raise ValueError(f"{path}: header announces {rows}x{cols} values, found {values.size}")
    return values.reshape(rows, cols)


def write_image(path, image):
    image = np.atleast_2d(np.asarray(image, dtype=float))
    with open(path, "w") as fh:
        fh.write(f"{image.shape[0]} {image.shape[1]}\n")
        for row in image:
            fh.write(" ".join(f"{v:.17g}" for v in row) + "\n")
