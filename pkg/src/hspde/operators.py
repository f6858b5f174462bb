"""Banded matrix forms of the derivative and drift/noise operators.

Every operator here acts on Hermite coefficient vectors and has bandwidth at
most 4, so matrices are stored band by band, keyed by diagonal offset: the
entry of band d at column n sits at (row n+d, column n).

Each operator comes in two shapes.  The rectangular "exact" form has enough
rows (cols + order) to hold the full image of a truncated vector with no
truncation error; the square "Galerkin" form drops the overflow rows and is
what time steppers use.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .hermite import as_coeffs

__all__ = [
    "A_matrices",
    "BandMatrix",
    "BandedLU",
    "DriftSolver",
    "OperatorParams",
    "compose",
    "d1_matrix",
    "d2_matrix",
    "d3_matrix",
    "d4_matrix",
    "flush_tiny",
    "identity_matrix",
    "is_diagonally_dominant",
    "L_matrix",
]

# Magnitudes below this are flushed to exact zero by the iterative steppers;
# subnormal intermediates otherwise dominate runtime on x86.
FLUSH_FLOOR = 1e-280


def flush_tiny(x: np.ndarray) -> np.ndarray:
    out = np.asarray(x)
    out[np.abs(out) < FLUSH_FLOOR] = 0.0
    return out


@dataclass(frozen=True)
class OperatorParams:
    """Real coefficients (kappa, sigma, b) of the drift and noise operators."""

    kappa: float = 1.0
    sigma: float = 1.0
    b: float = 0.0

    def __post_init__(self):
        for name in ("kappa", "sigma", "b"):
            if not np.isfinite(getattr(self, name)):
                raise ValueError(f"operator coefficient {name} must be finite")


class BandMatrix:
    """Real matrix with nonzero entries on a few diagonals.

    bands maps offset d to a length-cols array holding the entry at
    (n+d, n); positions whose row falls outside [0, rows) are forced to zero
    at construction.
    """

    __slots__ = ("rows", "cols", "bands")

    def __init__(self, rows: int, cols: int, bands: dict):
        if rows < 1 or cols < 1:
            raise ValueError("matrix dimensions must be positive")
        self.rows = int(rows)
        self.cols = int(cols)
        clean = {}
        for d, vals in bands.items():
            d = int(d)
            v = np.array(vals, dtype=np.float64)
            if v.shape != (self.cols,):
                raise ValueError(f"band {d} must have one entry per column")
            n = np.arange(self.cols)
            v[(n + d < 0) | (n + d >= self.rows)] = 0.0
            if np.any(v != 0.0):
                clean[d] = v
        self.bands = clean

    @property
    def offsets(self):
        return sorted(self.bands)

    def apply(self, u) -> np.ndarray:
        """Matrix-vector product; u may be (..., cols), result (..., rows)."""
        u = np.asarray(u, dtype=np.float64)
        if u.shape[-1] != self.cols:
            raise ValueError(f"operand has {u.shape[-1]} coefficients, expected {self.cols}")
        out = np.zeros(u.shape[:-1] + (self.rows,))
        for d, vals in self.bands.items():
            lo = max(0, -d)
            hi = min(self.cols, self.rows - d)
            if hi > lo:
                out[..., lo + d : hi + d] += vals[lo:hi] * u[..., lo:hi]
        return out

    def apply_extended(self, u) -> np.ndarray:
        """Matrix-vector product accumulated in extended precision."""
        u = np.asarray(u, dtype=np.longdouble)
        out = np.zeros(self.rows, dtype=np.longdouble)
        for d, vals in self.bands.items():
            lo = max(0, -d)
            hi = min(self.cols, self.rows - d)
            if hi > lo:
                out[lo + d : hi + d] += vals.astype(np.longdouble)[lo:hi] * u[lo:hi]
        return out

    def to_dense(self) -> np.ndarray:
        M = np.zeros((self.rows, self.cols))
        for d, vals in self.bands.items():
            lo = max(0, -d)
            hi = min(self.cols, self.rows - d)
            n = np.arange(lo, hi)
            M[n + d, n] = vals[lo:hi]
        return M

    def scaled(self, c: float) -> "BandMatrix":
        return BandMatrix(self.rows, self.cols, {d: c * v for d, v in self.bands.items()})

    def to_json(self) -> dict:
        return {
            "rows": self.rows,
            "cols": self.cols,
            "bands": {str(d): [float(x) for x in v] for d, v in self.bands.items()},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "BandMatrix":
        return cls(obj["rows"], obj["cols"], {int(d): v for d, v in obj["bands"].items()})


def _combine(rows: int, cols: int, terms) -> BandMatrix:
    bands: dict = {}
    for coef, mat in terms:
        for d, vals in mat.bands.items():
            acc = bands.setdefault(d, np.zeros(cols))
            acc += coef * vals
    return BandMatrix(rows, cols, bands)


def identity_matrix(N: int) -> BandMatrix:
    return BandMatrix(N, N, {0: np.ones(N)})


def d1_matrix(N: int, exact: bool = True) -> BandMatrix:
    """First derivative: bands sqrt(n/2) at -1 and -sqrt((n+1)/2) at +1."""
    n = np.arange(N, dtype=np.float64)
    bands = {-1: np.sqrt(n / 2.0), 1: -np.sqrt((n + 1.0) / 2.0)}
    return BandMatrix(N + 1 if exact else N, N, bands)


def d2_matrix(N: int, exact: bool = True) -> BandMatrix:
    n = np.arange(N, dtype=np.float64)
    bands = {
        -2: np.sqrt(n * (n - 1.0)) / 2.0,
        0: -(2.0 * n + 1.0) / 2.0,
        2: np.sqrt((n + 1.0) * (n + 2.0)) / 2.0,
    }
    return BandMatrix(N + 2 if exact else N, N, bands)


def d3_matrix(N: int, exact: bool = True) -> BandMatrix:
    n = np.arange(N, dtype=np.float64)
    s = 2.0 * np.sqrt(2.0)
    bands = {
        -3: np.sqrt(n * (n - 1.0) * (n - 2.0)) / s,
        -1: -3.0 * n * np.sqrt(n) / s,
        1: 3.0 * (n + 1.0) * np.sqrt(n + 1.0) / s,
        3: -np.sqrt((n + 1.0) * (n + 2.0) * (n + 3.0)) / s,
    }
    return BandMatrix(N + 3 if exact else N, N, bands)


def d4_matrix(N: int, exact: bool = True) -> BandMatrix:
    n = np.arange(N, dtype=np.float64)
    bands = {
        -4: np.sqrt(n * (n - 1.0) * (n - 2.0) * (n - 3.0)) / 4.0,
        -2: -(2.0 * n - 1.0) * np.sqrt(n * (n - 1.0)) / 2.0,
        0: (3.0 * n**2 + 3.0 * (n + 1.0) ** 2) / 4.0,
        2: -(2.0 * n + 3.0) * np.sqrt((n + 1.0) * (n + 2.0)) / 2.0,
        4: np.sqrt((n + 1.0) * (n + 2.0) * (n + 3.0) * (n + 4.0)) / 4.0,
    }
    return BandMatrix(N + 4 if exact else N, N, bands)


def L_matrix(params: OperatorParams, N: int, exact: bool = True) -> BandMatrix:
    """Drift operator -kappa^2/2 d4 + sigma^2/2 d2 - b d1 (exact rows: N+4)."""
    rows = N + 4 if exact else N
    return _combine(
        rows,
        N,
        [
            (-params.kappa**2 / 2.0, d4_matrix(N, exact=True)),
            (params.sigma**2 / 2.0, d2_matrix(N, exact=True)),
            (-params.b, d1_matrix(N, exact=True)),
        ],
    )


def A_matrices(params: OperatorParams, N: int, exact: bool = True):
    """Noise operators (-sigma d1, kappa d2)."""
    return (
        d1_matrix(N, exact=exact).scaled(-params.sigma),
        d2_matrix(N, exact=exact).scaled(params.kappa),
    )


def compose(ma: BandMatrix, mb: BandMatrix) -> BandMatrix:
    """Exact banded product ma @ mb; offsets form the sumset of the operands'."""
    if ma.cols != mb.rows:
        raise ValueError(f"cannot compose ({ma.rows}x{ma.cols}) with ({mb.rows}x{mb.cols})")
    bands: dict = {}
    for da, va in ma.bands.items():
        for db, vb in mb.bands.items():
            # column n of the product reaches row n+db+da via intermediate n+db
            lo = max(0, -db)
            hi = min(mb.cols, ma.cols - db)
            if hi <= lo:
                continue
            acc = bands.setdefault(da + db, np.zeros(mb.cols))
            n = np.arange(lo, hi)
            acc[lo:hi] += va[n + db] * vb[lo:hi]
    return BandMatrix(ma.rows, mb.cols, bands)


def is_diagonally_dominant(mat: BandMatrix) -> bool:
    """Strict row diagonal dominance (sufficient for pivot-free LU)."""
    if mat.rows != mat.cols:
        return False
    diag = np.abs(mat.bands.get(0, np.zeros(mat.cols)))
    off = np.zeros(mat.cols)
    for d, vals in mat.bands.items():
        if d == 0:
            continue
        lo = max(0, -d)
        hi = min(mat.cols, mat.rows - d)
        rows = np.arange(lo, hi) + d
        off[rows] += np.abs(vals[lo:hi])
    return bool(np.all(diag > off))


class BandedLU:
    """LU factorization of a square banded matrix without pivoting.

    Factors are kept in band storage indexed by row, so forward and backward
    substitution are plain slice arithmetic; solves accept a single vector or
    a batch of right-hand sides along the last axis and perform identical
    per-system arithmetic either way.
    """

    def __init__(self, mat: BandMatrix):
        if mat.rows != mat.cols:
            raise ValueError("banded LU needs a square matrix")
        self.n = n = mat.rows
        self.bw = bw = max((abs(d) for d in mat.bands), default=0)
        # ab[bw + d, i] = A[i, i + d]
        ab = np.zeros((2 * bw + 1, n))
        for d, vals in mat.bands.items():
            lo = max(0, -d)
            hi = min(n, n - d)
            cols = np.arange(lo, hi)
            ab[bw + d, cols + d] = vals[lo:hi]
        low = np.zeros((bw + 1, n))  # low[d, i] = L[i, i - d], d >= 1
        for k in range(n - 1):
            piv = ab[bw, k]
            if piv == 0.0:
                raise np.linalg.LinAlgError(f"zero pivot at row {k} in pivot-free LU")
            for i in range(k + 1, min(k + bw, n - 1) + 1):
                di = i - k
                m = ab[bw - di, i] / piv
                low[di, i] = m
                if m != 0.0:
                    for j in range(k + 1, min(k + bw, n - 1) + 1):
                        ab[bw + j - i, i] -= m * ab[bw + j - k, k]
                ab[bw - di, i] = 0.0
        self._low = low
        self._up = ab[bw:, :]  # _up[d, i] = U[i, i + d]

    def solve(self, rhs) -> np.ndarray:
        x = np.array(rhs, dtype=np.float64, copy=True)
        if x.shape[-1] != self.n:
            raise ValueError(f"right-hand side has {x.shape[-1]} entries, expected {self.n}")
        n, bw = self.n, self.bw
        for i in range(1, n):
            for d in range(1, min(bw, i) + 1):
                m = self._low[d, i]
                if m != 0.0:
                    x[..., i] -= m * x[..., i - d]
        for i in range(n - 1, -1, -1):
            for d in range(1, min(bw, n - 1 - i) + 1):
                c = self._up[d, i]
                if c != 0.0:
                    x[..., i] -= c * x[..., i + d]
            x[..., i] /= self._up[0, i]
        return x


class DriftSolver:
    """Prefactored solver for one implicit step system.

    Uses the pivot-free banded LU when the system is strictly diagonally
    dominant, otherwise falls back to a dense partially pivoted LU.
    """

    def __init__(self, system: BandMatrix):
        if system.rows != system.cols:
            raise ValueError("drift system must be square")
        self.n = system.rows
        self.banded = is_diagonally_dominant(system)
        if self.banded:
            self._lu = BandedLU(system)
        else:
            self._lu = scipy.linalg.lu_factor(system.to_dense())

    def solve(self, rhs) -> np.ndarray:
        """Solve for one vector (n,) or a batch (..., n) of right-hand sides."""
        if self.banded:
            return self._lu.solve(rhs)
        rhs = np.asarray(rhs, dtype=np.float64)
        if rhs.ndim == 1:
            return scipy.linalg.lu_solve(self._lu, rhs)
        flat = rhs.reshape(-1, self.n)
        return scipy.linalg.lu_solve(self._lu, flat.T).T.reshape(rhs.shape)


def apply_dense_oracle(mat: BandMatrix, u) -> np.ndarray:
    """Dense reference product, for validating apply() on small sizes."""
    return mat.to_dense() @ as_coeffs(u)
