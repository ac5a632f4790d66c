"""Finite-element SPDE precision matrices, AR(1) time structure and GMRF tools.

The spatial precision follows the non-stationary SPDE construction with
nu = 1 and a lumped mass matrix::

    Q_S = T (K^2 C K^2 + K^2 G + G K^2 + G C^{-1} G) T

with ``K = diag(kappa)``, ``T = diag(tau)`` evaluated at mesh vertices and
``log kappa = theta1 + x theta2``, ``log tau = theta3 + x theta4``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ._cholesky import CholeskyFactor, NotPositiveDefiniteError, SymbolicCholesky
from .mesh import TriangleMesh, signed_areas

__all__ = [
    "FemMatrices", "NonStatParams", "SparsePrecision", "NotPositiveDefiniteError",
    "assemble_fem", "spatial_precision", "SpatialPrecisionBuilder", "ar1_precision",
    "ar1_covariance", "kronecker", "sample_gmrf", "matern_correlation",
    "matern_variance", "dump_coo",
]


@dataclass
class FemMatrices:
    c: np.ndarray        # lumped mass diagonal
    G: sp.csc_matrix     # stiffness

    @property
    def C(self) -> sp.dia_matrix:
        return sp.diags(self.c)


def assemble_fem(mesh: TriangleMesh) -> FemMatrices:
    """Piecewise-linear mass (lumped) and stiffness matrices."""
    tri = mesh.triangles
    area = signed_areas(mesh.vertices, tri)
    if np.any(np.abs(area) <= 1e-14):
        k = int(np.flatnonzero(np.abs(area) <= 1e-14)[0])
        raise ValueError(f"triangle {k} has zero area")
    area = np.abs(area)
    P = mesh.vertices[tri]
    # edge opposite each local vertex
    e = np.stack([P[:, 2] - P[:, 1], P[:, 0] - P[:, 2], P[:, 1] - P[:, 0]], axis=1)
    local = np.einsum("tad,tbd->tab", e, e) / (4.0 * area[:, None, None])
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    n = mesh.n_vertices
    G = sp.csc_matrix((local.ravel(), (rows, cols)), shape=(n, n))
    G.sum_duplicates()
    c = np.bincount(tri.ravel(), weights=np.repeat(area / 3.0, 3), minlength=n)
    return FemMatrices(c, G)


@dataclass
class NonStatParams:
    theta: np.ndarray
    kappa_vec: np.ndarray
    tau_vec: np.ndarray

    @classmethod
    def from_theta(cls, theta, elevation_km) -> "NonStatParams":
        theta = np.asarray(theta, dtype=float)
        x = np.asarray(elevation_km, dtype=float)
        return cls(theta, np.exp(theta[0] + x * theta[1]), np.exp(theta[2] + x * theta[3]))


class SparsePrecision:
    """Symmetric positive-definite sparse matrix with cached Cholesky factor.

    ``symbolic`` may be shared between matrices with the same pattern.
    """

    def __init__(self, matrix: sp.spmatrix, symbolic: SymbolicCholesky | None = None):
        self.matrix = sp.csc_matrix(matrix)
        self._symbolic = symbolic
        self._factor: CholeskyFactor | None = None

    @property
    def shape(self):
        return self.matrix.shape

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    @property
    def symbolic(self) -> SymbolicCholesky:
        if self._symbolic is None:
            self._symbolic = SymbolicCholesky(self.matrix)
        return self._symbolic

    def factor(self) -> CholeskyFactor:
        if self._factor is None:
            self._factor = self.symbolic.factor(self.matrix)
        return self._factor

    def solve(self, b) -> np.ndarray:
        return self.factor().solve(b)

    def logdet(self) -> float:
        return self.factor().logdet()


def _aligned(pattern: sp.csr_matrix, M: sp.spmatrix) -> np.ndarray:
    """Values of M on the (superset) pattern of ``pattern``, in its data order."""
    n = pattern.shape[0]
    rows = np.repeat(np.arange(n), np.diff(pattern.indptr))
    keys = rows.astype(np.int64) * n + pattern.indices
    M = sp.csr_matrix(M)
    M.sum_duplicates()
    mrows = np.repeat(np.arange(n), np.diff(M.indptr))
    mkeys = mrows.astype(np.int64) * n + M.indices
    out = np.zeros(len(keys))
    out[np.searchsorted(keys, mkeys)] = M.data
    return out


class SpatialPrecisionBuilder:
    """Fast repeated evaluation of Q_S(theta) on one mesh.

    The pattern of ``G C^{-1} G`` contains every other term, so each
    evaluation is a vectorised update of one fixed data array.
    """

    def __init__(self, fem: FemMatrices, elevation_km):
        self.fem = fem
        self.x = np.asarray(elevation_km, dtype=float)
        G = sp.csr_matrix(fem.G)
        GCG = (G @ sp.diags(1.0 / fem.c) @ G).tocsr()
        # structural union with G and the diagonal, kept even where values vanish
        pat = (abs(GCG) + abs(G) + sp.eye(G.shape[0])).tocsr()
        pat.sum_duplicates()
        pat.sort_indices()
        self.pattern = pat
        self.rows = np.repeat(np.arange(pat.shape[0]), np.diff(pat.indptr))
        self.cols = pat.indices
        self.g = _aligned(pat, G)
        self.gcg = _aligned(pat, GCG)
        self.on_diag = self.rows == self.cols
        self._symbolic = None

    @property
    def n(self) -> int:
        return self.pattern.shape[0]

    def values(self, kappa: np.ndarray, tau: np.ndarray) -> np.ndarray:
        k2 = kappa ** 2
        r, c = self.rows, self.cols
        v = (k2[r] + k2[c]) * self.g + self.gcg
        v[self.on_diag] += (k2 ** 2 * self.fem.c)[r[self.on_diag]]
        return tau[r] * tau[c] * v

    def matrix(self, kappa, tau) -> sp.csr_matrix:
        pat = self.pattern
        return sp.csr_matrix((self.values(kappa, tau), pat.indices, pat.indptr), shape=pat.shape)

    def __call__(self, theta) -> SparsePrecision:
        p = NonStatParams.from_theta(theta, self.x)
        if self._symbolic is None:
            self._symbolic = SymbolicCholesky(self.pattern)
        return SparsePrecision(self.matrix(p.kappa_vec, p.tau_vec), self._symbolic)


def spatial_precision(fem: FemMatrices, p: NonStatParams) -> SparsePrecision:
    """Q_S = T (K^2 C K^2 + K^2 G + G K^2 + G C^{-1} G) T."""
    n = len(fem.c)
    if len(p.kappa_vec) != n or len(p.tau_vec) != n:
        raise ValueError("parameter vectors do not match the mesh size")
    if np.any(p.kappa_vec <= 0) or np.any(p.tau_vec <= 0):
        raise ValueError("kappa and tau must be positive")
    builder = SpatialPrecisionBuilder(fem, np.zeros(n))
    return SparsePrecision(builder.matrix(p.kappa_vec, p.tau_vec))


def ar1_precision(a: float, n_t: int = 12) -> SparsePrecision:
    """Precision of a unit-variance AR(1) series: inverse has entries a^|k-l|."""
    if not abs(a) < 1:
        raise ValueError(f"AR(1) coefficient must satisfy |a| < 1, got {a}")
    if n_t < 1:
        raise ValueError("n_t must be at least 1")
    if n_t == 1:
        return SparsePrecision(sp.csc_matrix(np.ones((1, 1))))
    d = np.full(n_t, 1.0 + a * a)
    d[0] = d[-1] = 1.0
    off = np.full(n_t - 1, -a)
    Q = sp.diags([off, d, off], [-1, 0, 1], format="csc") / (1.0 - a * a)
    return SparsePrecision(Q)


def ar1_covariance(a: float, n_t: int = 12) -> np.ndarray:
    k = np.arange(n_t)
    return a ** np.abs(k[:, None] - k[None, :])


def ar1_logdet(a: float, n_t: int) -> float:
    # det of the unit-variance AR(1) precision is (1 - a^2)^{-(n_t - 1)}
    return -(n_t - 1) * np.log1p(-a * a)


def kronecker(qt: SparsePrecision, qs: SparsePrecision) -> SparsePrecision:
    """Time-major Kronecker product: block (k, l) equals qt[k, l] * qs."""
    return SparsePrecision(sp.kron(qt.matrix, qs.matrix, format="csc"))


def sample_gmrf(Q: SparsePrecision, seed: int | np.random.Generator, size: int | None = None):
    """Draw x ~ N(0, Q^{-1}) as P^T L^{-T} z."""
    rng = np.random.default_rng(seed)
    f = Q.factor()
    if size is None:
        return f.solve_Lt(rng.standard_normal(f.n))
    return np.stack([f.solve_Lt(rng.standard_normal(f.n)) for _ in range(size)])


def matern_variance(kappa: float, tau: float) -> float:
    """Marginal variance 1 / (4 pi kappa^2 tau^2) of the nu = 1 field."""
    return 1.0 / (4.0 * np.pi * kappa ** 2 * tau ** 2)


def matern_correlation(h, kappa: float):
    """nu = 1 Matern correlation (kappa h) K_1(kappa h)."""
    from scipy.special import kv

    h = np.asarray(h, dtype=float)
    kh = kappa * h
    with np.errstate(invalid="ignore"):
        out = np.where(kh > 0, kh * kv(1, np.where(kh > 0, kh, 1.0)), 1.0)
    return out


def dump_coo(Q, path) -> None:
    """Write the lower triangle of Q as 'i j value' lines."""
    M = sp.tril(Q.matrix if isinstance(Q, SparsePrecision) else Q).tocoo()
    order = np.lexsort((M.row, M.col))
    with open(path, "w") as fh:
        for i, j, v in zip(M.row[order], M.col[order], M.data[order]):
            fh.write(f"{int(i)} {int(j)} {float(v)!r}\n")
