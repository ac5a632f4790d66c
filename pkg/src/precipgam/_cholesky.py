"""Sparse Cholesky factorization with selected inversion.

Up-looking supernode-free Cholesky in the style of CSparse, compiled with
numba. The symbolic phase (fill-reducing ordering, elimination tree, column
pattern of L) depends only on the sparsity pattern and is reused across
numerical factorizations, which is what the hyperparameter loop needs.
"""
from __future__ import annotations

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    """Raised when a non-positive pivot is met during factorization."""

    def __init__(self, pivot: int, value: float):
        self.pivot = int(pivot)
        self.value = float(value)
        super().__init__(
            f"matrix is not positive definite: pivot {self.pivot} "
            f"(original index) has value {self.value:.6g}"
        )


@numba.njit(cache=True)
def _etree(n, Cp, Ci):
    parent = np.full(n, -1, dtype=np.int64)
    ancestor = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        for p in range(Cp[k], Cp[k + 1]):
            i = Ci[p]
            while i != -1 and i < k:
                inext = ancestor[i]
                ancestor[i] = k
                if inext == -1:
                    parent[i] = k
                i = inext
    return parent


@numba.njit(cache=True)
def _ereach(k, Cp, Ci, parent, s, w):
    # nonzero pattern of row k of L, returned in s[top:n]
    n = parent.shape[0]
    top = n
    w[k] = k
    for p in range(Cp[k], Cp[k + 1]):
        i = Ci[p]
        if i > k:
            continue
        length = 0
        while w[i] != k:
            s[length] = i
            length += 1
            w[i] = k
            i = parent[i]
        while length > 0:
            top -= 1
            length -= 1
            s[top] = s[length]
    return top


@numba.njit(cache=True)
def _symbolic(n, Cp, Ci, parent):
    s = np.empty(n, dtype=np.int64)
    w = np.full(n, -1, dtype=np.int64)
    counts = np.ones(n, dtype=np.int64)
    for k in range(n):
        top = _ereach(k, Cp, Ci, parent, s, w)
        for t in range(top, n):
            counts[s[t]] += 1
    Lp = np.zeros(n + 1, dtype=np.int64)
    for j in range(n):
        Lp[j + 1] = Lp[j] + counts[j]
    Li = np.empty(Lp[n], dtype=np.int64)
    nxt = Lp[:-1].copy()
    w[:] = -1
    for k in range(n):
        top = _ereach(k, Cp, Ci, parent, s, w)
        for t in range(top, n):
            i = s[t]
            Li[nxt[i]] = k
            nxt[i] += 1
        Li[nxt[k]] = k
        nxt[k] += 1
    return Lp, Li


@numba.njit(cache=True)
def _numeric(n, Cp, Ci, Cx, parent, Lp, Li):
    # returns (Lx, failed_pivot, pivot_value); failed_pivot == -1 on success
    Lx = np.zeros(Lp[n], dtype=np.float64)
    x = np.zeros(n, dtype=np.float64)
    s = np.empty(n, dtype=np.int64)
    w = np.full(n, -1, dtype=np.int64)
    nxt = Lp[:-1].copy()
    for k in range(n):
        top = _ereach(k, Cp, Ci, parent, s, w)
        x[k] = 0.0
        for p in range(Cp[k], Cp[k + 1]):
            if Ci[p] <= k:
                x[Ci[p]] += Cx[p]
        d = x[k]
        x[k] = 0.0
        for t in range(top, n):
            i = s[t]
            lki = x[i] / Lx[Lp[i]]
            x[i] = 0.0
            for p in range(Lp[i] + 1, nxt[i]):
                x[Li[p]] -= Lx[p] * lki
            d -= lki * lki
            Lx[nxt[i]] = lki
            nxt[i] += 1
        if not d > 0.0:
            return Lx, k, d
        Lx[nxt[k]] = np.sqrt(d)
        nxt[k] += 1
    return Lx, -1, 0.0


@numba.njit(cache=True)
def _lsolve(n, Lp, Li, Lx, b):
    x = b.copy()
    for j in range(n):
        x[j] /= Lx[Lp[j]]
        xj = x[j]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            x[Li[p]] -= Lx[p] * xj
    return x


@numba.njit(cache=True)
def _ltsolve(n, Lp, Li, Lx, b):
    x = b.copy()
    for j in range(n - 1, -1, -1):
        acc = x[j]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            acc -= Lx[p] * x[Li[p]]
        x[j] = acc / Lx[Lp[j]]
    return x


@numba.njit(cache=True)
def _find(Li, lo, hi, row):
    # binary search for row in the sorted slice Li[lo:hi]
    while lo < hi:
        mid = (lo + hi) // 2
        if Li[mid] < row:
            lo = mid + 1
        else:
            hi = mid
    return lo


@numba.njit(cache=True)
def _takahashi(n, Lp, Li, Lx):
    # entries of the inverse on the pattern of L (lower triangle)
    Z = np.zeros(Lp[n], dtype=np.float64)
    for i in range(n - 1, -1, -1):
        start = Lp[i] + 1
        stop = Lp[i + 1]
        lii = Lx[Lp[i]]
        for p in range(start, stop):
            j = Li[p]
            acc = 0.0
            for q in range(start, stop):
                k = Li[q]
                if k >= j:
                    pos = _find(Li, Lp[j], Lp[j + 1], k)
                else:
                    pos = _find(Li, Lp[k], Lp[k + 1], j)
                acc += Lx[q] * Z[pos]
            Z[p] = -acc / lii
        acc = 0.0
        for q in range(start, stop):
            acc += Lx[q] * Z[q]
        Z[Lp[i]] = 1.0 / (lii * lii) - acc / lii
    return Z


def fill_reducing_order(pattern: sp.spmatrix) -> np.ndarray:
    """Minimum-degree ordering on the pattern of a symmetric matrix.

    Returns ``perm`` such that ``A[perm][:, perm]`` is the reordered matrix.
    """
    A = sp.csc_matrix(pattern, dtype=float, copy=True)
    n = A.shape[0]
    if n <= 2:
        return np.arange(n)
    A.data[:] = -1.0
    deg = np.diff(A.indptr)
    # strictly diagonally dominant stand-in with the same pattern
    A = (A + sp.diags(deg.astype(float) + 2.0)).tocsc()
    lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                   options={"SymmetricMode": True})
    return np.argsort(lu.perm_c)


class SymbolicCholesky:
    """Ordering and nonzero structure of L for a fixed symmetric pattern.

    ``template`` holds the full (both triangles) pattern. Matrices passed to
    :meth:`factor` must have their nonzeros inside this pattern.
    """

    def __init__(self, template: sp.spmatrix, perm: np.ndarray | None = None):
        T = sp.csc_matrix(template, dtype=float)
        T = (T + T.T).tocsc()
        T.sum_duplicates()
        T.sort_indices()
        n = T.shape[0]
        self.n = n
        self.perm = fill_reducing_order(T) if perm is None else np.asarray(perm)
        self.pinv = np.empty(n, dtype=np.int64)
        self.pinv[self.perm] = np.arange(n)

        cols = np.repeat(np.arange(n), np.diff(T.indptr))
        rows = T.indices.astype(np.int64)
        self._keys = cols.astype(np.int64) * n + rows
        pr, pc = self.pinv[rows], self.pinv[cols]
        upper = pr <= pc
        src = np.flatnonzero(upper)
        order = np.lexsort((pr[upper], pc[upper]))
        self._src = src[order]
        self.Ci = pr[upper][order].astype(np.int64)
        self.Cp = np.zeros(n + 1, dtype=np.int64)
        np.add.at(self.Cp, pc[upper][order] + 1, 1)
        self.Cp = np.cumsum(self.Cp)
        self.parent = _etree(n, self.Cp, self.Ci)
        self.Lp, self.Li = _symbolic(n, self.Cp, self.Ci, self.parent)
        self._lcols = np.repeat(np.arange(n), np.diff(self.Lp))
        self._lkeys = self._lcols * n + self.Li

    @property
    def nnz_factor(self) -> int:
        return int(self.Lp[-1])

    def scatter(self, A: sp.spmatrix) -> np.ndarray:
        """Values of ``A`` aligned with the template's column-major entries."""
        A = sp.csc_matrix(A)
        A.sum_duplicates()
        n = self.n
        cols = np.repeat(np.arange(n), np.diff(A.indptr)).astype(np.int64)
        keys = cols * n + A.indices
        pos = np.searchsorted(self._keys, keys)
        pos = np.minimum(pos, len(self._keys) - 1)
        if not np.all(self._keys[pos] == keys):
            raise ValueError("matrix has nonzeros outside the symbolic pattern")
        out = np.zeros(len(self._keys))
        out[pos] = A.data
        return out

    def factor(self, A: sp.spmatrix) -> "CholeskyFactor":
        vals = self.scatter(A)
        Cx = vals[self._src]
        Lx, bad, dval = _numeric(self.n, self.Cp, self.Ci, Cx, self.parent,
                                 self.Lp, self.Li)
        if bad >= 0:
            raise NotPositiveDefiniteError(self.perm[bad], dval)
        return CholeskyFactor(self, Lx)

    def locate(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Positions in L's storage of entries (row, col) in original indices.

        Returns -1 where the entry is outside the factor pattern.
        """
        r = self.pinv[np.asarray(rows, dtype=np.int64)]
        c = self.pinv[np.asarray(cols, dtype=np.int64)]
        lo, hi = np.minimum(r, c), np.maximum(r, c)
        keys = lo * self.n + hi
        pos = np.searchsorted(self._lkeys, keys)
        pos = np.minimum(pos, len(self._lkeys) - 1)
        return np.where(self._lkeys[pos] == keys, pos, -1)


class CholeskyFactor:
    """Numerical factor ``P A P^T = L L^T``; immutable once built."""

    def __init__(self, symbolic: SymbolicCholesky, Lx: np.ndarray):
        self.symbolic = symbolic
        self.Lx = Lx
        self._selinv = None

    @property
    def n(self) -> int:
        return self.symbolic.n

    def diag(self) -> np.ndarray:
        return self.Lx[self.symbolic.Lp[:-1]]

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(self.diag())))

    def solve(self, b: np.ndarray) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if b.ndim == 2:
            return np.column_stack([self.solve(col) for col in b.T])
        s = self.symbolic
        y = _lsolve(s.n, s.Lp, s.Li, self.Lx, b[s.perm])
        z = _ltsolve(s.n, s.Lp, s.Li, self.Lx, y)
        out = np.empty_like(z)
        out[s.perm] = z
        return out

    def solve_Lt(self, z: np.ndarray) -> np.ndarray:
        """``P^T L^{-T} z``: maps white noise to a draw with covariance A^{-1}."""
        s = self.symbolic
        y = _ltsolve(s.n, s.Lp, s.Li, self.Lx, np.asarray(z, dtype=float))
        out = np.empty_like(y)
        out[s.perm] = y
        return out

    def selected_inverse(self) -> np.ndarray:
        """Inverse entries on the pattern of L (Takahashi recursions)."""
        if self._selinv is None:
            s = self.symbolic
            self._selinv = _takahashi(s.n, s.Lp, s.Li, self.Lx)
        return self._selinv

    def inv_diag(self) -> np.ndarray:
        s = self.symbolic
        Z = self.selected_inverse()
        out = np.empty(s.n)
        out[s.perm] = Z[s.Lp[:-1]]
        return out

    def inv_entries(self, rows, cols) -> np.ndarray:
        """Entries of the inverse at (rows[k], cols[k]); must lie in the pattern."""
        pos = self.symbolic.locate(rows, cols)
        if np.any(pos < 0):
            raise KeyError("requested inverse entries outside the factor pattern")
        return self.selected_inverse()[pos]
