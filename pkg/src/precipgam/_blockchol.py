"""Cholesky factor of block-tridiagonal matrices with a dense arrow tail.

The space-time posterior precision has ``K`` time blocks of size ``m``
coupled only to their neighbours, plus ``t`` fixed effects coupled to
everything. Blocks are dense, so the factorization and the selected
inverse run on BLAS kernels.

Notation: ``L[k]`` diagonal factor blocks, ``M[k] = L_{k+1,k}`` and
``P[k] = L_{tail,k}``, ``T`` the tail factor.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.linalg import LinAlgError, cholesky, solve_triangular

from ._cholesky import NotPositiveDefiniteError


def split_blocks(H: sp.spmatrix, K: int, m: int):
    """Dense blocks (D, B, E, F) of a symmetric matrix with the arrow layout.

    ``D[k] = H_kk``, ``B[k] = H_{k+1,k}``, ``E[k] = H_{tail,k}``, ``F = H_tail``.
    """
    H = sp.csr_matrix(H)
    H.sum_duplicates()
    H = H.tocoo()
    n = H.shape[0]
    t = n - K * m
    r, c, v = H.row, H.col, H.data
    br = np.minimum(r // m, K)
    bc = np.minimum(c // m, K)
    lr, lc = r - br * m, c - bc * m
    D = np.zeros((K, m, m))
    B = np.zeros((max(K - 1, 0), m, m))
    E = np.zeros((K, t, m))
    F = np.zeros((t, t))
    far = (br < K) & (bc < K) & (np.abs(br - bc) > 1)
    if np.any(far & (v != 0)):
        raise ValueError("matrix is not block tridiagonal")
    s = (br == bc) & (br < K)
    D[br[s], lr[s], lc[s]] = v[s]
    s = (br == bc + 1) & (br < K)
    B[bc[s], lr[s], lc[s]] = v[s]
    s = (br == K) & (bc < K)
    E[bc[s], lr[s], lc[s]] = v[s]
    s = (br == K) & (bc == K)
    F[lr[s], lc[s]] = v[s]
    return D, B, E, F


def _chol(S, offset):
    try:
        return cholesky(S, lower=True, check_finite=False)
    except LinAlgError:
        d = np.diag(S)
        k = int(np.argmin(d)) if len(d) else 0
        raise NotPositiveDefiniteError(offset + k, float(d[k]) if len(d) else np.nan) from None


class BlockArrowFactor:
    """``H = L L^T`` for the block-tridiagonal-plus-tail layout."""

    def __init__(self, D, B, E, F):
        K, m, _ = D.shape
        t = F.shape[0]
        self.K, self.m, self.t = K, m, t
        self.L = np.empty_like(D)
        self.M = np.empty_like(B)
        self.P = np.empty((K, t, m))
        Fs = F.copy()
        for k in range(K):
            S = D[k].copy()
            Et = E[k].copy()
            if k > 0:
                S -= self.M[k - 1] @ self.M[k - 1].T
                Et -= self.P[k - 1] @ self.M[k - 1].T
            Lk = _chol(S, k * m)
            self.L[k] = Lk
            if k < K - 1:
                self.M[k] = solve_triangular(Lk, B[k].T, lower=True, check_finite=False).T
            self.P[k] = solve_triangular(Lk, Et.T, lower=True, check_finite=False).T
            Fs -= self.P[k] @ self.P[k].T
        self.T = _chol(Fs, K * m) if t else np.zeros((0, 0))
        self._inv = None

    @classmethod
    def from_sparse(cls, H, K, m) -> "BlockArrowFactor":
        return cls(*split_blocks(H, K, m))

    @property
    def n(self) -> int:
        return self.K * self.m + self.t

    def diag(self) -> np.ndarray:
        return np.concatenate([np.diagonal(self.L, axis1=1, axis2=2).ravel(), np.diag(self.T)])

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(self.diag())))

    def _forward(self, b):
        K, m = self.K, self.m
        x = np.empty_like(b)
        tail = b[K * m:].copy()
        prev = None
        for k in range(K):
            rhs = b[k * m:(k + 1) * m].copy()
            if prev is not None:
                rhs -= self.M[k - 1] @ prev
            prev = solve_triangular(self.L[k], rhs, lower=True, check_finite=False)
            x[k * m:(k + 1) * m] = prev
            tail -= self.P[k] @ prev
        if self.t:
            x[K * m:] = solve_triangular(self.T, tail, lower=True, check_finite=False)
        return x

    def _backward(self, x):
        K, m = self.K, self.m
        y = np.empty_like(x)
        yt = solve_triangular(self.T, x[K * m:], lower=True, trans="T",
                              check_finite=False) if self.t else x[K * m:]
        y[K * m:] = yt
        nxt = None
        for k in range(K - 1, -1, -1):
            rhs = x[k * m:(k + 1) * m] - self.P[k].T @ yt
            if nxt is not None:
                rhs -= self.M[k].T @ nxt
            nxt = solve_triangular(self.L[k], rhs, lower=True, trans="T", check_finite=False)
            y[k * m:(k + 1) * m] = nxt
        return y

    def solve(self, b) -> np.ndarray:
        b = np.asarray(b, dtype=float)
        return self._backward(self._forward(b))

    def solve_Lt(self, z) -> np.ndarray:
        """``L^{-T} z``: white noise to a draw with covariance H^{-1}."""
        return self._backward(np.asarray(z, dtype=float))

    # --- selected inverse
    def _selected_inverse(self):
        if self._inv is not None:
            return self._inv
        K, m, t = self.K, self.m, self.t
        Zd = np.empty((K, m, m))
        Zo = np.empty((max(K - 1, 0), m, m))      # Z_{k+1,k}
        Zt = np.empty((K, t, m))                  # Z_{tail,k}
        if t:
            Tinv = solve_triangular(self.T, np.eye(t), lower=True, check_finite=False)
            Ztt = Tinv.T @ Tinv
        else:
            Ztt = np.zeros((0, 0))
        I = np.eye(m)
        for k in range(K - 1, -1, -1):
            Linv = solve_triangular(self.L[k], I, lower=True, check_finite=False)
            if k < K - 1:
                Zo[k] = -(Zd[k + 1] @ self.M[k] + Zt[k + 1].T @ self.P[k]) @ Linv
                Zt[k] = -(Zt[k + 1] @ self.M[k] + Ztt @ self.P[k]) @ Linv
                R = Linv.T - Zo[k].T @ self.M[k] - Zt[k].T @ self.P[k]
            else:
                Zt[k] = -(Ztt @ self.P[k]) @ Linv
                R = Linv.T - Zt[k].T @ self.P[k]
            Zk = R @ Linv
            Zd[k] = 0.5 * (Zk + Zk.T)
        self._inv = (Zd, Zo, Zt, Ztt)
        return self._inv

    def cov_block(self, k) -> np.ndarray:
        return self._selected_inverse()[0][k]

    def cov_tail_cross(self, k) -> np.ndarray:
        """Inverse entries between the tail and block ``k`` (t x m)."""
        return self._selected_inverse()[2][k]

    def cov_tail(self) -> np.ndarray:
        return self._selected_inverse()[3]

    def inv_diag(self) -> np.ndarray:
        Zd, _, _, Ztt = self._selected_inverse()
        return np.concatenate([np.diagonal(Zd, axis1=1, axis2=2).ravel(), np.diag(Ztt)])

    def inv_entries(self, rows, cols) -> np.ndarray:
        """Inverse entries at (rows[i], cols[i]) within the block pattern."""
        Zd, Zo, Zt, Ztt = self._selected_inverse()
        K, m = self.K, self.m
        r = np.asarray(rows, dtype=np.int64)
        c = np.asarray(cols, dtype=np.int64)
        swap = c > r
        r, c = np.where(swap, c, r), np.where(swap, r, c)
        br, bc = np.minimum(r // m, K), np.minimum(c // m, K)
        lr, lc = r - br * m, c - bc * m
        out = np.empty(len(r))
        ok = np.zeros(len(r), dtype=bool)
        s = (br == bc) & (br < K)
        out[s] = Zd[br[s], lr[s], lc[s]]
        ok |= s
        s = (br == bc + 1) & (br < K)
        out[s] = Zo[bc[s], lr[s], lc[s]]
        ok |= s
        s = (br == K) & (bc < K)
        out[s] = Zt[bc[s], lr[s], lc[s]]
        ok |= s
        s = (br == K) & (bc == K)
        out[s] = Ztt[lr[s], lc[s]]
        ok |= s
        if not np.all(ok):
            raise KeyError("requested inverse entries outside the block pattern")
        return out
