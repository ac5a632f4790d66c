"""Blended generalised extreme value distribution.

The right tail is a GEV(mu, sigma, xi), the left tail a Gumbel matched to
the GEV at the probabilities ``p_a`` and ``p_b``; in between the log-CDFs
are mixed with a Beta(5, 5) CDF weight. Parameters are given as
``(mu_alpha, s_beta, xi)``: the alpha-quantile, the distance between the
1 - beta/2 and beta/2 quantiles, and the tail index.
"""
from __future__ import annotations

import numpy as np
from scipy.optimize import brentq
from scipy.special import betainc

ALPHA = 0.5
BETA = 0.8
P_A = 0.05
P_B = 0.20
BLEND_SHAPE = 5.0
_XI_EPS = 1e-12


def _ell(p):
    return -np.log(p)


def _gev_shift(p, xi):
    """(ell_p^{-xi} - 1) / xi with its Gumbel limit -log(ell_p) at xi = 0."""
    L = np.log(_ell(p))
    if abs(xi) < _XI_EPS:
        return -L
    return np.expm1(-xi * L) / xi


def gev_quantile(p, mu, sigma, xi):
    return mu + sigma * _gev_shift(np.asarray(p, dtype=float), xi)


def gev_cdf(x, mu, sigma, xi):
    z = (np.asarray(x, dtype=float) - mu) / sigma
    if abs(xi) < _XI_EPS:
        return np.exp(-np.exp(-z))
    t = 1.0 + xi * z
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = np.exp(-np.power(np.maximum(t, 0.0), -1.0 / xi))
    return np.where(t > 0, out, 0.0 if xi > 0 else 1.0)


def gev_from_quantile_param(mu_alpha, s_beta, xi, alpha_prob=ALPHA, beta_prob=BETA):
    """Convert (mu_alpha, s_beta, xi) to the GEV (mu, sigma, xi)."""
    if not np.all(np.asarray(s_beta) > 0):
        raise ValueError("s_beta must be positive")
    if not (0 < alpha_prob < 1 and 0 < beta_prob < 1):
        raise ValueError("alpha_prob and beta_prob must lie in (0, 1)")
    width = _gev_shift(1 - beta_prob / 2, xi) - _gev_shift(beta_prob / 2, xi)
    sigma = s_beta / width
    mu = mu_alpha - sigma * _gev_shift(alpha_prob, xi)
    if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
        raise ValueError("non-finite GEV parameters")
    return mu, sigma, xi


class BGEV:
    """Vectorised bGEV in the (mu_alpha, s_beta, xi) parametrisation."""

    def __init__(self, mu_alpha, s_beta, xi, p_a=P_A, p_b=P_B,
                 alpha_prob=ALPHA, beta_prob=BETA):
        if not p_a < p_b:
            raise ValueError(f"blending window needs p_a < p_b, got {p_a}, {p_b}")
        if xi < 0:
            raise ValueError("negative tail index is not supported")
        self.xi = float(xi)
        self.p_a, self.p_b = p_a, p_b
        self._probs = (alpha_prob, beta_prob)
        self.mu_alpha = np.asarray(mu_alpha, dtype=float)
        self.s_beta = np.asarray(s_beta, dtype=float)
        self.mu, self.sigma, _ = gev_from_quantile_param(
            self.mu_alpha, self.s_beta, self.xi, alpha_prob, beta_prob)
        self.a = gev_quantile(p_a, self.mu, self.sigma, self.xi)
        self.b = gev_quantile(p_b, self.mu, self.sigma, self.xi)
        # Gumbel with the same p_a and p_b quantiles
        la, lb = np.log(_ell(p_a)), np.log(_ell(p_b))
        self.g_sigma = (self.b - self.a) / (la - lb)
        self.g_mu = self.a + self.g_sigma * la

    # --- log-CDF pieces and their x-derivatives (orders 0..3)
    def _gev_logF(self, x):
        z = (x - self.mu) / self.sigma
        xi, s = self.xi, self.sigma
        if self.xi < _XI_EPS:
            e = np.exp(-z)
            return -e, e / s, -e / s ** 2, e / s ** 3
        t = np.maximum(1.0 + xi * z, 1e-300)
        lt = np.log(t)
        p0 = np.exp(-lt / xi)
        d1 = np.exp((-1 / xi - 1) * lt) / s
        d2 = -(1 + xi) * np.exp((-1 / xi - 2) * lt) / s ** 2
        d3 = (1 + xi) * (1 + 2 * xi) * np.exp((-1 / xi - 3) * lt) / s ** 3
        return -p0, d1, d2, d3

    def _gum_logF(self, x):
        s = self.g_sigma
        e = np.exp(-(x - self.g_mu) / s)
        return -e, e / s, -e / s ** 2, e / s ** 3

    def _weight(self, x):
        w = self.b - self.a
        u = np.clip((x - self.a) / w, 0.0, 1.0)
        p0 = betainc(BLEND_SHAPE, BLEND_SHAPE, u)
        v = u * (1 - u)
        # Beta(5, 5) density 630 u^4 (1-u)^4 and its u-derivatives
        d1 = 630 * v ** 4
        d2 = 630 * 4 * v ** 3 * (1 - 2 * u)
        d3 = 630 * (12 * v ** 2 * (1 - 2 * u) ** 2 - 8 * v ** 3)
        return p0, d1 / w, d2 / w ** 2, d3 / w ** 3

    def _logF_derivs(self, x):
        """H = log F and H', H'', H''' at x."""
        x = np.asarray(x, dtype=float)
        # each tail is only needed on its own side of the window
        A = self._gev_logF(np.maximum(x, self.a))
        with np.errstate(over="ignore"):
            B = self._gum_logF(np.minimum(x, self.b))
        P = self._weight(x)
        below, above = x <= self.a, x >= self.b
        D = [A[k] - B[k] for k in range(4)]
        H0 = B[0] + P[0] * D[0]
        H1 = B[1] + P[1] * D[0] + P[0] * D[1]
        H2 = B[2] + P[2] * D[0] + 2 * P[1] * D[1] + P[0] * D[2]
        H3 = B[3] + P[3] * D[0] + 3 * P[2] * D[1] + 3 * P[1] * D[2] + P[0] * D[3]
        out = []
        for h, a, b in zip((H0, H1, H2, H3), A, B):
            out.append(np.where(below, b, np.where(above, a, h)))
        return out

    def logcdf(self, x):
        return self._logF_derivs(x)[0]

    def cdf(self, x):
        return np.exp(self.logcdf(x))

    def logpdf(self, x):
        H0, H1, _, _ = self._logF_derivs(x)
        with np.errstate(divide="ignore"):
            return H0 + np.log(H1)

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def dlogpdf_dx(self, x):
        """First and second x-derivatives of the log density."""
        H0, H1, H2, H3 = self._logF_derivs(x)
        r = H2 / H1
        return H1 + r, H2 + H3 / H1 - r * r

    def quantile(self, p, tol=1e-12):
        """Inverse CDF: closed form outside the blending window, Brent inside."""
        p = np.asarray(p, dtype=float)
        shape = np.broadcast_shapes(p.shape, np.shape(self.mu))
        scalar = len(shape) == 0
        p = np.atleast_1d(np.broadcast_to(p, shape)).astype(float)
        vector_params = np.ndim(self.mu) > 0
        out = np.empty_like(p)
        mu = np.broadcast_to(self.mu, p.shape)
        sg = np.broadcast_to(self.sigma, p.shape)
        gm = np.broadcast_to(self.g_mu, p.shape)
        gs = np.broadcast_to(self.g_sigma, p.shape)
        hi = p >= self.p_b
        lo = p <= self.p_a
        out[hi] = gev_quantile(p[hi], mu[hi], sg[hi], self.xi)
        out[lo] = gm[lo] - gs[lo] * np.log(_ell(p[lo]))
        for k in np.flatnonzero(~(hi | lo)):
            sub = self._at(k, p.shape) if vector_params else self
            target = np.log(p[k])
            out[k] = brentq(lambda x: float(sub.logcdf(x)) - target,
                            float(sub.a), float(sub.b), xtol=tol, rtol=4 * np.finfo(float).eps)
        return out[0] if scalar else out

    def _at(self, k, shape):
        ma = np.broadcast_to(self.mu_alpha, shape)[k]
        sb = np.broadcast_to(self.s_beta, shape)[k]
        return BGEV(ma, sb, self.xi, self.p_a, self.p_b, *self._probs)


def bgev_cdf(x, mu_alpha, s_beta, xi, **kw):
    return BGEV(mu_alpha, s_beta, xi, **kw).cdf(x)


def bgev_logpdf(x, mu_alpha, s_beta, xi, **kw):
    return BGEV(mu_alpha, s_beta, xi, **kw).logpdf(x)


def bgev_quantile(p, mu_alpha, s_beta, xi, **kw):
    return BGEV(mu_alpha, s_beta, xi, **kw).quantile(p)


def return_level(mu_alpha, s_beta, xi, T_years=20.0, **kw):
    """Level exceeded with probability 1/T per period: the 1 - 1/T quantile."""
    T = np.asarray(T_years, dtype=float)
    if np.any(T <= 1):
        raise ValueError("return period must exceed 1")
    return BGEV(mu_alpha, s_beta, xi, **kw).quantile(1.0 - 1.0 / T)
