"""Observation models and their derivatives in the linear predictor.

Every family exposes ``log_density(y, eta, aux)`` and
``d_log_density(y, eta, aux) -> (first, second)``, both elementwise. ``aux``
carries per-observation covariates: ``trials`` for the binomial and
``elevation`` for the bGEV spread regression.

Hyperparameters live on an internal unconstrained scale; ``hyper_specs``
describe the transforms and the Gaussian priors placed on that scale.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.special import expit, gammaln, logit

from . import bgev

_ETA_CLIP = 700.0


@dataclass(frozen=True)
class HyperSpec:
    name: str                       # internal name
    report_name: str
    initial: float                  # internal scale
    prior_sd: float
    to_report: Callable = lambda t: t
    prior_mean: float = 0.0


def _xi_from_internal(t):
    return 0.5 * expit(t)


def _xi_to_internal(xi):
    return logit(2.0 * np.asarray(xi, dtype=float))


class Likelihood:
    tag = ""
    link = ""
    hyper_specs: tuple = ()

    @classmethod
    def from_internal(cls, h) -> "Likelihood":
        raise NotImplementedError

    def internal(self) -> np.ndarray:
        raise NotImplementedError

    def check_support(self, y, aux=None) -> None:
        pass

    def log_density(self, y, eta, aux=None) -> np.ndarray:
        raise NotImplementedError

    def d_log_density(self, y, eta, aux=None):
        raise NotImplementedError

    def inverse_link(self, eta):
        return np.asarray(eta, dtype=float)

    def sample(self, eta, rng, aux=None) -> np.ndarray:
        raise NotImplementedError


class Gaussian(Likelihood):
    """Identity-link Gaussian with noise precision ``prec``."""
    tag, link = "Gaussian", "identity"
    hyper_specs = (HyperSpec("log_prec", "prec", 0.0, 10.0, np.exp),)

    def __init__(self, prec: float = 1.0):
        self.prec = float(prec)

    @classmethod
    def from_internal(cls, h):
        return cls(np.exp(h[0]))

    def internal(self):
        return np.array([np.log(self.prec)])

    def log_density(self, y, eta, aux=None):
        r = np.asarray(y, dtype=float) - eta
        return 0.5 * np.log(self.prec / (2 * np.pi)) - 0.5 * self.prec * r * r

    def d_log_density(self, y, eta, aux=None):
        r = np.asarray(y, dtype=float) - eta
        return self.prec * r, np.full_like(r, -self.prec)

    def sample(self, eta, rng, aux=None):
        return eta + rng.standard_normal(np.shape(eta)) / np.sqrt(self.prec)


class Gamma(Likelihood):
    """Mean exp(eta), shape phi, rate phi / mean."""
    tag, link = "Gamma", "log"
    hyper_specs = (HyperSpec("log_phi", "phi", 0.0, 10.0, np.exp),)

    def __init__(self, phi: float = 1.0):
        if not phi > 0:
            raise ValueError("phi must be positive")
        self.phi = float(phi)

    @classmethod
    def from_internal(cls, h):
        return cls(np.exp(h[0]))

    def internal(self):
        return np.array([np.log(self.phi)])

    def check_support(self, y, aux=None):
        if np.any(np.asarray(y) <= 0):
            raise ValueError("gamma observations must be positive")

    def log_density(self, y, eta, aux=None):
        y = np.asarray(y, dtype=float)
        eta = np.clip(eta, -_ETA_CLIP, _ETA_CLIP)
        phi = self.phi
        return (phi * np.log(phi) - phi * eta + (phi - 1) * np.log(y)
                - phi * y * np.exp(-eta) - gammaln(phi))

    def d_log_density(self, y, eta, aux=None):
        eta = np.clip(eta, -_ETA_CLIP, _ETA_CLIP)
        t = self.phi * np.asarray(y, dtype=float) * np.exp(-eta)
        return t - self.phi, -t

    def inverse_link(self, eta):
        return np.exp(eta)

    def sample(self, eta, rng, aux=None):
        mu = np.exp(eta)
        return rng.gamma(self.phi, mu / self.phi)


class NegBinomial(Likelihood):
    """Mean exp(eta), size n: variance mu + mu^2 / n."""
    tag, link = "NegBinomial", "log"
    hyper_specs = (HyperSpec("log_n", "n", 0.0, 10.0, np.exp),)

    def __init__(self, n_disp: float = 1.0):
        if not n_disp > 0:
            raise ValueError("n_disp must be positive")
        self.n_disp = float(n_disp)

    @classmethod
    def from_internal(cls, h):
        return cls(np.exp(h[0]))

    def internal(self):
        return np.array([np.log(self.n_disp)])

    def check_support(self, y, aux=None):
        y = np.asarray(y, dtype=float)
        if np.any(y < 0) or np.any(y != np.round(y)):
            raise ValueError("negative binomial observations must be non-negative integers")

    def log_density(self, y, eta, aux=None):
        y = np.asarray(y, dtype=float)
        n = self.n_disp
        eta = np.clip(eta, -_ETA_CLIP, _ETA_CLIP)
        log_n_mu = np.logaddexp(np.log(n), eta)
        return (gammaln(y + n) - gammaln(n) - gammaln(y + 1)
                + n * (np.log(n) - log_n_mu) + y * (eta - log_n_mu))

    def d_log_density(self, y, eta, aux=None):
        y = np.asarray(y, dtype=float)
        n = self.n_disp
        eta = np.clip(eta, -_ETA_CLIP, _ETA_CLIP)
        q = expit(eta - np.log(n))        # mu / (n + mu)
        return y - (n + y) * q, -(n + y) * q * (1 - q)

    def inverse_link(self, eta):
        return np.exp(eta)

    def sample(self, eta, rng, aux=None):
        mu = np.exp(eta)
        return rng.negative_binomial(self.n_disp, self.n_disp / (self.n_disp + mu)).astype(float)


class Binomial(Likelihood):
    """Success probability logistic(eta) with per-observation ``trials``."""
    tag, link = "Binomial", "logit"
    hyper_specs = ()

    @classmethod
    def from_internal(cls, h):
        return cls()

    def internal(self):
        return np.zeros(0)

    @staticmethod
    def _trials(aux, y):
        if aux is None or "trials" not in aux:
            raise ValueError("binomial likelihood needs aux['trials']")
        return np.broadcast_to(np.asarray(aux["trials"], dtype=float), np.shape(y))

    def check_support(self, y, aux=None):
        y = np.asarray(y, dtype=float)
        N = self._trials(aux, y)
        if np.any(N < 1) or np.any(y < 0) or np.any(y > N) or np.any(y != np.round(y)):
            raise ValueError("binomial observations must be integers in [0, trials]")

    def log_density(self, y, eta, aux=None):
        y = np.asarray(y, dtype=float)
        N = self._trials(aux, y)
        eta = np.asarray(eta, dtype=float)
        return (gammaln(N + 1) - gammaln(y + 1) - gammaln(N - y + 1)
                + y * eta - N * np.logaddexp(0.0, eta))

    def d_log_density(self, y, eta, aux=None):
        y = np.asarray(y, dtype=float)
        N = self._trials(aux, y)
        p = expit(eta)
        return y - N * p, -N * p * (1 - p)

    def inverse_link(self, eta):
        return expit(eta)

    def sample(self, eta, rng, aux=None):
        N = self._trials(aux, eta).astype(int)
        return rng.binomial(N, expit(eta)).astype(float)


class BGEVLik(Likelihood):
    """bGEV with eta as the alpha-quantile and an elevation-dependent spread.

    ``s_beta(x) = exp(log_spread_intercept + beta1 * x)``.
    """
    tag, link = "BGEV", "identity"
    hyper_specs = (
        HyperSpec("log_spread", "s_beta", 0.0, 10.0, np.exp),
        HyperSpec("xi_internal", "xi", float(_xi_to_internal(0.1)), 2.6, _xi_from_internal),
        HyperSpec("beta1", "beta1", 0.0, 10.0),
    )

    def __init__(self, log_spread_intercept: float = 0.0, beta1: float = 0.0,
                 xi: float = 0.1, p_a: float = bgev.P_A, p_b: float = bgev.P_B):
        if not 0 <= xi < 0.5:
            raise ValueError("xi must lie in [0, 0.5)")
        self.log_spread_intercept = float(log_spread_intercept)
        self.beta1 = float(beta1)
        self.xi = float(xi)
        self.p_a, self.p_b = p_a, p_b

    @classmethod
    def from_internal(cls, h):
        return cls(h[0], h[2], float(_xi_from_internal(h[1])))

    def internal(self):
        return np.array([self.log_spread_intercept, float(_xi_to_internal(self.xi)), self.beta1])

    def spread(self, elevation):
        return np.exp(self.log_spread_intercept + self.beta1 * np.asarray(elevation, dtype=float))

    def _dist(self, eta, aux):
        elev = 0.0 if aux is None else aux.get("elevation", 0.0)
        s = np.broadcast_to(self.spread(elev), np.shape(eta))
        return bgev.BGEV(np.asarray(eta, dtype=float), s, self.xi, self.p_a, self.p_b)

    def log_density(self, y, eta, aux=None):
        return self._dist(eta, aux).logpdf(np.asarray(y, dtype=float))

    def d_log_density(self, y, eta, aux=None):
        # location family in eta: d/deta log f(y - eta) = -d/dy log f
        g, h = self._dist(eta, aux).dlogpdf_dx(np.asarray(y, dtype=float))
        return -g, h

    def sample(self, eta, rng, aux=None):
        d = self._dist(eta, aux)
        u = rng.uniform(size=np.shape(eta))
        return np.asarray(d.quantile(u))


FAMILIES = {"Gaussian": Gaussian, "Gamma": Gamma, "BGEV": BGEVLik,
            "NegBinomial": NegBinomial, "Binomial": Binomial}

SCENARIO_FAMILY = {"mean": "Gamma", "max": "BGEV", "dryspell": "NegBinomial",
                   "norain": "Binomial"}


def log_density(family: Likelihood, y, eta, site_elevation=0.0, trials=None):
    aux = {"elevation": site_elevation}
    if trials is not None:
        aux["trials"] = trials
    family.check_support(y, aux)
    return family.log_density(y, eta, aux)


def d_log_density(family: Likelihood, y, eta, site_elevation=0.0, trials=None):
    aux = {"elevation": site_elevation}
    if trials is not None:
        aux["trials"] = trials
    family.check_support(y, aux)
    return family.d_log_density(y, eta, aux)
