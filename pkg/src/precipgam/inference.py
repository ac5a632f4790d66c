"""Laplace-approximation inference for latent Gaussian models.

For fixed hyperparameters ``psi`` the latent posterior is approximated by a
Gaussian centred at its mode (Newton iterations on a sparse precision). The
hyperparameter posterior is the Laplace ratio evaluated at that mode; it is
maximised with a simplex search and then explored on a cross-shaped grid in
the eigenbasis of its finite-difference Hessian. Latent marginals are
Gaussian mixtures over the grid.

Latent vector layout: the ``n_t`` spatial blocks (time-major), then the
fixed effects (intercept, gamma1 on centred latitude, gamma2 on centred
longitude, gamma3 on elevation).
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize
from scipy.special import logit
from scipy.stats import norm

from ._blockchol import BlockArrowFactor
from ._cholesky import NotPositiveDefiniteError, SymbolicCholesky
from .geodata import StationRecord
from .gmrf import (FemMatrices, SpatialPrecisionBuilder, ar1_logdet, ar1_precision,
                   assemble_fem)
from .likelihoods import FAMILIES, Binomial, Likelihood
from .mesh import TriangleMesh, projector

N_MONTHS = 12
FIXED_NAMES = ("alpha", "gamma1", "gamma2", "gamma3")
W_FLOOR = 1e-10
NEWTON_TOL = 1e-8
NEWTON_MAXITER = 50
Z975 = norm.ppf(0.975)

RESPONSE_COLUMN = {"Gamma": "rain_mean", "BGEV": "rain_max",
                   "NegBinomial": "dry_spell_max", "Binomial": "dry_day_count"}


class ConvergenceError(RuntimeError):
    """Newton iteration failed; ``history`` holds the objective values."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = list(history)


def _gauss_logpdf(x, mean, sd):
    return -0.5 * ((x - mean) / sd) ** 2 - np.log(sd) - 0.5 * np.log(2 * np.pi)


@dataclass
class PriorSet:
    intercept_prec: float = 1e-9
    gamma_prec: float = 1e-3
    theta_prec: float = 1.0
    a_sd: float = 2.6
    family_sd: dict = field(default_factory=dict)     # internal name -> sd

    def __post_init__(self):
        if min(self.intercept_prec, self.gamma_prec, self.theta_prec) < 0 or self.a_sd <= 0:
            raise ValueError("prior precisions must be non-negative and a_sd positive")

    def fixed_precisions(self, n_fixed=4) -> np.ndarray:
        return np.array([self.intercept_prec] + [self.gamma_prec] * (n_fixed - 1))


def a_from_internal(t):
    return np.tanh(np.asarray(t, dtype=float) / 2.0)


def a_to_internal(a):
    a = np.asarray(a, dtype=float)
    return np.log((1 + a) / (1 - a))


# --- latent priors: map structural hyperparameters to (Q, logdet Q)

class FixedPrior:
    """Known Gaussian prior precision with no hyperparameters."""
    names: tuple = ()
    report_names: tuple = ()

    def __init__(self, Q):
        self.Q = sp.csc_matrix(Q)
        self._logdet = SymbolicCholesky(self.Q).factor(self.Q).logdet()

    @property
    def n(self) -> int:
        return self.Q.shape[0]

    @property
    def initial(self):
        return np.zeros(0)

    def pattern(self):
        return self.Q

    def precision(self, h):
        return self.Q, self._logdet

    def log_prior(self, h) -> float:
        return 0.0

    def to_report(self, h):
        return np.asarray(h, dtype=float)


class SpaceTimePrior:
    """AR(1) x SPDE field over ``n_t`` time points plus independent fixed effects.

    Hyperparameters: (theta1..theta4, log((1 + a) / (1 - a))).
    """
    names = ("theta1", "theta2", "theta3", "theta4", "a_internal")
    report_names = ("theta1", "theta2", "theta3", "theta4", "a")

    def __init__(self, builder: SpatialPrecisionBuilder, n_t: int = N_MONTHS,
                 priors: PriorSet | None = None, n_fixed: int = 4,
                 initial=(0.0, 0.0, 0.0, 0.0, 0.0)):
        self.builder = builder
        self.n_t = n_t
        self.n_s = builder.n
        self.priors = priors or PriorSet()
        self.fixed_prec = self.priors.fixed_precisions(n_fixed)
        self.initial = np.asarray(initial, dtype=float)

    @property
    def n(self) -> int:
        return self.n_s * self.n_t + len(self.fixed_prec)

    @property
    def blocks(self) -> tuple[int, int]:
        """(number of time blocks, block size) of the posterior precision."""
        return self.n_t, self.n_s

    def pattern(self):
        T = sp.diags([np.ones(self.n_t - 1), np.ones(self.n_t), np.ones(self.n_t - 1)],
                     [-1, 0, 1]) if self.n_t > 1 else sp.eye(1)
        return sp.block_diag([sp.kron(T, self.builder.pattern), sp.eye(len(self.fixed_prec))],
                             format="csc")

    def precision(self, h):
        h = np.asarray(h, dtype=float)
        Qs = self.builder(h[:4])
        a = float(a_from_internal(h[4]))
        Qt = ar1_precision(a, self.n_t).matrix
        Q = sp.block_diag([sp.kron(Qt, Qs.matrix), sp.diags(self.fixed_prec)], format="csc")
        logdet = (self.n_s * ar1_logdet(a, self.n_t) + self.n_t * Qs.logdet()
                  + float(np.sum(np.log(self.fixed_prec))))
        return Q, logdet

    def log_prior(self, h) -> float:
        h = np.asarray(h, dtype=float)
        sd = 1.0 / np.sqrt(self.priors.theta_prec)
        return float(np.sum(_gauss_logpdf(h[:4], 0.0, sd)) + _gauss_logpdf(h[4], 0.0, self.priors.a_sd))

    def to_report(self, h):
        h = np.array(h, dtype=float)
        h[..., 4] = a_from_internal(h[..., 4])
        return h


@dataclass
class LatentModel:
    """Observations ``y`` (NaN = missing) with predictor ``eta = A zeta``."""
    A: sp.csr_matrix
    y: np.ndarray
    family: type
    prior: object
    aux: dict = field(default_factory=dict)
    priors: PriorSet = field(default_factory=PriorSet)
    fixed_names: tuple = FIXED_NAMES
    intercept_index: int | None = None
    row_info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.A = sp.csr_matrix(self.A)
        self.y = np.asarray(self.y, dtype=float)
        if self.A.shape[0] != len(self.y):
            raise ValueError("row counts of A and y differ")
        if self.A.shape[1] != self.prior.n:
            raise ValueError("A columns do not match the latent dimension")
        for k, v in self.aux.items():
            if np.ndim(v) and len(v) != len(self.y):
                raise ValueError(f"aux column {k!r} has the wrong length")
        self.observed = ~np.isnan(self.y)
        idx = np.flatnonzero(self.observed)
        self.A_obs = self.A[idx]
        self.y_obs = self.y[idx]
        self.aux_obs = {k: (np.asarray(v)[idx] if np.ndim(v) else v) for k, v in self.aux.items()}
        if len(idx):
            self.family.from_internal(self.family_initial).check_support(self.y_obs, self.aux_obs)
        self._symbolic = None

    # --- hyperparameter bookkeeping
    @property
    def n_latent(self) -> int:
        return self.prior.n

    @property
    def n_family_hyper(self) -> int:
        return len(self.family.hyper_specs)

    @property
    def family_initial(self) -> np.ndarray:
        return np.array([s.initial for s in self.family.hyper_specs])

    @property
    def hyper_names(self) -> tuple:
        return tuple(s.name for s in self.family.hyper_specs) + tuple(self.prior.names)

    @property
    def report_names(self) -> tuple:
        return tuple(s.report_name for s in self.family.hyper_specs) + tuple(self.prior.report_names)

    @property
    def initial(self) -> np.ndarray:
        return np.concatenate([self.family_initial, self.prior.initial])

    def split(self, psi):
        psi = np.asarray(psi, dtype=float)
        k = self.n_family_hyper
        return psi[:k], psi[k:]

    def likelihood(self, psi) -> Likelihood:
        hf, _ = self.split(psi)
        return self.family.from_internal(hf)

    def log_hyper_prior(self, psi) -> float:
        hf, hs = self.split(psi)
        lp = 0.0
        for spec, v in zip(self.family.hyper_specs, hf):
            sd = self.priors.family_sd.get(spec.name, spec.prior_sd)
            lp += _gauss_logpdf(v, spec.prior_mean, sd)
        return float(lp + self.prior.log_prior(hs))

    def to_report(self, psi) -> np.ndarray:
        """Hyperparameters on reporting scales (phi, xi, s_beta, n, a ...)."""
        psi = np.asarray(psi, dtype=float)
        k = self.n_family_hyper
        out = np.empty_like(psi)
        for j, spec in enumerate(self.family.hyper_specs):
            out[..., j] = spec.to_report(psi[..., j])
        out[..., k:] = self.prior.to_report(psi[..., k:])
        return out

    @property
    def symbolic(self) -> SymbolicCholesky:
        if self._symbolic is None:
            A = self.A_obs
            pat = abs(self.prior.pattern()) + abs(A.T @ A) + sp.eye(self.n_latent)
            self._symbolic = SymbolicCholesky(pat)
        return self._symbolic

    def factorize(self, H):
        """Cholesky factor of a posterior precision with this model's pattern."""
        blocks = getattr(self.prior, "blocks", None)
        if blocks is not None:
            return BlockArrowFactor.from_sparse(H, *blocks)
        return self.symbolic.factor(H)

    def start(self) -> np.ndarray:
        """Newton starting point: zero, except a data-based intercept."""
        x = np.zeros(self.n_latent)
        if self.intercept_index is not None and len(self.y_obs):
            x[self.intercept_index] = _initial_eta(self.family, self.y_obs, self.aux_obs)
        return x


def _initial_eta(family, y, aux) -> float:
    if family.link == "log":
        return float(np.log(max(np.mean(y), 1e-8)))
    if family.link == "logit":
        p = np.sum(y) / np.sum(np.broadcast_to(aux["trials"], y.shape))
        return float(logit(np.clip(p, 1e-4, 1 - 1e-4)))
    if family.tag == "BGEV":
        return float(np.median(y))
    return float(np.mean(y))


# --- model assembly from station records

def build_model(records: list[StationRecord], mesh: TriangleMesh, family: str | type,
                priors: PriorSet | None = None, config: dict | None = None,
                fem: FemMatrices | None = None) -> LatentModel:
    """Replicated space-time model: one row per (station, year, month) record."""
    fam = FAMILIES[family] if isinstance(family, str) else family
    if fam.tag not in RESPONSE_COLUMN:
        raise ValueError(f"family {fam.tag!r} has no response column in the station data")
    if mesh.vertex_elevation_km is None:
        raise ValueError("mesh vertices need elevations")
    priors = priors or PriorSet()
    config = config or {}
    n_t = int(config.get("n_t", N_MONTHS))
    col = RESPONSE_COLUMN[fam.tag]
    n = len(records)
    if n == 0:
        raise ValueError("no station records")
    lon = np.array([r.lon_centred for r in records])
    lat = np.array([r.lat_centred for r in records])
    elev = np.array([r.elevation_km for r in records])
    month = np.array([r.month for r in records])
    if np.any(~np.isfinite(lon)) or np.any(~np.isfinite(lat)) or np.any(~np.isfinite(elev)):
        raise ValueError("station covariates must be complete")
    if np.any((month < 1) | (month > n_t)):
        raise ValueError("month index out of range")
    y = np.array([np.nan if getattr(r, col) is None else float(getattr(r, col)) for r in records])
    trials = np.array([r.days_observed for r in records], dtype=float)
    if fam.tag == "Gamma":
        y[y <= 0] = np.nan        # outside the gamma support
    if fam.tag == "Binomial":
        y[trials < 1] = np.nan

    nv = mesh.n_vertices
    Az, ok = projector(mesh, np.column_stack([lon, lat]))
    if not np.all(ok):
        raise ValueError(f"{int(np.sum(~ok))} stations lie outside the mesh")
    Az = Az.tocoo()
    rows = Az.row
    cols = Az.col + (month[rows] - 1) * nv
    X = np.column_stack([np.ones(n), lat, lon, elev])
    xr = np.repeat(np.arange(n), 4)
    xc = np.tile(np.arange(4), n) + nv * n_t
    A = sp.csr_matrix((np.concatenate([Az.data, X.ravel()]),
                       (np.concatenate([rows, xr]), np.concatenate([cols, xc]))),
                      shape=(n, nv * n_t + 4))
    fem = fem or assemble_fem(mesh)
    builder = SpatialPrecisionBuilder(fem, mesh.vertex_elevation_km)
    init = config.get("theta_init", (0.0, 0.0, 0.0, 0.0, 0.0))
    prior = SpaceTimePrior(builder, n_t, priors, initial=init)
    aux = {"elevation": elev}
    if fam is Binomial:
        aux["trials"] = trials
    info = {"station": np.array([r.station_id for r in records]),
            "year": np.array([r.year for r in records]), "month": month}
    return LatentModel(A, y, fam, prior, aux, priors, FIXED_NAMES, nv * n_t, info)


# --- Gaussian approximation for fixed psi

@dataclass
class GaussianApprox:
    psi: np.ndarray
    mode: np.ndarray
    precision: sp.csc_matrix        # negative Hessian at the mode
    factor: object
    log_prior_latent: float         # log pi(mode | psi)
    log_lik: float                  # sum log pi(y | mode, psi)
    iterations: int

    @property
    def log_density_at_mode(self) -> float:
        return 0.5 * self.factor.logdet() - 0.5 * len(self.mode) * np.log(2 * np.pi)


def gaussian_approx(model: LatentModel, psi, x0=None, tol=NEWTON_TOL,
                    max_iter=NEWTON_MAXITER) -> GaussianApprox:
    psi = np.asarray(psi, dtype=float)
    if not np.all(np.isfinite(psi)):
        raise ValueError("hyperparameters must be finite")
    lik = model.likelihood(psi)
    Q, logdetQ = model.prior.precision(model.split(psi)[1])
    A, y, aux = model.A_obs, model.y_obs, model.aux_obs
    At = A.T.tocsr()
    x = model.start() if x0 is None else np.array(x0, dtype=float)

    def objective(v):
        eta = A @ v
        with np.errstate(all="ignore"):
            ll = float(np.sum(lik.log_density(y, eta, aux))) if len(y) else 0.0
        return -0.5 * float(v @ (Q @ v)) + ll

    def curvature(v):
        if not len(y):
            return np.zeros(0), np.zeros(0)
        d1, d2 = lik.d_log_density(y, A @ v, aux)
        return d1, np.maximum(-d2, W_FLOOR)

    f = objective(x)
    history = [f]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        d1, w = curvature(x)
        g = -(Q @ x) + At @ d1
        H = Q + At @ sp.diags(w) @ A
        fac = model.factorize(H)
        delta = fac.solve(g)
        step = 1.0
        for _ in range(60):
            xn = x + step * delta
            fn = objective(xn)
            if np.isfinite(fn) and fn >= f - 1e-12 * abs(f):
                break
            step *= 0.5
        else:
            xn, fn = x, f
        moved = float(np.max(np.abs(xn - x))) if len(x) else 0.0
        x, f = xn, fn
        history.append(f)
        if moved < tol or float(np.max(np.abs(delta), initial=0.0)) < tol:
            converged = True
            break
    if not converged:
        raise ConvergenceError(f"Newton did not converge in {max_iter} iterations", history[-5:])
    # the final step is below tol, so the last factor serves as the curvature at the mode
    H = sp.csc_matrix(H)
    lp = 0.5 * logdetQ - 0.5 * len(x) * np.log(2 * np.pi) - 0.5 * float(x @ (Q @ x))
    ll = f + 0.5 * float(x @ (Q @ x))
    return GaussianApprox(psi, x, H, fac, lp, ll, it)


def laplace(model: LatentModel, psi, x0=None):
    """Laplace log posterior of psi (unnormalised) and the Gaussian approximation."""
    ga = gaussian_approx(model, psi, x0)
    value = model.log_hyper_prior(psi) + ga.log_prior_latent + ga.log_lik - ga.log_density_at_mode
    return value, ga


def log_hyper_posterior(model: LatentModel, psi, x0=None) -> float:
    return laplace(model, psi, x0)[0]


def log_marginal_likelihood(model: LatentModel, psi, x0=None) -> float:
    """Laplace estimate of log pi(y | psi), i.e. without the hyperprior."""
    return log_hyper_posterior(model, psi, x0) - model.log_hyper_prior(psi)


# --- hyperparameter exploration

@dataclass(frozen=True)
class FitResult:
    family: str
    hyper_names: tuple
    report_names: tuple
    fixed_names: tuple
    psi_mode: np.ndarray
    psi_cov: np.ndarray              # inverse negative Hessian, internal scale
    psi_grid: np.ndarray             # (G, d)
    log_weights: np.ndarray          # normalised
    log_post: np.ndarray             # objective at grid points
    latent_mean: np.ndarray          # (G, n_latent)
    latent_sd: np.ndarray            # (G, n_latent)
    fixed_index: np.ndarray
    fixed_summary: dict
    hyper_summary: dict
    strategy: str = "grid"
    n_evaluations: int = 0

    @property
    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)

    def significant(self, name: str) -> bool:
        """Both 2.5% and 97.5% posterior quantiles share a sign."""
        s = self.fixed_summary[name]
        return bool(s["0.025quant"] * s["0.975quant"] > 0)

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        return out

    @classmethod
    def from_dict(cls, d) -> "FitResult":
        d = dict(d)
        for k in ("psi_mode", "psi_cov", "psi_grid", "log_weights", "log_post",
                  "latent_mean", "latent_sd", "fixed_index"):
            d[k] = np.asarray(d[k], dtype=int if k == "fixed_index" else float)
        for k in ("hyper_names", "report_names", "fixed_names"):
            d[k] = tuple(d[k])
        return cls(**d)


class _Objective:
    """Laplace objective with warm starts and failure handling (-inf)."""

    def __init__(self, model):
        self.model = model
        self.x = None
        self.count = 0

    def __call__(self, psi, x0=None, keep=True):
        self.count += 1
        try:
            val, ga = laplace(self.model, psi, self.x if x0 is None else x0)
        except (NotPositiveDefiniteError, ConvergenceError, ValueError, FloatingPointError):
            return -np.inf, None
        if not np.isfinite(val):
            return -np.inf, None
        if keep:
            self.x = ga.mode
        return val, ga


def _simplex(obj, x0, step, fatol):
    d = len(x0)
    simplex = np.vstack([x0] + [x0 + step * np.eye(d)[k] for k in range(d)])
    res = minimize(lambda p: -obj(p)[0], x0, method="Nelder-Mead",
                   options={"initial_simplex": simplex, "fatol": fatol, "xatol": 1e-3,
                            "maxfev": 400 * d})
    return res.x, -res.fun


def fd_hessian(f, x, steps) -> np.ndarray:
    """Central-difference Hessian of f at x with per-coordinate steps."""
    d = len(x)
    f0 = f(x)
    H = np.empty((d, d))
    E = np.diag(steps)
    for i in range(d):
        H[i, i] = (f(x + E[i]) - 2 * f0 + f(x - E[i])) / steps[i] ** 2
        for j in range(i):
            H[i, j] = H[j, i] = (f(x + E[i] + E[j]) - f(x + E[i] - E[j])
                                 - f(x - E[i] + E[j]) + f(x - E[i] - E[j])) / (4 * steps[i] * steps[j])
    return H


def _curvature_basis(H):
    lam, V = np.linalg.eigh(-H)
    floor = max(1e-3 * float(np.max(lam, initial=1.0)), 1e-8)
    lam = np.maximum(lam, floor)
    return lam, V


def _summarise(mean, sd, q025, q975):
    return {"Mean": float(mean), "SD": float(sd), "0.025quant": float(q025),
            "0.975quant": float(q975)}


def hyper_marginals(model: LatentModel, psi_mode, psi_cov, n_quad=40) -> dict:
    """Reporting-scale summaries from N(psi_mode, psi_cov) on internal scales."""
    x, wq = np.polynomial.hermite_e.hermegauss(n_quad)
    wq = wq / wq.sum()
    sds = np.sqrt(np.maximum(np.diag(psi_cov), 0.0))
    out = {}
    for j, name in enumerate(model.report_names):
        base = np.tile(psi_mode, (n_quad + 2, 1))
        base[:n_quad, j] = psi_mode[j] + sds[j] * x
        base[n_quad, j] = psi_mode[j] - Z975 * sds[j]
        base[n_quad + 1, j] = psi_mode[j] + Z975 * sds[j]
        rep = model.to_report(base)[:, j]
        m = float(np.sum(wq * rep[:n_quad]))
        s = float(np.sqrt(max(np.sum(wq * (rep[:n_quad] - m) ** 2), 0.0)))
        lo, hi = sorted((rep[n_quad], rep[n_quad + 1]))
        out[name] = _summarise(m, s, lo, hi)
    return out


def optimize_hyper(model: LatentModel, init=None, strategy: str = "grid", workers: int = 1,
                   fatol: float = 1e-4, max_recentre: int = 3) -> FitResult:
    """Posterior mode of psi, curvature, integration grid and marginal summaries."""
    if strategy not in ("grid", "empirical-bayes"):
        raise ValueError(f"unknown strategy {strategy!r}")
    obj = _Objective(model)
    x0 = model.initial if init is None else np.asarray(init, dtype=float)
    f0, _ = obj(x0)
    if not np.isfinite(f0):
        raise ValueError("objective is not finite at the initial hyperparameters")
    d = len(x0)
    mode, fmode = x0, f0
    if d:
        mode, fmode = _simplex(obj, x0, 0.5, fatol)
    for _ in range(max_recentre + 1):
        _, ga_mode = obj(mode)
        x_mode = ga_mode.mode
        if d:
            f = lambda p: obj(p, x_mode, keep=False)[0]
            # diagonal pass to pick steps of about a quarter posterior sd
            f0 = f(mode)
            h0 = 0.05
            curv = np.array([-(f(mode + h0 * e) - 2 * f0 + f(mode - h0 * e)) / h0 ** 2
                             for e in np.eye(d)])
            steps = np.minimum(h0, 0.25 / np.sqrt(np.maximum(curv, 1e-12)))
            H = fd_hessian(f, mode, steps)
            lam, V = _curvature_basis(H)
            cov = (V / lam) @ V.T
        else:
            lam, V, cov = np.zeros(0), np.zeros((0, 0)), np.zeros((0, 0))
        if strategy == "empirical-bayes" or d == 0:
            pts = mode[None, :]
        else:
            scale = V / np.sqrt(lam)
            z = [np.zeros(d)] + [s * k * np.eye(d)[i] for i in range(d) for k in (1, 2) for s in (-1, 1)]
            pts = np.array([mode + scale @ zi for zi in z])
        if workers > 1 and len(pts) > 1:
            with ThreadPoolExecutor(workers) as ex:
                evals = list(ex.map(lambda p: obj(p, x_mode, keep=False), pts))
        else:
            evals = [obj(p, x_mode, keep=False) for p in pts]
        vals = np.array([e[0] for e in evals])
        best = int(np.argmax(vals))
        if vals[best] <= vals[0] or best == 0:
            break
        # a grid neighbour beats the mode: continue the search from there
        mode, fmode = _simplex(obj, pts[best], 0.1, fatol)
    keep = np.isfinite(vals)
    pts, vals = pts[keep], vals[keep]
    gas = [e[1] for e, k in zip(evals, keep) if k]
    logw = vals - vals.max()
    logw -= np.log(np.sum(np.exp(logw)))
    means = np.array([g.mode for g in gas])
    sds = np.array([np.sqrt(g.factor.inv_diag()) for g in gas])
    fixed_index = np.arange(model.n_latent - len(model.fixed_names), model.n_latent)
    w = np.exp(logw)
    fsum = {}
    for name, k in zip(model.fixed_names, fixed_index):
        fsum[name] = _summarise(*mixture_summary(w, means[:, k], sds[:, k]))
    hsum = hyper_marginals(model, pts[0], cov) if d else {}
    return FitResult(model.family.tag, model.hyper_names, model.report_names,
                     tuple(model.fixed_names), pts[0].copy(), cov, pts, logw, vals, means, sds,
                     fixed_index, fsum, hsum, strategy, obj.count)


# --- mixture marginals

def mixture_summary(w, m, s, iters=200):
    """Mean, sd and 2.5% / 97.5% quantiles of sum_g w_g N(m_g, s_g^2).

    ``m`` and ``s`` have the grid on their first axis.
    """
    w = np.asarray(w, dtype=float)
    m = np.asarray(m, dtype=float)
    s = np.asarray(s, dtype=float)
    wb = w.reshape((-1,) + (1,) * (m.ndim - 1))
    mean = np.sum(wb * m, axis=0)
    var = np.sum(wb * (s * s + m * m), axis=0) - mean ** 2
    sd = np.sqrt(np.maximum(var, 0.0))
    if len(w) == 1:
        return mean, sd, mean - Z975 * sd, mean + Z975 * sd
    qs = []
    for p in (0.025, 0.975):
        lo = np.min(m - 10 * s, axis=0)
        hi = np.max(m + 10 * s, axis=0)
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            with np.errstate(divide="ignore", invalid="ignore"):
                cdf = np.sum(wb * norm.cdf((mid - m) / s), axis=0)
            below = cdf < p
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
            if np.all(hi - lo <= 1e-13 * np.maximum(1.0, np.abs(mid))):
                break
        qs.append(0.5 * (lo + hi))
    return mean, sd, qs[0], qs[1]


def latent_marginals(model: LatentModel, fit: FitResult, index=None) -> dict:
    """Per-component mixture summaries for latent entries ``index`` (default all)."""
    idx = np.arange(model.n_latent) if index is None else np.atleast_1d(index)
    mean, sd, q1, q2 = mixture_summary(fit.weights, fit.latent_mean[:, idx], fit.latent_sd[:, idx])
    return {"mean": mean, "sd": sd, "0.025quant": q1, "0.975quant": q2}
