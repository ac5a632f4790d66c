"""Independent reference implementations used by the tests."""
import datetime as dt
import itertools

import numpy as np
from scipy import integrate


def brute_force_monthly(dates, values, threshold=0.1):
    """Per (year, month): longest dry run, dry count, max, mean, observed days.

    Walks every calendar day of each month present, so gaps in ``dates``
    count as missing days.
    """
    known = dict(zip(dates, values))
    out = {}
    for year, month in sorted({(d.year, d.month) for d in dates}):
        day = dt.date(year, month, 1)
        flags, obs = [], []
        while day.month == month:
            v = known.get(day, np.nan)
            flags.append(not np.isnan(v) and v <= threshold)
            if not np.isnan(v):
                obs.append(v)
            day += dt.timedelta(days=1)
        longest = max((len(list(g)) for dry, g in itertools.groupby(flags) if dry), default=0)
        if obs:
            out[(year, month)] = (longest, sum(v <= threshold for v in obs), max(obs),
                                  sum(obs) / len(obs), len(obs))
        else:
            out[(year, month)] = (None, None, None, None, 0)
    return out


def random_daily(rng, n_days, start=dt.date(1990, 1, 1)):
    """Daily values mixing exact zeros, threshold hits, rain and gaps."""
    dates = [start + dt.timedelta(days=k) for k in range(n_days)]
    kind = rng.integers(0, 5, n_days)
    vals = np.where(kind == 0, 0.0, np.where(kind == 1, 0.1, rng.exponential(4.0, n_days)))
    vals = np.where(kind == 4, np.nan, vals)
    vals[rng.uniform(size=n_days) < 0.05] = 0.10000001
    keep = rng.uniform(size=n_days) > 0.03
    return [d for d, k in zip(dates, keep) if k], vals[keep]


def matern_correlation_ref(h, kappa):
    from scipy.special import kv
    h = np.asarray(h, dtype=float)
    return kappa * h * kv(1, kappa * h)


def quadrature_posterior(loglik, Q, mode, half_width=4.0):
    """log of int exp(loglik(x)) N(x; 0, Q^{-1}) dx and the posterior mean, by
    adaptive quadrature over a box around ``mode`` (dimension 1 to 3)."""
    d = len(mode)
    _, logdetQ = np.linalg.slogdet(Q)

    def logjoint(x):
        x = np.asarray(x)
        return loglik(x) - 0.5 * x @ Q @ x + 0.5 * logdetQ - 0.5 * d * np.log(2 * np.pi)

    c = logjoint(mode)
    box = [(m - half_width, m + half_width) for m in mode]
    opts = {"epsabs": 1e-13, "epsrel": 1e-10, "limit": 200}

    def moment(k):
        def f(*x):
            v = np.exp(logjoint(np.array(x)) - c)
            return v if k is None else x[k] * v
        return integrate.nquad(f, box, opts=[opts] * d)[0]

    Z = moment(None)
    mean = np.array([moment(k) / Z for k in range(d)])
    return np.log(Z) + c, mean


def random_family_draw(rng, name):
    """A likelihood with random hyperparameters, plus (y, eta, aux) in its support."""
    from precipgam.likelihoods import BGEVLik, Binomial, Gamma, Gaussian, NegBinomial

    elev = rng.uniform(0.1, 3.5)
    if name == "Gaussian":
        lik, eta = Gaussian(np.exp(rng.uniform(-2, 3))), rng.normal(0, 3)
        y = eta + rng.normal(0, 2)
        return lik, y, eta, {}
    if name == "Gamma":
        lik, eta = Gamma(np.exp(rng.uniform(-1.5, 3))), rng.uniform(-3, 4)
        return lik, rng.gamma(lik.phi, np.exp(eta) / lik.phi) + 1e-6, eta, {}
    if name == "NegBinomial":
        lik, eta = NegBinomial(np.exp(rng.uniform(-1.5, 3))), rng.uniform(-2, 4)
        return lik, float(rng.integers(0, 60)), eta, {}
    if name == "Binomial":
        N = int(rng.integers(1, 32))
        return Binomial(), float(rng.integers(0, N + 1)), rng.uniform(-5, 5), {"trials": N}
    lik = BGEVLik(rng.uniform(-1, 2), rng.uniform(-0.5, 0.5), rng.uniform(0, 0.45))
    eta = rng.uniform(0, 40)
    s = lik.spread(elev)
    y = eta + s * rng.uniform(-1.5, 6)
    return lik, y, eta, {"elevation": elev}


def central_difference(f, x, h):
    return (f(x + h) - f(x - h)) / (2 * h)


def ridders_derivative(f, x, h=0.5, n_tab=10, shrink=1.4):
    """Derivative by Ridders' extrapolation of central differences.

    Starts from a large step and shrinks it, extrapolating the tableau to
    zero step; returns the estimate with the smallest internal error.
    """
    a = np.zeros((n_tab, n_tab))
    a[0, 0] = (f(x + h) - f(x - h)) / (2 * h)
    best, err = a[0, 0], np.inf
    for i in range(1, n_tab):
        h /= shrink
        a[0, i] = (f(x + h) - f(x - h)) / (2 * h)
        fac = shrink ** 2
        for j in range(1, i + 1):
            a[j, i] = (a[j - 1, i] * fac - a[j - 1, i - 1]) / (fac - 1)
            fac *= shrink ** 2
            e = max(abs(a[j, i] - a[j - 1, i]), abs(a[j, i] - a[j - 1, i - 1]))
            if e <= err:
                best, err = a[j, i], e
        if abs(a[i, i] - a[i - 1, i - 1]) >= 2 * err:
            break
    return best
