import json

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st
from scipy import optimize, stats

from precipgam.geodata import StationRecord
from precipgam.gmrf import SpatialPrecisionBuilder, ar1_precision, assemble_fem
from precipgam.inference import (ConvergenceError, FitResult, FixedPrior, LatentModel, PriorSet,
                                 SpaceTimePrior, a_from_internal, a_to_internal, build_model,
                                 fd_hessian, gaussian_approx, hyper_marginals, latent_marginals,
                                 log_hyper_posterior, log_marginal_likelihood, mixture_summary,
                                 optimize_hyper)
from precipgam.likelihoods import Binomial, Gamma, Gaussian
from precipgam.mesh import build_mesh


def gaussian_toy(n_obs=30, seed=0):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n_obs), rng.normal(size=n_obs), rng.uniform(-1, 1, n_obs)])
    Q = np.array([[0.5, 0.1, 0.0], [0.1, 2.0, 0.3], [0.0, 0.3, 1.0]])
    y = X @ np.array([1.0, -0.5, 0.3]) + rng.normal(0, 0.7, n_obs)
    model = LatentModel(sp.csr_matrix(X), y, Gaussian, FixedPrior(sp.csc_matrix(Q)),
                        fixed_names=("b0", "b1", "b2"))
    return model, X, Q, y


def test_gaussian_toy_closed_forms():
    model, X, Q, y = gaussian_toy()
    prec = 2.0
    psi = np.array([np.log(prec)])
    ga = gaussian_approx(model, psi)
    P = Q + prec * X.T @ X
    np.testing.assert_allclose(ga.mode, np.linalg.solve(P, prec * X.T @ y), rtol=1e-10)
    np.testing.assert_allclose(np.sqrt(ga.factor.inv_diag()), np.sqrt(np.diag(np.linalg.inv(P))),
                               rtol=1e-10)
    S = X @ np.linalg.inv(Q) @ X.T + np.eye(len(y)) / prec
    ref = stats.multivariate_normal(np.zeros(len(y)), S).logpdf(y)
    assert log_marginal_likelihood(model, psi) == pytest.approx(ref, abs=1e-8)
    assert ga.iterations <= 2


def test_missing_observations_are_dropped():
    model, X, Q, y = gaussian_toy()
    y2 = y.copy()
    y2[[3, 7]] = np.nan
    m2 = LatentModel(sp.csr_matrix(X), y2, Gaussian, FixedPrior(sp.csc_matrix(Q)))
    keep = np.setdiff1d(np.arange(len(y)), [3, 7])
    m3 = LatentModel(sp.csr_matrix(X[keep]), y[keep], Gaussian, FixedPrior(sp.csc_matrix(Q)))
    assert log_hyper_posterior(m2, [0.3]) == pytest.approx(log_hyper_posterior(m3, [0.3]), rel=1e-12)


def test_model_validation():
    model, X, Q, y = gaussian_toy()
    with pytest.raises(ValueError):
        LatentModel(sp.csr_matrix(X), y[:-1], Gaussian, FixedPrior(sp.csc_matrix(Q)))
    with pytest.raises(ValueError):
        LatentModel(sp.csr_matrix(X[:, :2]), y, Gaussian, FixedPrior(sp.csc_matrix(Q)))
    with pytest.raises(ValueError):
        LatentModel(sp.csr_matrix(X), -np.abs(y), Gamma, FixedPrior(sp.csc_matrix(Q)))
    with pytest.raises(ValueError):
        gaussian_approx(model, [np.nan])


def test_newton_reports_non_convergence():
    rng = np.random.default_rng(1)
    X = np.column_stack([np.ones(50), rng.normal(size=50)])
    y = rng.gamma(2.0, 1.0, 50) * 100
    model = LatentModel(sp.csr_matrix(X), y, Gamma, FixedPrior(sp.eye(2, format="csc")))
    with pytest.raises(ConvergenceError) as err:
        gaussian_approx(model, [0.0], x0=np.array([-20.0, 0.0]), max_iter=2)
    assert len(err.value.history) >= 2


@settings(max_examples=50, deadline=None)
@given(a=st.floats(-0.999, 0.999))
def test_ar_transform_roundtrip(a):
    assert float(a_from_internal(a_to_internal(a))) == pytest.approx(a, abs=1e-12)


def small_mesh():
    rng = np.random.default_rng(0)
    pts = rng.uniform([-1, -0.5], [1, 0.5], size=(12, 2))
    mesh = build_mesh(pts, 0.5, 1.0, 0.05, 0.4)
    return mesh.with_elevation(0.5 + 0.3 * mesh.vertices[:, 0] ** 2), pts


def test_space_time_prior_precision_and_logdet():
    mesh, _ = small_mesh()
    builder = SpatialPrecisionBuilder(assemble_fem(mesh), mesh.vertex_elevation_km)
    prior = SpaceTimePrior(builder, n_t=3, priors=PriorSet(1e-2, 1e-1))
    h = np.array([0.4, -0.2, -0.5, 0.1, a_to_internal(0.7)])
    Q, logdet = prior.precision(h)
    Qs = builder(h[:4]).toarray()
    Qt = ar1_precision(0.7, 3).toarray()
    ref = np.zeros((prior.n, prior.n))
    ns = builder.n
    ref[:3 * ns, :3 * ns] = np.kron(Qt, Qs)
    ref[3 * ns:, 3 * ns:] = np.diag([1e-2, 1e-1, 1e-1, 1e-1])
    np.testing.assert_allclose(Q.toarray(), ref, rtol=1e-12, atol=1e-12)
    assert logdet == pytest.approx(np.linalg.slogdet(ref)[1], rel=1e-10)
    assert prior.to_report(h)[4] == pytest.approx(0.7)


def records_for(pts, months=(1, 2, 3), years=(2000, 2001), seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for i, (x, y) in enumerate(pts):
        for yr in years:
            for m in months:
                out.append(StationRecord(f"S{i}", float(x), float(y), 0.4 + 0.1 * i, yr, m,
                                         dry_spell_max=int(rng.integers(0, 9)),
                                         rain_max=float(rng.gamma(3.0, 5.0)),
                                         rain_mean=float(rng.gamma(2.0, 1.5)),
                                         dry_day_count=int(rng.integers(0, 31)), days_observed=31))
    return out


def test_build_model_design():
    mesh, pts = small_mesh()
    recs = records_for(pts)
    recs[0].rain_mean = None
    recs[1].rain_mean = 0.0
    model = build_model(recs, mesh, "Gamma", config={"n_t": 3})
    nv = mesh.n_vertices
    A = model.A.toarray()
    assert A.shape == (len(recs), 3 * nv + 4)
    for r, row in zip(recs, A):
        block = row[(r.month - 1) * nv:r.month * nv]
        assert block.sum() == pytest.approx(1.0)
        assert np.count_nonzero(row[:3 * nv]) == np.count_nonzero(block)
        np.testing.assert_allclose(row[3 * nv:], [1.0, r.lat_centred, r.lon_centred, r.elevation_km])
    assert np.isnan(model.y[:2]).all() and model.observed.sum() == len(recs) - 2
    assert model.hyper_names == ("log_phi", "theta1", "theta2", "theta3", "theta4", "a_internal")
    assert model.report_names[0] == "phi" and model.report_names[-1] == "a"
    binom = build_model(recs, mesh, Binomial, config={"n_t": 3})
    np.testing.assert_array_equal(binom.aux["trials"], 31)
    with pytest.raises(ValueError):
        build_model(recs, mesh, "Gaussian")
    far = records_for(np.array([[40.0, 40.0]]))
    with pytest.raises(ValueError):
        build_model(far, mesh, "Gamma", config={"n_t": 3})


def test_block_and_sparse_paths_agree():
    mesh, pts = small_mesh()
    model = build_model(records_for(pts), mesh, "Gamma", config={"n_t": 3})
    psi = np.array([0.5, 0.3, 0.0, -0.5, 0.0, 1.0])
    v_block, ga_block = log_hyper_posterior(model, psi), gaussian_approx(model, psi)

    class NoBlocks:
        def __init__(self, inner):
            self.inner = inner

        def __getattr__(self, k):
            if k == "blocks":
                raise AttributeError(k)
            return getattr(self.inner, k)

    sparse_model = build_model(records_for(pts), mesh, "Gamma", config={"n_t": 3})
    sparse_model.prior = NoBlocks(sparse_model.prior)
    ga_sparse = gaussian_approx(sparse_model, psi)
    assert log_hyper_posterior(sparse_model, psi) == pytest.approx(v_block, rel=1e-10)
    np.testing.assert_allclose(ga_sparse.mode, ga_block.mode, atol=1e-9)
    np.testing.assert_allclose(ga_sparse.factor.inv_diag(), ga_block.factor.inv_diag(), rtol=1e-8)


def test_fd_hessian_quadratic():
    A = np.array([[-2.0, 0.5], [0.5, -1.0]])
    f = lambda x: 0.5 * x @ A @ x + x[0]
    np.testing.assert_allclose(fd_hessian(f, np.array([0.3, -0.2]), [0.1, 0.05]), A, atol=1e-9)


def test_mixture_summary():
    m, s, lo, hi = mixture_summary([1.0], np.array([[2.0]]), np.array([[0.5]]))
    assert (m[0], s[0]) == (2.0, 0.5)
    assert lo[0] == pytest.approx(2.0 - 1.959963984540054 * 0.5)
    w = np.array([0.3, 0.7])
    mu, sd = np.array([[0.0], [3.0]]), np.array([[1.0], [0.5]])
    m, s, lo, hi = mixture_summary(w, mu, sd)
    assert m[0] == pytest.approx(2.1)
    assert s[0] == pytest.approx(np.sqrt(0.3 * 1 + 0.7 * (0.25 + 9) - 2.1 ** 2))
    cdf = lambda x: 0.3 * stats.norm.cdf(x) + 0.7 * stats.norm.cdf(x, 3, 0.5)
    assert cdf(lo[0]) == pytest.approx(0.025, abs=1e-10)
    assert cdf(hi[0]) == pytest.approx(0.975, abs=1e-10)


def test_hyper_marginals_lognormal():
    model, *_ = gaussian_toy()
    out = hyper_marginals(model, np.array([0.4]), np.array([[0.09]]))["prec"]
    assert out["Mean"] == pytest.approx(np.exp(0.4 + 0.09 / 2), rel=1e-10)
    assert out["SD"] == pytest.approx(np.sqrt((np.exp(0.09) - 1) * np.exp(0.8 + 0.09)), rel=1e-8)
    assert out["0.025quant"] == pytest.approx(np.exp(0.4 - 1.959963984540054 * 0.3))


def test_optimize_hyper_on_gaussian_toy():
    model, X, Q, y = gaussian_toy()

    def exact(t):
        S = X @ np.linalg.inv(Q) @ X.T + np.eye(len(y)) * np.exp(-t)
        return (stats.multivariate_normal(np.zeros(len(y)), S).logpdf(y)
                + stats.norm(0, 10).logpdf(t))

    best = optimize.minimize_scalar(lambda t: -exact(t), bounds=(-5, 5), method="bounded",
                                    options={"xatol": 1e-8}).x
    fit = optimize_hyper(model)
    assert fit.psi_mode[0] == pytest.approx(best, abs=2e-3)
    h = 1e-4
    curv = -(exact(best + h) - 2 * exact(best) + exact(best - h)) / h ** 2
    assert fit.psi_cov[0, 0] == pytest.approx(1 / curv, rel=1e-3)
    assert fit.psi_grid.shape == (5, 1)
    assert fit.weights.sum() == pytest.approx(1.0)
    assert set(fit.fixed_summary) == {"b0", "b1", "b2"}
    assert fit.significant("b0")
    eb = optimize_hyper(model, strategy="empirical-bayes")
    assert eb.psi_grid.shape == (1, 1)
    lm = latent_marginals(model, fit, [0, 1])
    np.testing.assert_allclose(lm["mean"], [fit.fixed_summary["b0"]["Mean"],
                                            fit.fixed_summary["b1"]["Mean"]])
    with pytest.raises(ValueError):
        optimize_hyper(model, strategy="bogus")


def test_fit_result_json_roundtrip():
    model, *_ = gaussian_toy()
    fit = optimize_hyper(model, strategy="empirical-bayes")
    back = FitResult.from_dict(json.loads(json.dumps(fit.to_dict())))
    assert back.fixed_summary == fit.fixed_summary and back.hyper_summary == fit.hyper_summary
    np.testing.assert_array_equal(back.latent_mean, fit.latent_mean)
    assert back.hyper_names == fit.hyper_names


def test_workers_do_not_change_results():
    model, *_ = gaussian_toy()
    a = optimize_hyper(model, workers=1)
    b = optimize_hyper(model, workers=3)
    np.testing.assert_array_equal(a.log_post, b.log_post)
    np.testing.assert_array_equal(a.latent_mean, b.latent_mean)
