import numpy as np
import pytest

from precipgam import bgev
from precipgam.inference import build_model, gaussian_approx, optimize_hyper
from precipgam.predict import (MASK_RGB, DifferenceMap, GridSummary, PredictionGrid, colour,
                               difference_map, grid_design, predict_grid, predictor_moments,
                               read_grid, render_heatmap, response_value, return_level_grid,
                               write_grid)
from precipgam.simulate import simulate_dataset

SMALL = {"n_stations": 15, "n_years": 1, "max_edge_inner": 0.5, "max_edge_outer": 1.0}


@pytest.fixture(scope="module")
def fitted():
    sim = simulate_dataset(SMALL, seed=4)
    model = build_model(sim.records, sim.mesh, "Gamma")
    fit = optimize_hyper(model, strategy="empirical-bayes")
    return sim, model, fit


def grid_for(sim, step=(0.25, 0.2)):
    lon0, lat0 = sim.truth["lon0"], sim.truth["lat0"]
    bbox = (lon0, lon0 + sim.truth["width"], lat0, lat0 + sim.truth["height"])
    return PredictionGrid.build(bbox, sim.means, sim.mesh, sim.raster, step)


def test_grid_masks_cells_outside_hull(fitted):
    sim, _, _ = fitted
    g = grid_for(sim)
    full = PredictionGrid.build((12.0, 16.0, 46.0, 48.0), sim.means, sim.mesh, sim.raster,
                                (0.25, 0.2), hull_only=False)
    assert 0 < g.n_cells < full.n_cells <= 16 * 10
    assert np.all(np.isfinite(g.elevation_km))
    np.testing.assert_allclose(g.lon, 13.0 + (g.ix + 0.5) * 0.25)


def test_predictor_moments_match_dense(fitted):
    sim, model, fit = fitted
    ga = gaussian_approx(model, fit.psi_mode)
    g = grid_for(sim)
    Ap = grid_design(model, g, sim.mesh, 5)
    mean, var = predictor_moments(ga.factor, ga.mode, Ap)
    cov = np.linalg.inv(ga.precision.toarray())
    D = Ap.toarray()
    np.testing.assert_allclose(mean, D @ ga.mode, rtol=1e-12)
    np.testing.assert_allclose(var, np.einsum("ij,jk,ik->i", D, cov, D), rtol=1e-7)


def test_predict_grid_single_point_is_gaussian_moments(fitted):
    sim, model, fit = fitted
    g = grid_for(sim)
    out = predict_grid(fit, model, g, sim.mesh, "mean")
    ga = gaussian_approx(model, fit.psi_mode)
    mean, var = predictor_moments(ga.factor, ga.mode, grid_design(model, g, sim.mesh, 12))
    np.testing.assert_allclose(out.eta_mean[:, 11], mean, rtol=1e-8)
    np.testing.assert_allclose(out.eta_sd[:, 11], np.sqrt(var), rtol=1e-6)
    np.testing.assert_allclose(out.value, np.exp(out.eta_mean))
    assert out.eta_mean.shape == (g.n_cells, 12)


def test_response_values():
    assert response_value("Binomial", 0.0) == 0.5
    assert response_value("NegBinomial", np.log(3.0)) == pytest.approx(3.0)
    assert response_value("BGEV", 7.0) == 7.0


def toy_summary(values, scenario="mean", origin=(10.0, 40.0)):
    n = values.shape[0]
    ix, iy = np.arange(n) % 3, np.arange(n) // 3
    lon, lat = origin[0] + (ix + 0.5) * 0.5, origin[1] + (iy + 0.5) * 0.25
    g = PredictionGrid(origin, (0.5, 0.25), (3, 3), ix, iy, lon, lat, lon - 11, lat - 40.5,
                       np.linspace(0.2, 2.0, n))
    return GridSummary(g, values, np.full_like(values, 0.1), values, scenario, "Gamma")


def test_difference_maps():
    rng = np.random.default_rng(0)
    early, late = toy_summary(rng.normal(size=(7, 12))), toy_summary(rng.normal(size=(7, 12)))
    same = difference_map(early, early)
    assert np.all(same.value == 0)
    d, swapped = difference_map(early, late), difference_map(late, early)
    np.testing.assert_array_equal(d.value, -swapped.value)
    assert d.value[4, 6] == late.value[4, 6] - early.value[4, 6]
    # cells present in only one period are dropped
    part = toy_summary(late.value[:5])
    assert difference_map(early, part).grid.n_cells == 5
    with pytest.raises(ValueError):
        difference_map(early, toy_summary(late.value, scenario="max"))
    with pytest.raises(ValueError):
        difference_map(early, toy_summary(late.value, origin=(10.1, 40.0)))


def test_grid_file_roundtrip(tmp_path):
    s = toy_summary(np.random.default_rng(1).normal(size=(7, 12)))
    write_grid(s, tmp_path / "g.csv")
    back = read_grid(tmp_path / "g.csv")
    np.testing.assert_allclose(back.value, s.value, atol=5e-7)
    np.testing.assert_array_equal(back.grid.ix, s.grid.ix)
    np.testing.assert_array_equal(back.grid.iy, s.grid.iy)
    assert back.grid.shape == s.grid.shape and back.scenario == "mean"
    write_grid(s, tmp_path / "m3.csv", months=[3])
    assert read_grid(tmp_path / "m3.csv").value.shape == (7, 1)
    (tmp_path / "bad.csv").write_text("a,b\n")
    with pytest.raises(ValueError):
        read_grid(tmp_path / "bad.csv")


def test_heatmap_ppm(tmp_path):
    s = toy_summary(np.tile(np.linspace(-1, 1, 7)[:, None], (1, 12)))
    d = DifferenceMap(s.grid, s.value, "mean")
    lo, hi = render_heatmap(d, 3, tmp_path / "d.ppm", scale=2)
    raw = (tmp_path / "d.ppm").read_bytes()
    assert raw.startswith(b"P6\n6 6\n255\n")
    img = np.frombuffer(raw[len(b"P6\n6 6\n255\n"):], np.uint8).reshape(6, 6, 3)
    assert tuple(img[0, 4]) == MASK_RGB           # cell (2, 2) is not in the grid
    assert (lo, hi) == (-1.0, 1.0)
    assert (tmp_path / "d.ppm.range.txt").read_text() == "min -1.0\nmax 1.0\n"
    with pytest.raises(ValueError):
        render_heatmap(d, 13, tmp_path / "x.ppm")


def test_heatmap_png(tmp_path):
    pytest.importorskip("PIL")
    s = toy_summary(np.ones((7, 12)))
    render_heatmap(s, 1, tmp_path / "s.png")
    assert (tmp_path / "s.png").read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_colour_scales():
    c = colour(np.array([-2.0, 0.0, 2.0]), diverging=True)
    assert tuple(c[1]) == (247, 247, 247)
    assert c[0][2] > c[0][0] and c[2][0] > c[2][2]      # blue for negative, red for positive
    flat = colour(np.array([3.0, 3.0]), diverging=False)
    assert np.all(flat[0] == flat[1])


def test_return_level_grid():
    s = toy_summary(np.full((7, 12), 20.0))
    s = GridSummary(s.grid, s.eta_mean, s.eta_sd, s.value, "max", "BGEV")

    class Fit:
        family = "BGEV"
        hyper_summary = {"s_beta": {"Mean": 4.0}, "beta1": {"Mean": 0.2}, "xi": {"Mean": 0.1}}

    rl = return_level_grid(Fit, s, 20)
    sb = 4.0 * np.exp(0.2 * s.grid.elevation_km)
    np.testing.assert_allclose(rl.value[:, 0], bgev.BGEV(20.0, sb, 0.1).quantile(0.95), rtol=1e-10)
    assert np.all(rl.value > return_level_grid(Fit, s, 10).value)
    Fit.family = "Gamma"
    with pytest.raises(ValueError):
        return_level_grid(Fit, s, 20)
