"""Synthetic station datasets drawn from the model itself, with recorded truth."""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .geodata import (DailySeries, ElevationRaster, StationRecord, _days_in_month,
                      centre_coordinates, elevation_at)
from .gmrf import SpatialPrecisionBuilder, ar1_precision, assemble_fem, kronecker, sample_gmrf
from .inference import RESPONSE_COLUMN, a_to_internal
from .likelihoods import FAMILIES, SCENARIO_FAMILY, BGEVLik, Binomial, Gamma, NegBinomial
from .mesh import TriangleMesh, build_mesh, projector, vertex_elevations

DEFAULTS = {
    "n_stations": 100, "n_years": 5, "start_year": 2000,
    "lon0": 13.0, "lat0": 47.0, "width": 2.0, "height": 1.0,
    "theta": (1.4, 0.0, -1.3, 0.0), "a": 0.9,
    "alpha": 1.0, "gamma1": 0.1, "gamma2": -0.1, "gamma3": 0.2,
    "phi": 3.0, "n_disp": 5.0, "log_spread": 1.0, "xi": 0.1, "beta1": 0.1,
    "missing": 0.0,
    "max_edge_inner": 0.25, "max_edge_outer": 0.6, "cutoff": 0.02, "extension": 0.5,
    "raster_cellsize": 0.02,
}


@dataclass
class SimulationResult:
    records: list
    mesh: TriangleMesh
    raster: ElevationRaster
    means: np.ndarray           # removed (lon, lat) means
    truth: dict
    latent: np.ndarray          # (12, n_vertices) field z
    station_eta: np.ndarray     # (n_stations, 12) predictor without noise


def synthetic_raster(lon0, lat0, width, height, cellsize=0.02, margin=1.0) -> ElevationRaster:
    """Smooth terrain between roughly 0.15 and 3.6 km: a ridge and a basin."""
    x0, y0 = lon0 - margin, lat0 - margin
    ncols = int(np.ceil((width + 2 * margin) / cellsize))
    nrows = int(np.ceil((height + 2 * margin) / cellsize))
    lon = x0 + (np.arange(ncols) + 0.5) * cellsize
    lat = y0 + (nrows - np.arange(nrows) - 0.5) * cellsize
    X, Y = np.meshgrid((lon - lon0) / width, (lat - lat0) / height)
    ridge = np.exp(-((Y - 0.35 - 0.2 * X) / 0.25) ** 2)
    peak = np.exp(-((X - 0.7) ** 2 + (Y - 0.6) ** 2) / 0.05)
    z = 0.15 + 2.2 * ridge * (0.5 + 0.5 * np.cos(2.5 * X)) + 1.2 * peak
    return ElevationRaster(x0, y0, cellsize, np.clip(z, 0.12, 3.7))


def family_for(config) -> type:
    fam = config.get("family") or SCENARIO_FAMILY[config.get("scenario", "mean")]
    return FAMILIES[fam]


def truth_psi(config, family: type) -> np.ndarray:
    """True hyperparameter vector on the internal scales of the fit."""
    if family is Gamma:
        head = [np.log(config["phi"])]
    elif family is NegBinomial:
        head = [np.log(config["n_disp"])]
    elif family is BGEVLik:
        head = list(BGEVLik(config["log_spread"], config["beta1"], config["xi"]).internal())
    else:
        head = []
    return np.array(head + list(config["theta"]) + [float(a_to_internal(config["a"]))])


def _likelihood(config, family):
    if family is Gamma:
        return Gamma(config["phi"])
    if family is NegBinomial:
        return NegBinomial(config["n_disp"])
    if family is BGEVLik:
        return BGEVLik(config["log_spread"], config["beta1"], config["xi"])
    return Binomial()


def simulate_dataset(config: dict | None = None, seed: int = 0) -> SimulationResult:
    cfg = dict(DEFAULTS)
    cfg.update(config or {})
    family = family_for(cfg)
    rng = np.random.default_rng(seed)
    raster = synthetic_raster(cfg["lon0"], cfg["lat0"], cfg["width"], cfg["height"],
                              cfg["raster_cellsize"])
    ns = int(cfg["n_stations"])
    lon = cfg["lon0"] + cfg["width"] * rng.uniform(size=ns)
    lat = cfg["lat0"] + cfg["height"] * rng.uniform(size=ns)
    elev = elevation_at(raster, lon, lat)
    centred, means = centre_coordinates(np.column_stack([lon, lat]))
    mesh = build_mesh(centred, cfg["max_edge_inner"], cfg["max_edge_outer"],
                      cfg["cutoff"], cfg["extension"])
    mesh = mesh.with_elevation(vertex_elevations(mesh, raster, means))

    builder = SpatialPrecisionBuilder(assemble_fem(mesh), mesh.vertex_elevation_km)
    Q = kronecker(ar1_precision(cfg["a"], 12), builder(cfg["theta"]))
    z = sample_gmrf(Q, rng).reshape(12, mesh.n_vertices)
    A, ok = projector(mesh, centred)
    if not np.all(ok):
        raise RuntimeError("simulated stations fall outside the mesh")
    fixed = cfg["alpha"] + cfg["gamma1"] * centred[:, 1] + cfg["gamma2"] * centred[:, 0] \
        + cfg["gamma3"] * elev
    eta = fixed[:, None] + (A @ z.T)

    lik = _likelihood(cfg, family)
    col = RESPONSE_COLUMN[family.tag]
    records = []
    for i in range(ns):
        sid = f"S{i + 1:04d}"
        for year in range(cfg["start_year"], cfg["start_year"] + int(cfg["n_years"])):
            for month in range(1, 13):
                days = _days_in_month(year, month)
                aux = {"elevation": elev[i], "trials": days}
                y = float(lik.sample(np.array([eta[i, month - 1]]), rng, aux)[0])
                if rng.uniform() < cfg["missing"]:
                    y = None
                elif col in ("dry_spell_max", "dry_day_count"):
                    y = int(round(y))
                rec = StationRecord(sid, float(centred[i, 0]), float(centred[i, 1]),
                                    float(elev[i]), year, month, days_observed=days)
                setattr(rec, col, y)
                records.append(rec)

    truth = {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items()}
    truth.update({"seed": int(seed), "family": family.tag,
                  "psi_internal": truth_psi(cfg, family).tolist(),
                  "lon_mean": float(means[0]), "lat_mean": float(means[1])})
    return SimulationResult(records, mesh, raster, means, truth, z, eta)


def simulate_daily(n_stations: int = 3, start=dt.date(1973, 1, 1), end=dt.date(1982, 12, 31),
                   missing: float = 0.0, seed: int = 0, wet_prob: float = 0.45,
                   wet_mean_mm: float = 6.0):
    """Daily series from a two-state Markov chain; ``missing`` days are NaN.

    Returns ``(series, meta)`` in the layouts read by the ingestion code.
    """
    rng = np.random.default_rng(seed)
    n_days = (end - start).days + 1
    dates = [start + dt.timedelta(days=k) for k in range(n_days)]
    series, meta = [], {}
    for i in range(n_stations):
        sid = f"D{i + 1:04d}"
        wet = np.empty(n_days, dtype=bool)
        wet[0] = rng.uniform() < wet_prob
        u = rng.uniform(size=n_days)
        for k in range(1, n_days):
            p = 0.65 if wet[k - 1] else wet_prob * 0.35 / (1 - wet_prob)
            wet[k] = u[k] < p
        amount = np.where(wet, np.round(rng.exponential(wet_mean_mm, n_days) + 0.1, 1), 0.0)
        amount[rng.uniform(size=n_days) < missing] = np.nan
        series.append(DailySeries(sid, dates, amount))
        meta[sid] = {"lon": 13.0 + 2 * rng.uniform(), "lat": 47.0 + rng.uniform(),
                     "elevation_km": float(0.2 + 2 * rng.uniform())}
    return series, meta
