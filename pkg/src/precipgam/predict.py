"""Posterior prediction on a lon/lat lattice, return levels and difference maps."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.special import expit

from . import bgev
from .geodata import ElevationRaster, elevation_at
from .inference import FitResult, LatentModel, gaussian_approx
from .mesh import TriangleMesh, _inside_convex, projector

try:                                    # PNG output is optional
    from PIL import Image
except ImportError:                     # pragma: no cover
    Image = None

DEFAULT_STEP = (0.037, 0.018)     # lon, lat degrees: about 3 x 2 km in the Alps
MONTHS = np.arange(1, 13)
GRID_COLUMNS = ["lon", "lat", "month", "eta_mean", "eta_sd", "value", "scenario"]
MASK_RGB = (128, 128, 128)


@dataclass
class PredictionGrid:
    """In-domain cells of a regular lattice with origin ``origin`` and ``step``."""
    origin: tuple
    step: tuple
    shape: tuple                # (n_lon, n_lat)
    ix: np.ndarray
    iy: np.ndarray
    lon: np.ndarray
    lat: np.ndarray
    lon_centred: np.ndarray
    lat_centred: np.ndarray
    elevation_km: np.ndarray

    @property
    def n_cells(self) -> int:
        return len(self.lon)

    @classmethod
    def build(cls, bbox, means, mesh: TriangleMesh, raster: ElevationRaster | None = None,
              step=DEFAULT_STEP, hull_only: bool = True) -> "PredictionGrid":
        """Cells of ``bbox = (lon0, lon1, lat0, lat1)`` covered by the mesh.

        Cells whose elevation is missing, or (with ``hull_only``) outside the
        station hull, are masked out.
        """
        lon0, lon1, lat0, lat1 = bbox
        sx, sy = step
        nx = max(int(np.floor((lon1 - lon0) / sx)), 1)
        ny = max(int(np.floor((lat1 - lat0) / sy)), 1)
        ix, iy = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
        ix, iy = ix.ravel(), iy.ravel()
        lon = lon0 + (ix + 0.5) * sx
        lat = lat0 + (iy + 0.5) * sy
        cx, cy = lon - means[0], lat - means[1]
        _, inside = projector(mesh, np.column_stack([cx, cy]))
        if hull_only and mesh.inner_hull is not None:
            inside &= _inside_convex(mesh.inner_hull, np.column_stack([cx, cy]))
        if raster is not None:
            inside &= raster.contains(lon, lat)
            elev = np.full(len(lon), np.nan)
            elev[inside] = elevation_at(raster, lon[inside], lat[inside])
            inside &= np.isfinite(elev)
        else:
            elev = np.zeros(len(lon))
        k = np.flatnonzero(inside)
        return cls((float(lon0), float(lat0)), (float(sx), float(sy)), (nx, ny), ix[k], iy[k],
                   lon[k], lat[k], cx[k], cy[k], elev[k])


@dataclass
class GridSummary:
    grid: PredictionGrid
    eta_mean: np.ndarray        # (n_cells, 12)
    eta_sd: np.ndarray
    value: np.ndarray           # scenario-specific response-scale value
    scenario: str
    family: str


@dataclass
class DifferenceMap:
    grid: PredictionGrid
    value: np.ndarray           # (n_cells, 12), late - early
    scenario: str


def grid_design(model: LatentModel, grid: PredictionGrid, mesh: TriangleMesh, month: int):
    """Rows of the joint predictor matrix for every cell in one month."""
    nv = mesh.n_vertices
    Az, ok = projector(mesh, np.column_stack([grid.lon_centred, grid.lat_centred]))
    if not np.all(ok):
        raise ValueError("grid cells outside the mesh")
    Az = Az.tocoo()
    n = grid.n_cells
    X = np.column_stack([np.ones(n), grid.lat_centred, grid.lon_centred, grid.elevation_km])
    nfix = X.shape[1]
    rows = np.concatenate([Az.row, np.repeat(np.arange(n), nfix)])
    cols = np.concatenate([Az.col + (month - 1) * nv,
                           np.tile(np.arange(nfix), n) + model.n_latent - nfix])
    vals = np.concatenate([Az.data, X.ravel()])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, model.n_latent))


def predictor_moments(factor, mode, Ap: sp.csr_matrix, n_fixed: int = 4):
    """Mean and variance of ``Ap zeta`` under N(mode, H^{-1})."""
    Ap = sp.csr_matrix(Ap)
    mean = Ap @ mode
    n = len(mode)
    fixed = np.arange(n - n_fixed, n)
    # covariance columns of the fixed effects by direct solves
    E = np.zeros((n, n_fixed))
    E[fixed, np.arange(n_fixed)] = 1.0
    S_f = factor.solve(E)                               # (n, n_fixed)
    Az = Ap[:, :n - n_fixed].tocsr()
    X = Ap[:, n - n_fixed:].toarray()
    var = np.einsum("ij,jk,ik->i", X, S_f[fixed], X)
    var += 2.0 * np.einsum("ij,ij->i", (Az @ S_f[:n - n_fixed]), X)
    # latent-latent part: pairs of nonzeros within each row, padded to equal length
    counts = np.diff(Az.indptr)
    c = int(counts.max(initial=0))
    if c:
        nr = Az.shape[0]
        slot = np.arange(Az.nnz) - np.repeat(Az.indptr[:-1], counts)
        rows = np.repeat(np.arange(nr), counts)
        idx = np.zeros((nr, c), dtype=np.int64)
        val = np.zeros((nr, c))
        idx[rows, slot] = Az.indices
        val[rows, slot] = Az.data
        I = np.broadcast_to(idx[:, :, None], (nr, c, c)).ravel()
        J = np.broadcast_to(idx[:, None, :], (nr, c, c)).ravel()
        V = (val[:, :, None] * val[:, None, :]).ravel()
        nz = V != 0
        var += np.bincount(np.repeat(np.arange(nr), c * c)[nz],
                           weights=V[nz] * factor.inv_entries(I[nz], J[nz]), minlength=nr)
    return mean, np.maximum(var, 0.0)


def response_value(family: str, eta_mean):
    """Scenario point value from the posterior mean of eta."""
    if family in ("Gamma", "NegBinomial"):
        return np.exp(eta_mean)
    if family == "Binomial":
        return expit(eta_mean)
    return np.array(eta_mean, dtype=float)


def predict_grid(fit: FitResult, model: LatentModel, grid: PredictionGrid, mesh: TriangleMesh,
                 scenario: str = "") -> GridSummary:
    """Mixture-over-hyperparameters summaries of eta for every cell and month."""
    if grid.n_cells == 0:
        raise ValueError("prediction grid has no in-domain cells")
    n_t = len(MONTHS)
    designs = [grid_design(model, grid, mesh, m) for m in MONTHS]
    w = fit.weights
    m1 = np.zeros((grid.n_cells, n_t))
    m2 = np.zeros((grid.n_cells, n_t))
    for g, psi in enumerate(fit.psi_grid):
        ga = gaussian_approx(model, psi, x0=fit.latent_mean[g])
        for k, Ap in enumerate(designs):
            mean, var = predictor_moments(ga.factor, ga.mode, Ap, len(model.fixed_names))
            m1[:, k] += w[g] * mean
            m2[:, k] += w[g] * (var + mean * mean)
    sd = np.sqrt(np.maximum(m2 - m1 * m1, 0.0))
    return GridSummary(grid, m1, sd, response_value(fit.family, m1), scenario, fit.family)


def return_level_grid(fit: FitResult, summary: GridSummary, T: float = 20.0) -> GridSummary:
    """T-period return level at the posterior means of eta, s_beta(elevation) and xi."""
    if fit.family != "BGEV":
        raise ValueError("return levels need a bGEV fit")
    h = fit.hyper_summary
    s_beta = h["s_beta"]["Mean"] * np.exp(h["beta1"]["Mean"] * summary.grid.elevation_km)
    xi = h["xi"]["Mean"]
    s = np.broadcast_to(s_beta[:, None], summary.eta_mean.shape)
    level = bgev.return_level(summary.eta_mean, s, xi, T)
    return GridSummary(summary.grid, summary.eta_mean, summary.eta_sd, np.asarray(level),
                       summary.scenario, summary.family)


def _keyed(summary):
    g = summary.grid
    return {(round(float(x), 9), round(float(y), 9)): i for i, (x, y) in enumerate(zip(g.lon, g.lat))}


def difference_map(early: GridSummary, late: GridSummary) -> DifferenceMap:
    """Late minus early on cells present in both summaries."""
    ge, gl = early.grid, late.grid
    if not (np.allclose(ge.step, gl.step) and np.allclose(ge.origin, gl.origin)
            and tuple(ge.shape) == tuple(gl.shape)):
        raise ValueError("summaries are on different lattices")
    if early.value.shape[1] != late.value.shape[1]:
        raise ValueError("summaries cover different months")
    if early.scenario != late.scenario:
        raise ValueError(f"scenario mismatch: {early.scenario!r} vs {late.scenario!r}")
    ke, kl = _keyed(early), _keyed(late)
    common = [k for k in ke if k in kl]
    if not common:
        raise ValueError("summaries share no cells")
    ie = np.array([ke[k] for k in common])
    il = np.array([kl[k] for k in common])
    g = PredictionGrid(ge.origin, ge.step, ge.shape, ge.ix[ie], ge.iy[ie], ge.lon[ie], ge.lat[ie],
                       ge.lon_centred[ie], ge.lat_centred[ie], ge.elevation_km[ie])
    return DifferenceMap(g, late.value[il] - early.value[ie], early.scenario)


# --------------------------------------------------------------------- rendering

_DIVERGING = np.array([[33, 102, 172], [146, 197, 222], [247, 247, 247],
                       [244, 165, 130], [178, 24, 43]], dtype=float)
_SEQUENTIAL = np.array([[68, 1, 84], [59, 82, 139], [33, 145, 140],
                        [94, 201, 98], [253, 231, 37]], dtype=float)


def _ramp(anchors, t):
    t = np.clip(t, 0.0, 1.0) * (len(anchors) - 1)
    k = np.minimum(np.floor(t).astype(int), len(anchors) - 2)
    f = (t - k)[..., None]
    return anchors[k] * (1 - f) + anchors[k + 1] * f


def colour(values, diverging: bool):
    v = np.asarray(values, dtype=float)
    if diverging:
        vmax = float(np.max(np.abs(v))) if v.size else 0.0
        t = np.full(v.shape, 0.5) if vmax == 0 else 0.5 + 0.5 * v / vmax
        rgb = _ramp(_DIVERGING, t)
    else:
        lo, hi = (float(v.min()), float(v.max())) if v.size else (0.0, 0.0)
        t = np.full(v.shape, 0.5) if hi == lo else (v - lo) / (hi - lo)
        rgb = _ramp(_SEQUENTIAL, t)
    return np.rint(rgb).astype(np.uint8)


def render_heatmap(data, month: int, out_path, palette: str | None = None, scale: int = 1):
    """Write one month as an image, one pixel block per lattice cell.

    The format follows the suffix: ``.png`` (needs Pillow) or portable pixmap otherwise.
    Masked cells are grey. ``<out_path>.range.txt`` records the value range.
    """
    if not 1 <= month <= 12:
        raise ValueError("month must be in 1..12")
    diverging = isinstance(data, DifferenceMap) if palette is None else palette == "diverging"
    g = data.grid
    vals = data.value[:, month - 1]
    nx, ny = g.shape
    img = np.empty((ny, nx, 3), dtype=np.uint8)
    img[:] = MASK_RGB
    img[ny - 1 - g.iy, g.ix] = colour(vals, diverging)      # north up
    if scale > 1:
        img = np.repeat(np.repeat(img, scale, axis=0), scale, axis=1)
    out_path = str(out_path)
    if out_path.lower().endswith(".png"):
        if Image is None:
            raise RuntimeError("PNG output needs Pillow; use a .ppm path")
        Image.fromarray(img, "RGB").save(out_path, format="PNG")
    else:
        with open(out_path, "wb") as fh:
            fh.write(b"P6\n%d %d\n255\n" % (img.shape[1], img.shape[0]) + img.tobytes())
    lo, hi = (float(vals.min()), float(vals.max())) if vals.size else (np.nan, np.nan)
    with open(out_path + ".range.txt", "w") as fh:
        fh.write(f"min {lo!r}\nmax {hi!r}\n")
    return lo, hi


# --------------------------------------------------------------------- grid files

def write_grid(summary, path, digits: int = 6, months=None) -> None:
    """Delimited text with one row per (month, cell); ``months`` selects a subset."""
    g = summary.grid
    is_diff = isinstance(summary, DifferenceMap)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(GRID_COLUMNS)
        fh.write(f"# origin {g.origin[0]!r} {g.origin[1]!r} step {g.step[0]!r} {g.step[1]!r} "
                 f"shape {g.shape[0]} {g.shape[1]}\n")
        cols = range(summary.value.shape[1]) if months is None else [m - 1 for m in months]
        for k in cols:
            for i in range(g.n_cells):
                em = "NA" if is_diff else f"{summary.eta_mean[i, k]:.{digits}f}"
                es = "NA" if is_diff else f"{summary.eta_sd[i, k]:.{digits}f}"
                w.writerow([f"{g.lon[i]:.6f}", f"{g.lat[i]:.6f}", k + 1, em, es,
                            f"{summary.value[i, k]:.{digits}f}", summary.scenario])


def read_grid(path) -> GridSummary:
    with open(path, newline="") as fh:
        header = fh.readline().strip().split(",")
        if header != GRID_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        meta = fh.readline().split()
        if not meta or meta[0] != "#":
            raise ValueError(f"{path}: missing lattice line")
        origin = (float(meta[2]), float(meta[3]))
        step = (float(meta[5]), float(meta[6]))
        shape = (int(meta[8]), int(meta[9]))
        rows = list(csv.reader(fh))
    months = sorted({int(r[2]) for r in rows})
    cells = {}
    for r in rows:
        cells.setdefault((r[0], r[1]), len(cells))
    n = len(cells)
    em = np.full((n, len(months)), np.nan)
    es, val = em.copy(), em.copy()
    mpos = {m: k for k, m in enumerate(months)}
    for r in rows:
        i, k = cells[(r[0], r[1])], mpos[int(r[2])]
        em[i, k] = np.nan if r[3] == "NA" else float(r[3])
        es[i, k] = np.nan if r[4] == "NA" else float(r[4])
        val[i, k] = float(r[5])
    lon = np.array([float(c[0]) for c in cells])
    lat = np.array([float(c[1]) for c in cells])
    ix = np.rint((lon - origin[0]) / step[0] - 0.5).astype(int)
    iy = np.rint((lat - origin[1]) / step[1] - 0.5).astype(int)
    g = PredictionGrid(origin, step, shape, ix, iy, lon, lat, lon * np.nan, lat * np.nan,
                       np.full(n, np.nan))
    scenario = rows[0][6] if rows else ""
    return GridSummary(g, em, es, val, scenario, "")
