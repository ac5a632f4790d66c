"""Station data ingestion: daily series, monthly aggregates, elevation rasters."""
from __future__ import annotations

import csv
import datetime as dt
import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

DRY_THRESHOLD_MM = 0.1
NA = "NA"

# Station table columns; the two trailing columns carry the binomial counts.
STATION_COLUMNS = ["Station", "Long.cent", "Lat.cent", "Elev.", "Year", "Month",
                   "Dry spell", "Max rain", "Mean rain", "Dry days", "Days observed"]

AUSTRIA_ELEVATION_KM = (0.112, 3.750)


class DataError(ValueError):
    """Malformed or inconsistent input data."""


@dataclass
class DailySeries:
    station_id: str
    dates: list
    precip_mm: np.ndarray  # NaN marks a missing day

    def __post_init__(self):
        self.precip_mm = np.asarray(self.precip_mm, dtype=float)
        if len(self.dates) != len(self.precip_mm):
            raise DataError("dates and precip_mm differ in length")
        for k in range(1, len(self.dates)):
            if not self.dates[k] > self.dates[k - 1]:
                raise DataError(
                    f"station {self.station_id}: dates not strictly increasing at "
                    f"record {k} ({self.dates[k - 1]} -> {self.dates[k]})")
        bad = self.precip_mm < 0
        if np.any(bad):
            k = int(np.flatnonzero(bad)[0])
            raise DataError(f"station {self.station_id}: negative precipitation "
                            f"at {self.dates[k]}")


@dataclass
class MonthlyAggregate:
    year: int
    month: int
    days_observed: int
    dry_spell_max: int | None
    rain_max: float | None
    rain_mean: float | None
    dry_day_count: int | None


@dataclass
class StationRecord:
    station_id: str
    lon_centred: float
    lat_centred: float
    elevation_km: float
    year: int
    month: int
    dry_spell_max: int | None = None
    rain_max: float | None = None
    rain_mean: float | None = None
    dry_day_count: int | None = None
    days_observed: int = 0


def aggregate_monthly(series: DailySeries,
                      dry_threshold_mm: float = DRY_THRESHOLD_MM) -> list[MonthlyAggregate]:
    """Monthly mean, maximum, dry-day count and longest dry spell.

    A day is dry when its precipitation is at most ``dry_threshold_mm``.
    Missing days (NaN, or dates absent from the record) are excluded from
    every summary and interrupt dry spells. A month whose days are all
    missing yields ``None`` for the four summaries.
    """
    if dry_threshold_mm < 0:
        raise ValueError("dry_threshold_mm must be non-negative")
    groups: dict[tuple[int, int], list[int]] = {}
    for k, d in enumerate(series.dates):
        groups.setdefault((d.year, d.month), []).append(k)

    out = []
    for (year, month), idx in groups.items():
        vals = series.precip_mm[idx]
        ok = ~np.isnan(vals)
        n_obs = int(ok.sum())
        if n_obs == 0:
            out.append(MonthlyAggregate(year, month, 0, None, None, None, None))
            continue
        # dry flags along consecutive calendar days; gaps break the run
        run, best, prev = 0, 0, None
        for k in idx:
            d, v = series.dates[k], series.precip_mm[k]
            if prev is not None and (d - prev).days != 1:
                run = 0
            if not math.isnan(v) and v <= dry_threshold_mm:
                run += 1
                best = max(best, run)
            else:
                run = 0
            prev = d
        obs = vals[ok]
        out.append(MonthlyAggregate(
            year, month, n_obs,
            dry_spell_max=best,
            rain_max=float(obs.max()),
            rain_mean=float(obs.sum() / n_obs),
            dry_day_count=int(np.count_nonzero(obs <= dry_threshold_mm)),
        ))
    return out


def centre_coordinates(points) -> tuple[np.ndarray, np.ndarray]:
    """Remove the mean from (lon, lat) pairs; returns (centred, means)."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if pts.shape[0] == 0:
        raise ValueError("centre_coordinates needs at least one point")
    means = pts.mean(axis=0)
    return pts - means, means


@dataclass
class ElevationRaster:
    """Regular lon/lat grid of elevations (km); row 0 is the northern edge."""
    xllcorner: float
    yllcorner: float
    cellsize: float
    values: np.ndarray
    nodata_value: float = -9999.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("raster values must be a 2D grid")
        if not self.cellsize > 0:
            raise ValueError("cellsize must be positive")
        self.values = np.where(self.values == self.nodata_value, np.nan, self.values)

    @property
    def shape(self):
        return self.values.shape

    @property
    def extent(self) -> tuple[float, float, float, float]:
        nrows, ncols = self.values.shape
        return (self.xllcorner, self.xllcorner + ncols * self.cellsize,
                self.yllcorner, self.yllcorner + nrows * self.cellsize)

    def cell_centres(self) -> tuple[np.ndarray, np.ndarray]:
        nrows, ncols = self.values.shape
        lon = self.xllcorner + (np.arange(ncols) + 0.5) * self.cellsize
        lat = self.yllcorner + (nrows - np.arange(nrows) - 0.5) * self.cellsize
        return lon, lat

    def contains(self, lon, lat) -> np.ndarray:
        x0, x1, y0, y1 = self.extent
        lon, lat = np.asarray(lon), np.asarray(lat)
        return (lon >= x0) & (lon <= x1) & (lat >= y0) & (lat <= y1)


def _bilinear(raster: ElevationRaster, lon: np.ndarray, lat: np.ndarray) -> np.ndarray:
    nrows, ncols = raster.values.shape
    # fractional column/row positions of cell centres (row counted from the south)
    fx = (lon - raster.xllcorner) / raster.cellsize - 0.5
    fy = (lat - raster.yllcorner) / raster.cellsize - 0.5
    fx = np.clip(fx, 0.0, ncols - 1)
    fy = np.clip(fy, 0.0, nrows - 1)
    i0 = np.minimum(np.floor(fx).astype(int), max(ncols - 2, 0))
    j0 = np.minimum(np.floor(fy).astype(int), max(nrows - 2, 0))
    i1 = np.minimum(i0 + 1, ncols - 1)
    j1 = np.minimum(j0 + 1, nrows - 1)
    tx, ty = fx - i0, fy - j0
    grid = raster.values[::-1]  # south-to-north row order
    corners = [(grid[j0, i0], (1 - tx) * (1 - ty)), (grid[j0, i1], tx * (1 - ty)),
               (grid[j1, i0], (1 - tx) * ty), (grid[j1, i1], tx * ty)]
    num = np.zeros_like(fx)
    den = np.zeros_like(fx)
    for v, w in corners:
        ok = ~np.isnan(v)
        num += np.where(ok, v, 0.0) * w * ok
        den += w * ok
    with np.errstate(invalid="ignore", divide="ignore"):
        out = num / den
    # a query sitting exactly on a missing cell's weight-1 corner has den == 0
    out[den <= 1e-14] = np.nan
    return out


def elevation_at(raster: ElevationRaster, lon, lat):
    """Bilinear elevation (km) between cell centres.

    Missing cells are dropped and the remaining weights renormalised; NaN
    when all four neighbours are missing. Raises for points outside the
    raster extent.
    """
    lon_a = np.atleast_1d(np.asarray(lon, dtype=float))
    lat_a = np.atleast_1d(np.asarray(lat, dtype=float))
    inside = raster.contains(lon_a, lat_a)
    if not np.all(inside):
        k = int(np.flatnonzero(~inside)[0])
        raise ValueError(f"point ({lon_a[k]}, {lat_a[k]}) outside raster extent")
    out = _bilinear(raster, lon_a, lat_a)
    return float(out[0]) if np.ndim(lon) == 0 else out


def nearest_valid(raster: ElevationRaster, lon, lat) -> np.ndarray:
    """Value of the nearest non-missing cell centre."""
    from scipy.spatial import cKDTree

    clon, clat = raster.cell_centres()
    LON, LAT = np.meshgrid(clon, clat)
    ok = ~np.isnan(raster.values)
    if not ok.any():
        raise ValueError("raster has no valid cells")
    tree = cKDTree(np.column_stack([LON[ok], LAT[ok]]))
    _, idx = tree.query(np.column_stack([np.ravel(lon), np.ravel(lat)]))
    return raster.values[ok][idx]


def check_elevation_range(values, bounds=AUSTRIA_ELEVATION_KM) -> bool:
    v = np.asarray(values, dtype=float)
    v = v[~np.isnan(v)]
    return bool(v.size and v.min() >= bounds[0] and v.max() <= bounds[1])


# --------------------------------------------------------------------- I/O

def read_ascii_grid(path, scale: float = 1.0) -> ElevationRaster:
    """Read an ESRI-style ASCII grid. ``scale`` converts the stored unit to km."""
    header = {}
    with open(path) as fh:
        lines = fh.read().split("\n")
    body_start = 0
    for k, line in enumerate(lines):
        parts = line.split()
        if len(parts) == 2 and parts[0].lower() in (
                "ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value"):
            header[parts[0].lower()] = float(parts[1])
            body_start = k + 1
        elif parts:
            break
    missing = {"ncols", "nrows", "xllcorner", "yllcorner", "cellsize"} - header.keys()
    if missing:
        raise DataError(f"{path}: raster header missing {sorted(missing)}")
    nrows, ncols = int(header["nrows"]), int(header["ncols"])
    vals = np.array(" ".join(lines[body_start:]).split(), dtype=float)
    if vals.size != nrows * ncols:
        raise DataError(f"{path}: expected {nrows * ncols} values, found {vals.size}")
    nodata = header.get("nodata_value", -9999.0)
    grid = vals.reshape(nrows, ncols)
    grid = np.where(grid == nodata, np.nan, grid * scale)
    return ElevationRaster(header["xllcorner"], header["yllcorner"], header["cellsize"],
                           np.where(np.isnan(grid), nodata, grid), nodata)


def write_ascii_grid(raster: ElevationRaster, path) -> None:
    nrows, ncols = raster.values.shape
    vals = np.where(np.isnan(raster.values), raster.nodata_value, raster.values)
    with open(path, "w") as fh:
        fh.write(f"ncols {ncols}\nnrows {nrows}\n")
        fh.write(f"xllcorner {float(raster.xllcorner)!r}\nyllcorner {float(raster.yllcorner)!r}\n")
        fh.write(f"cellsize {float(raster.cellsize)!r}\nnodata_value {float(raster.nodata_value)!r}\n")
        for row in vals:
            fh.write(" ".join(f"{v:.6f}" for v in row) + "\n")


def read_daily(path) -> list[DailySeries]:
    """Daily input with columns station_id, date (ISO-8601), precip_mm."""
    by_station: dict[str, tuple[list, list]] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"station_id", "date", "precip_mm"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise DataError(f"{path}: daily file needs columns {sorted(need)}")
        for line, row in enumerate(reader, start=2):
            try:
                d = dt.date.fromisoformat(row["date"].strip())
            except ValueError as exc:
                raise DataError(f"{path}:{line}: bad date {row['date']!r}") from exc
            raw = row["precip_mm"].strip()
            v = math.nan if raw in ("", NA, "nan", "NaN") else float(raw)
            dates, vals = by_station.setdefault(row["station_id"].strip(), ([], []))
            dates.append(d)
            vals.append(v)
    return [DailySeries(sid, dates, np.array(vals)) for sid, (dates, vals) in by_station.items()]


def read_station_meta(path) -> dict[str, dict]:
    """Station metadata: station_id, lon, lat and optional elevation_km."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            elev = row.get("elevation_km", "")
            out[row["station_id"].strip()] = {
                "lon": float(row["lon"]), "lat": float(row["lat"]),
                "elevation_km": float(elev) if elev not in ("", None, NA) else math.nan,
            }
    return out


def _fmt(v, digits: int) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return NA
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return f"{v:.{digits}f}"


def write_station_records(records: Iterable[StationRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STATION_COLUMNS)
        for r in records:
            w.writerow([r.station_id, _fmt(r.lon_centred, 6), _fmt(r.lat_centred, 6),
                        _fmt(r.elevation_km, 4), r.year, r.month,
                        _fmt(r.dry_spell_max, 0), _fmt(r.rain_max, 4),
                        _fmt(r.rain_mean, 6), _fmt(r.dry_day_count, 0),
                        r.days_observed])


def _parse(v: str, kind):
    v = v.strip()
    if v in ("", NA):
        return None
    return kind(float(v)) if kind is int else kind(v)


def read_station_records(path) -> list[StationRecord]:
    """Read the station table; 'Dry days' and 'Days observed' are optional."""
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = set(reader.fieldnames or [])
        if not set(STATION_COLUMNS[:9]) <= cols:
            raise DataError(f"{path}: missing columns {sorted(set(STATION_COLUMNS[:9]) - cols)}")
        for line, row in enumerate(reader, start=2):
            try:
                year, month = int(row["Year"]), int(row["Month"])
                days = row.get("Days observed")
                rec = StationRecord(
                    station_id=row["Station"].strip(),
                    lon_centred=float(row["Long.cent"]),
                    lat_centred=float(row["Lat.cent"]),
                    elevation_km=float(row["Elev."]),
                    year=year, month=month,
                    dry_spell_max=_parse(row["Dry spell"], int),
                    rain_max=_parse(row["Max rain"], float),
                    rain_mean=_parse(row["Mean rain"], float),
                    dry_day_count=_parse(row.get("Dry days", NA) or NA, int),
                    days_observed=(int(days) if days not in (None, "", NA)
                                   else _days_in_month(year, month)),
                )
            except (KeyError, ValueError) as exc:
                raise DataError(f"{path}:{line}: {exc}") from exc
            if not 1 <= rec.month <= 12:
                raise DataError(f"{path}:{line}: month {rec.month} out of range")
            out.append(rec)
    return out


def _days_in_month(year: int, month: int) -> int:
    nxt = dt.date(year + (month == 12), month % 12 + 1, 1)
    return (nxt - dt.date(year, month, 1)).days


def build_station_records(series: list[DailySeries], meta: dict[str, dict],
                          raster: ElevationRaster | None = None,
                          dry_threshold_mm: float = DRY_THRESHOLD_MM):
    """Aggregate every station and attach centred coordinates and elevation.

    Returns ``(records, means)`` with ``means`` the removed (lon, lat) means.
    """
    ids = sorted(s.station_id for s in series)
    unknown = [sid for sid in ids if sid not in meta]
    if unknown:
        raise DataError(f"stations without metadata: {unknown[:5]}")
    lonlat = np.array([[meta[sid]["lon"], meta[sid]["lat"]] for sid in ids])
    centred, means = centre_coordinates(lonlat)
    by_id = {s.station_id: s for s in series}
    records = []
    for k, sid in enumerate(ids):
        elev = meta[sid]["elevation_km"]
        if math.isnan(elev):
            if raster is None:
                raise DataError(f"station {sid}: no elevation and no raster given")
            elev = float(elevation_at(raster, lonlat[k, 0], lonlat[k, 1]))
        for agg in sorted(aggregate_monthly(by_id[sid], dry_threshold_mm),
                          key=lambda a: (a.year, a.month)):
            records.append(StationRecord(
                sid, float(centred[k, 0]), float(centred[k, 1]), float(elev),
                agg.year, agg.month, agg.dry_spell_max, agg.rain_max, agg.rain_mean,
                agg.dry_day_count, agg.days_observed))
    return records, means


def missing_fraction(series: list[DailySeries]) -> float:
    total = sum(len(s.precip_mm) for s in series)
    miss = sum(int(np.isnan(s.precip_mm).sum()) for s in series)
    return miss / total if total else 0.0
