"""Batch command line: ingest, fit, predict, diffmap and simulate.

Configuration is a flat ``key = value`` file; command-line flags and
``--set key=value`` pairs override it. Exit codes: 0 ok, 1 usage error,
2 data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .geodata import (DataError, build_station_records, missing_fraction, read_ascii_grid,
                      read_daily, read_station_meta, read_station_records, write_ascii_grid,
                      write_station_records)
from .inference import FitResult, PriorSet, build_model, optimize_hyper
from .likelihoods import SCENARIO_FAMILY
from .mesh import build_mesh, read_mesh, vertex_elevations, write_mesh
from .predict import (DEFAULT_STEP, MONTHS, PredictionGrid, difference_map, predict_grid,
                      read_grid, render_heatmap, return_level_grid, write_grid)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

DEFAULT_CONFIG = {
    "scenario": "mean", "period": "early", "seed": 0, "workers": 1, "out": "out",
    "dry_threshold_mm": 0.1, "raster_scale": 1.0,
    "max_edge_inner": 0.25, "max_edge_outer": 0.6, "cutoff": 0.02, "extension": 0.5,
    "strategy": "grid", "grid_step": DEFAULT_STEP, "return_period": 20.0,
    "intercept_prec": 1e-9, "gamma_prec": 1e-3, "theta_prec": 1.0, "a_sd": 2.6,
}


class UsageError(Exception):
    pass


# --------------------------------------------------------------------- config

def _coerce(text: str):
    text = text.strip()
    if "," in text:
        parts = [_coerce(p) for p in text.split(",") if p.strip()]
        return tuple(parts)
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text


def read_config(path) -> dict:
    cfg = {}
    with open(path) as fh:
        for n, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key = value")
            k, v = line.split("=", 1)
            cfg[k.strip()] = _coerce(v)
    return cfg


def effective_config(args) -> dict:
    cfg = dict(DEFAULT_CONFIG)
    if args.config:
        cfg.update(read_config(args.config))
    for kv in args.set or []:
        if "=" not in kv:
            raise UsageError(f"--set expects key=value, got {kv!r}")
        k, v = kv.split("=", 1)
        cfg[k.strip()] = _coerce(v)
    for k in ("scenario", "period", "seed", "workers", "out"):
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    if cfg["scenario"] not in SCENARIO_FAMILY:
        raise UsageError(f"unknown scenario {cfg['scenario']!r}; "
                         f"choose from {sorted(SCENARIO_FAMILY)}")
    if cfg["period"] not in ("early", "late"):
        raise UsageError("period must be early or late")
    return cfg


def config_hash(cfg: dict) -> str:
    text = "\n".join(f"{k}={cfg[k]!r}" for k in sorted(cfg))
    return hashlib.sha256(text.encode()).hexdigest()


def _file_hash(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _versions() -> dict:
    import numba
    import scipy
    return {"artifact": __version__, "python": platform.python_version(),
            "numpy": np.__version__, "scipy": scipy.__version__, "numba": numba.__version__}


def _dump_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _need(cfg, key):
    if key not in cfg:
        raise UsageError(f"configuration key {key!r} is required")
    return cfg[key]


def _outdir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


def _tag(cfg) -> str:
    return f"{cfg['scenario']}_{cfg['period']}"


# --------------------------------------------------------------------- commands

def cmd_ingest(cfg) -> dict:
    """Aggregate daily series into the station table; report missingness."""
    out = _outdir(cfg)
    series = read_daily(_need(cfg, "daily"))
    meta = read_station_meta(_need(cfg, "stations"))
    raster = read_ascii_grid(cfg["raster"], cfg["raster_scale"]) if cfg.get("raster") else None
    records, means = build_station_records(series, meta, raster, cfg["dry_threshold_mm"])
    path = out / f"dataset_{cfg['period']}.csv"
    write_station_records(records, path)
    info = {"lon_mean": float(means[0]), "lat_mean": float(means[1]),
            "missing_fraction": missing_fraction(series), "n_records": len(records),
            "n_stations": len(series)}
    _dump_json(info, out / f"dataset_{cfg['period']}.json")
    print(f"ingested {len(series)} stations, {len(records)} station-months; "
          f"missing daily fraction {info['missing_fraction']:.4f}")
    return info


def _load_dataset(cfg):
    out = Path(cfg["out"])
    data = Path(cfg.get("dataset", out / f"dataset_{cfg['period']}.csv"))
    info_path = Path(cfg.get("dataset_info", str(data.with_suffix(".json"))))
    if not data.exists():
        raise DataError(f"dataset {data} not found; run ingest or simulate first")
    records = read_station_records(data)
    with open(info_path) as fh:
        info = json.load(fh)
    return data, records, np.array([info["lon_mean"], info["lat_mean"]])


def _mesh_for(cfg, records, means, raster):
    pts = np.unique(np.array([[r.lon_centred, r.lat_centred] for r in records]), axis=0)
    mesh = build_mesh(pts, cfg["max_edge_inner"], cfg["max_edge_outer"], cfg["cutoff"],
                      cfg["extension"])
    if raster is not None:
        mesh = mesh.with_elevation(vertex_elevations(mesh, raster, means))
    return mesh


def _priors(cfg) -> PriorSet:
    return PriorSet(cfg["intercept_prec"], cfg["gamma_prec"], cfg["theta_prec"], cfg["a_sd"])


def _raster(cfg):
    return read_ascii_grid(cfg["raster"], cfg["raster_scale"]) if cfg.get("raster") else None


def _write_table(summary: dict, path) -> None:
    with open(path, "w") as fh:
        fh.write("name,Mean,SD,0.025quant,0.975quant\n")
        for name, s in summary.items():
            fh.write(f"{name},{s['Mean']:.6g},{s['SD']:.6g},{s['0.025quant']:.6g},"
                     f"{s['0.975quant']:.6g}\n")


def cmd_fit(cfg) -> Path:
    t0 = time.time()
    data, records, means = _load_dataset(cfg)
    raster = _raster(cfg)
    mesh = _mesh_for(cfg, records, means, raster)
    family = SCENARIO_FAMILY[cfg["scenario"]]
    model = build_model(records, mesh, family, _priors(cfg))
    fit = optimize_hyper(model, strategy=cfg["strategy"], workers=int(cfg["workers"]))
    arch = _outdir(cfg) / f"fit_{_tag(cfg)}"
    arch.mkdir(parents=True, exist_ok=True)
    _dump_json(fit.to_dict(), arch / "fit.json")
    _write_table(fit.fixed_summary, arch / "fixed_effects.csv")
    _write_table(fit.hyper_summary, arch / "hyperparameters.csv")
    write_mesh(mesh, arch / "mesh")
    manifest = {"config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in cfg.items()},
                "config_hash": config_hash(cfg), "seed": cfg["seed"], "versions": _versions(),
                "dataset": str(data), "dataset_sha256": _file_hash(data),
                "lon_mean": float(means[0]), "lat_mean": float(means[1]),
                "family": family, "n_vertices": mesh.n_vertices,
                "significant": {n: fit.significant(n) for n in fit.fixed_names}}
    _dump_json(manifest, arch / "manifest.json")
    with open(arch / "runlog.txt", "w") as fh:     # not part of the reproducible archive
        fh.write(f"wall_time_s {time.time() - t0:.3f}\nevaluations {fit.n_evaluations}\n")
    print(f"fit archive written to {arch}")
    return arch


def _load_fit(cfg):
    arch = Path(cfg.get("fit", Path(cfg["out"]) / f"fit_{_tag(cfg)}"))
    if not (arch / "fit.json").exists():
        raise DataError(f"fit archive {arch} not found; run fit first")
    with open(arch / "fit.json") as fh:
        fit = FitResult.from_dict(json.load(fh))
    with open(arch / "manifest.json") as fh:
        manifest = json.load(fh)
    return arch, fit, manifest


def cmd_predict(cfg) -> list:
    arch, fit, manifest = _load_fit(cfg)
    run_cfg = dict(manifest["config"])
    run_cfg.update({k: cfg[k] for k in ("out", "workers") if k in cfg})
    records = read_station_records(manifest["dataset"])
    means = np.array([manifest["lon_mean"], manifest["lat_mean"]])
    raster = _raster(run_cfg)
    mesh = read_mesh(arch / "mesh")
    model = build_model(records, mesh, fit.family, _priors(run_cfg))
    bbox = cfg.get("grid_bbox")
    if bbox is None:
        if raster is None:
            raise UsageError("grid_bbox or raster is required for prediction")
        bbox = raster.extent
    step = tuple(cfg.get("grid_step", DEFAULT_STEP))
    grid = PredictionGrid.build(tuple(bbox), means, mesh, raster, step)
    summary = predict_grid(fit, model, grid, mesh, run_cfg["scenario"])
    out = _outdir(cfg)
    paths = [out / f"grid_{run_cfg['scenario']}_{run_cfg['period']}.csv"]
    write_grid(summary, paths[0])
    if fit.family == "BGEV":
        T = float(cfg.get("return_period", 20.0))
        rl = return_level_grid(fit, summary, T)
        paths.append(out / f"returnlevel_T{T:g}_{run_cfg['period']}.csv")
        write_grid(rl, paths[-1])
    print(f"{grid.n_cells} cells x 12 months written to {', '.join(map(str, paths))}")
    return paths


def cmd_diffmap(cfg, early_path, late_path) -> Path:
    early, late = read_grid(early_path), read_grid(late_path)
    diff = difference_map(early, late)
    out = _outdir(cfg)
    write_grid(diff, out / "difference.csv")
    ext = cfg.get("image_format", "ppm")
    for m in MONTHS:
        write_grid(diff, out / f"diff_{m:02d}.csv", months=[int(m)])
        render_heatmap(diff, int(m), out / f"diff_{m:02d}.{ext}", scale=int(cfg.get("image_scale", 1)))
    print(f"difference maps for 12 months written to {out}")
    return out


def cmd_simulate(cfg) -> Path:
    from .simulate import DEFAULTS, simulate_dataset

    sim_cfg = {k: v for k, v in cfg.items() if k in DEFAULTS or k == "scenario"}
    sim = simulate_dataset(sim_cfg, seed=int(cfg["seed"]))
    out = _outdir(cfg)
    write_station_records(sim.records, out / f"dataset_{cfg['period']}.csv")
    _dump_json({"lon_mean": float(sim.means[0]), "lat_mean": float(sim.means[1]),
                "missing_fraction": float(cfg.get("missing", 0.0)),
                "n_records": len(sim.records), "n_stations": int(sim.truth["n_stations"])},
               out / f"dataset_{cfg['period']}.json")
    write_ascii_grid(sim.raster, out / "raster.asc")
    _dump_json(sim.truth, out / f"truth_{cfg['period']}.json")
    print(f"simulated {len(sim.records)} station-months into {out}")
    return out


# --------------------------------------------------------------------- entry point

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def make_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key = value configuration file")
    common.add_argument("--scenario", choices=sorted(SCENARIO_FAMILY))
    common.add_argument("--period", choices=["early", "late"])
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override a configuration key (repeatable)")
    p = _Parser(prog="precipgam", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("ingest", parents=[common], help="aggregate daily station data")
    sub.add_parser("fit", parents=[common], help="fit the model to a station table")
    sub.add_parser("predict", parents=[common], help="predict on the grid from a fit")
    d = sub.add_parser("diffmap", parents=[common], help="late minus early grid maps")
    d.add_argument("early")
    d.add_argument("late")
    sub.add_parser("simulate", parents=[common], help="write a synthetic dataset")
    return p


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        cfg = effective_config(args)
        if args.command == "ingest":
            cmd_ingest(cfg)
        elif args.command == "fit":
            cmd_fit(cfg)
        elif args.command == "predict":
            cmd_predict(cfg)
        elif args.command == "diffmap":
            cmd_diffmap(cfg, args.early, args.late)
        else:
            cmd_simulate(cfg)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, FileNotFoundError, KeyError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ArithmeticError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        for line in getattr(exc, "history", [])[-5:]:
            print(f"  objective {line!r}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
