"""Small end-to-end command-line run shared by the CLI and acceptance tests."""
import os
from pathlib import Path

from precipgam.cli import main

SMALL_SETTINGS = ["n_stations=15", "n_years=1", "max_edge_inner=0.5", "max_edge_outer=1.0",
                  "strategy=empirical-bayes", "grid_step=0.25,0.25", "raster=out/raster.asc"]


def run_pipeline(workdir, seed=0, scenario="mean", settings=SMALL_SETTINGS):
    """simulate, fit and predict both periods, then diffmap; paths are relative."""
    sets = [a for kv in settings for a in ("--set", kv)]
    common = ["--scenario", scenario, "--out", "out"] + sets
    here = os.getcwd()
    os.chdir(workdir)
    try:
        for period, s in (("early", seed), ("late", seed + 1)):
            for cmd in ("simulate", "fit", "predict"):
                code = main([cmd, "--period", period, "--seed", str(s)] + common)
                assert code == 0, f"{cmd} {period} exited with {code}"
        code = main(["diffmap", f"out/grid_{scenario}_early.csv", f"out/grid_{scenario}_late.csv",
                     "--out", "out/diff"] + sets)
        assert code == 0, f"diffmap exited with {code}"
    finally:
        os.chdir(here)
    return Path(workdir) / "out"


def output_files(root):
    """Relative path -> bytes for every output except the wall-clock run log."""
    root = Path(root)
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*"))
            if p.is_file() and p.name != "runlog.txt"}
