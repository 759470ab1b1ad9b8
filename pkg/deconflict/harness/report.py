"""report module: Consolidated run reports, manifests and status files."""

# Standard imports
from dataclasses import asdict, dataclass, field
import json
import logging
from pathlib import Path

# Third-party imports
import numpy as np
import pandas as pd

# Local imports
from deconflict.exceptions import DataError
from deconflict.harness.config import config_hash, parse_config

logger = logging.getLogger(__name__)

@dataclass
class RunManifest:
    """What a run produced and how to reproduce it."""

    config_hash: str
    dataset_hashes: dict = field(default_factory=dict)
    seeds: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)
    wall_clock: float = 0.0
    version: str = ""

    def write(self, path):
        write_json(asdict(self), path)

def write_json(obj, path):
    """Write obj as UTF-8 JSON with sorted keys and a trailing newline."""

    with open(path, "w", encoding="utf-8") as jf:
        json.dump(obj, jf, sort_keys=True, indent=2)
        jf.write("\n")

def write_status(run_dir, status, seed=None, error=None):
    write_json({"status": status, "seed": seed, "error": error}, Path(run_dir) / "status.json")

def clean_value(value):
    """Return value with NaN and numpy scalars turned into JSON values."""

    if isinstance(value, (float, np.floating)):
        return None if np.isnan(value) else float(value)
    if isinstance(value, np.integer):
        return int(value)
    return value

def aggregate(frame):
    """Return per-scenario mean and population std of every numeric column.

    Scenarios keep their first-seen order.
    """

    metrics = [c for c in frame.columns
               if c not in ("seed", "scenario") and pd.api.types.is_numeric_dtype(frame[c])]
    grouped = frame.groupby("scenario", sort=False)[metrics]
    means = grouped.mean().add_suffix("_mean")
    stds = grouped.std(ddof=0).add_suffix("_std")
    counts = frame.groupby("scenario", sort=False)["seed"].nunique().rename("seeds")
    out = pd.concat([counts, means, stds], axis=1)
    ordered = ["seeds"] + [f"{m}_{s}" for m in metrics for s in ("mean", "std")]
    return out[ordered].reset_index()

def emit_report(run_dir):
    """Join every seed's rows.csv of run_dir into report.csv and report.json.

    Parameters
    ----------
    run_dir: Path
        run directory holding seed_<s>/rows.csv

    Returns
    -------
    dict written to report.json: preset, config hash, per-seed rows and the
    mean and std aggregate per scenario
    """

    run_dir = Path(run_dir)
    paths = sorted(run_dir.glob("seed_*/rows.csv"), key=lambda p: int(p.parent.name.split("_")[1]))
    if not paths:
        raise DataError(f"no seed results under {run_dir}")
    frame = pd.concat([pd.read_csv(p) for p in paths], ignore_index=True)
    summary = aggregate(frame)
    summary.to_csv(run_dir / "report.csv", index=False)

    header = {}
    if (run_dir / "config.txt").exists():
        config = parse_config(run_dir / "config.txt")
        header = {"preset": config.run.preset, "config_hash": config_hash(config)}
    report = {
        **header,
        "seeds": sorted(int(s) for s in frame["seed"].unique()),
        "rows": [{ k: clean_value(v) for k, v in row.items() } for row in frame.to_dict("records")],
        "aggregate": [{ k: clean_value(v) for k, v in row.items() }
                      for row in summary.to_dict("records")],
    }
    write_json(report, run_dir / "report.json")
    logger.info("Wrote report for %d seeds to %s", len(paths), run_dir)
    return report
