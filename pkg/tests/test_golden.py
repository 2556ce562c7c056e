"""CSV headers are part of the interface; changing them must be deliberate."""

import json
from pathlib import Path

from pamislands import harness

GOLDEN = Path(__file__).parent / "golden" / "headers.json"

NAMES = ["CELL_HEADER", "MASS_HEADER", "TREND_HEADER", "CHECK_HEADER", "PROFILE_HEADER", "SWEEP_HEADER"]


def test_headers_match_golden():
    golden = json.loads(GOLDEN.read_text())
    for name in NAMES:
        assert getattr(harness, name) == golden[name], name


def test_written_headers(tmp_path):
    cfg = harness.ExperimentConfig(seeds=[0], t_grid=[5.0], out=str(tmp_path / "r"))
    harness.run_experiment(cfg, figures=False)
    files = {"cells.csv": "CELL_HEADER", "mass.csv": "MASS_HEADER", "trends.csv": "TREND_HEADER",
             "checks.csv": "CHECK_HEADER", "profile.csv": "PROFILE_HEADER"}
    for f, name in files.items():
        first = (tmp_path / "r" / f).read_text().splitlines()[0]
        assert first == ",".join(getattr(harness, name))
