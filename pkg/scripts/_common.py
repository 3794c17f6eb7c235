"""Shared helper: run a CLI command and return its parsed report."""

import json
import sys
from pathlib import Path

from regime_mp.cli import main


def run(command, scenario, out, extra=()):
    code = main([command, "--scenario", scenario, "--out", str(out), *extra])
    report = json.loads((Path(out) / "report.json").read_text())
    return code, report


def finish(code):
    sys.exit(code)
