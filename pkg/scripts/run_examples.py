"""Run every script in scripts/examples through the CLI and report exit codes."""
import argparse
import sys
from pathlib import Path

from phgcalc.cli_dsl import main

HERE = Path(__file__).resolve().parent / "examples"


def run_all(json_out: bool = False) -> int:
    worst = 0
    for path in sorted(HERE.glob("*.phg")):
        print(f"== {path.name}")
        code = main([str(path)] + (["--json"] if json_out else []))
        worst = max(worst, code)
        if code:
            print(f"   exit code {code}", file=sys.stderr)
    return worst


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--json", action="store_true")
    sys.exit(run_all(ap.parse_args().json))
