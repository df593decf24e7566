"""Run every shipped recipe through the CLI.

Usage: python3 scripts/run_all_recipes.py [OUTPUT_ROOT] [--skip-slow]
Each recipe writes into OUTPUT_ROOT/<recipe name>. Exits non-zero if any
recipe fails to run or reports a FAIL criterion.
"""

import argparse
import json
import sys
from pathlib import Path

from isospec.cli import main, recipe_names

SLOW = {"statphase-morsebott-d2"}


def run(root, skip_slow):
    bad = []
    for name in recipe_names():
        if skip_slow and name in SLOW:
            print(f"== {name} (skipped)")
            continue
        out = Path(root) / name
        print(f"== {name}", flush=True)
        code = main(["run", name, "--output-dir", str(out)])
        manifest = out / "manifest.json"
        status = json.loads(manifest.read_text())["status"] if manifest.exists() else "missing"
        if code != 0 or status != "PASS":
            bad.append(name)
    print(f"{len(bad)} recipe(s) failed" + (f": {', '.join(bad)}" if bad else ""))
    return 1 if bad else 0


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("output_root", nargs="?", default="out")
    ap.add_argument("--skip-slow", action="store_true")
    args = ap.parse_args()
    sys.exit(run(args.output_root, args.skip_slow))
