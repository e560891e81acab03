"""Print the fitted slopes and checks recorded in one or more summary.json files."""

import json
import sys
from pathlib import Path


def main(paths: list[str]) -> None:
    for p in paths:
        s = json.loads(Path(p).read_text())
        print(f"# {s['experiment']}  (M = {s.get('M')}, passed = {s.get('passed')})")
        for q, fit in s.get("slopes", {}).items():
            print(f"  {q:40s} slope {fit['slope']:+.3f}  max residual {fit['max_residual']:.3f}")
        for name, c in s.get("checks", {}).items():
            mark = "ok " if c["passed"] else "BAD"
            print(f"  [{mark}] {name}: {c['value']:.4g}")


if __name__ == "__main__":
    main(sys.argv[1:] or [str(p) for p in sorted(Path("results").glob("*/summary.json"))])
