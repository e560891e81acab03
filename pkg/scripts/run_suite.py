"""Run every config in scripts/configs (or the ones named) and tabulate the exit codes."""

import argparse
import sys
import time
from pathlib import Path

from psdecouple.cli import ConfigError, parse_config, run_experiment

HERE = Path(__file__).parent


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("configs", nargs="*", type=Path)
    args = parser.parse_args()
    paths = args.configs or sorted((HERE / "configs").glob("*.yaml"))
    worst = 0
    for path in paths:
        t = time.perf_counter()
        try:
            cfg = parse_config(path.read_text())
        except ConfigError as exc:
            print(f"{path.name:28s} config error: {exc}")
            worst = max(worst, 2)
            continue
        res = run_experiment(cfg)
        status = {0: "pass", 1: "threshold fail", 2: "config error", 3: "numerical error"}[res.exit_code]
        print(f"{path.name:28s} {status:16s} {time.perf_counter() - t:7.1f}s  -> {res.output_dir}")
        worst = max(worst, res.exit_code)
    return worst


if __name__ == "__main__":
    sys.exit(main())
