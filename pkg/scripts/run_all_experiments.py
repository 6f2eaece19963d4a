"""Run every checked-in experiment config through the CLI.

Each run lands in runs/<name> (wiped by --force on rerun) and prints its
one-line JSON summary. Run from the repository root:

    python3 scripts/run_all_experiments.py [config ...]
"""

import subprocess
import sys
from pathlib import Path

CONFIG_DIR = Path(__file__).parent / "configs"


def main(argv):
    configs = [Path(a) for a in argv] or sorted(CONFIG_DIR.glob("*.cfg"))
    failures = 0
    for cfg in configs:
        print(f"== {cfg.name}")
        proc = subprocess.run(
            [sys.executable, "-m", "metriclab", "run", str(cfg), "--force"]
        )
        failures += proc.returncode != 0
    return 1 if failures else 0


if __name__ == "__main__":
    raise SystemExit(main(sys.argv[1:]))
