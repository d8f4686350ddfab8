"""Run every config in scripts/configs through the command line entry point."""
import os
import sys
from pathlib import Path

from wide.cli import main as cli_main

HERE = Path(__file__).resolve().parent


def main(out="results/configs"):
    status = 0
    for cfg in sorted((HERE / "configs").glob("*.cfg")):
        rc = cli_main(["--config", str(cfg), "--out", os.path.join(out, cfg.stem)])
        print(f"{cfg.name:24s} exit {rc}")
        status = status or rc
    return status


if __name__ == "__main__":
    sys.exit(main(*sys.argv[1:]))
