"""Run every config in scripts/configs through the CLI, writing CSVs under results/<config name>/."""

import argparse
import json
import sys
import time
from pathlib import Path

from plateshape.cli import main

HERE = Path(__file__).resolve().parent


def run(config_dir: Path, out_root: Path, only: list[str]) -> int:
    failed = []
    for cfg in sorted(config_dir.glob("*.json")):
        if only and cfg.stem not in only:
            continue
        tag = json.loads(cfg.read_text())["experiment"]
        start = time.perf_counter()
        code = main([tag, "--config", str(cfg), "--out", str(out_root / cfg.stem)])
        print(f"{cfg.stem:20s} {tag:18s} exit {code}  {time.perf_counter() - start:6.1f}s")
        if code:
            failed.append(cfg.stem)
    if failed:
        print("failed:", ", ".join(failed), file=sys.stderr)
    return 1 if failed else 0


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--configs", type=Path, default=HERE / "configs")
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("only", nargs="*", help="config names to run (default: all)")
    args = ap.parse_args()
    sys.exit(run(args.configs, args.out, args.only))
