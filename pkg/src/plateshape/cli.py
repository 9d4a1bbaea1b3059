"""Command-line driver: ``plateshape <experiment> --config <json> [--out dir] [--seed u64]``.

Exit status 0 on success, 2 for usage or configuration errors, 3 when a
numerical error propagates from the library.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile

from .config import EXPERIMENTS, ConfigError, load_config
from .errors import NUMERICAL_ERRORS, InvalidArgumentError
from .experiments import Table, run_experiment

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 2, 3


def format_value(v) -> str:
    if isinstance(v, bool):
        return str(v).lower()
    if isinstance(v, (int,)) and not isinstance(v, bool):
        return str(v)
    if isinstance(v, float) or hasattr(v, "dtype"):
        return f"{float(v):.12g}"
    return str(v)


def render_csv(table: Table, header: dict) -> str:
    lines = [f"# {k}: {v}" for k, v in header.items()]
    lines += [f"# note: {n}" for n in table.notes]
    lines.append(",".join(table.columns))
    lines += [",".join(format_value(v) for v in row) for row in table.rows]
    return "\n".join(lines) + "\n"


def csv_body(text: str) -> str:
    """The data part of a rendered CSV (header comment lines removed)."""
    return "".join(ln for ln in text.splitlines(keepends=True) if not ln.startswith("#"))


def write_atomic(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=".csv")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def limit_threads():
    """Honour PLATESHAPE_THREADS (default 1, which also keeps BLAS reductions reproducible)."""
    raw = os.environ.get("PLATESHAPE_THREADS", "1")
    try:
        n = max(1, int(raw))
    except ValueError as exc:
        raise ConfigError(f"PLATESHAPE_THREADS must be an integer, got {raw!r}") from exc
    from threadpoolctl import threadpool_limits
    return threadpool_limits(limits=n)


def write_outputs(table: Table, cfg, out_dir: str) -> list[str]:
    written = []
    base_header = {"experiment": cfg.experiment, "config": cfg.canonical_json(),
                   "input_hash": cfg.input_hash(table.mesh_digest), "mesh": table.mesh_digest or "n/a"}
    main = os.path.join(out_dir, f"{cfg.experiment}.csv")
    write_atomic(main, render_csv(table, {**base_header, "tests": table.tests}))
    written.append(main)
    for stem, sub in table.extra.items():
        path = os.path.join(out_dir, f"{cfg.experiment}_{stem}.csv")
        write_atomic(path, render_csv(sub, {**base_header, "mesh": sub.mesh_digest or base_header["mesh"],
                                            "tests": sub.tests}))
        written.append(path)
    return written


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="plateshape", description="Reissner-Mindlin plate shape-perturbation studies")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", required=True, help="JSON config file")
    p.add_argument("--out", default="results", help="output directory (default: results)")
    p.add_argument("--seed", type=int, default=None, help="unsigned 64-bit seed, overrides the config")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config, experiment=args.experiment, seed=args.seed)
        with limit_threads():
            table = run_experiment(cfg)
        paths = write_outputs(table, cfg, args.out)
    except NUMERICAL_ERRORS as exc:
        print(f"plateshape: numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ConfigError, InvalidArgumentError) as exc:
        print(f"plateshape: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    for path in paths:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
