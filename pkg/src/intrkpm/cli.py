"""Command line: ``intrkpm study|props|export-mesh``.

numpy is imported only after argument parsing so ``--threads`` can cap the
BLAS pools through the environment.
"""
from __future__ import annotations

import argparse
import os
import sys

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def _penalty(text: str) -> tuple[str, float]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected NAME=VALUE, got {text!r}")
    name, val = text.split("=", 1)
    try:
        return name.strip(), float(val)
    except ValueError:
        raise argparse.ArgumentTypeError(f"penalty {name!r} needs a number, got {val!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="intrkpm", description="Interpolated RKPM studies")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("study", help="run a convergence study and write its CSV")
    s.add_argument("name", help="poisson, biharmonic, three_material, plate_hole or inclusion")
    s.add_argument("--config", help="flat key=value file; flags override it")
    s.add_argument("--order", type=int, dest="n", help="RK reproduction order n (1 or 2)")
    s.add_argument("--fg-ratio", type=float, dest="fg_ratio")
    s.add_argument("--p-ref", type=int, dest="p_ref")
    s.add_argument("--refine-levels", type=int, dest="refine_levels")
    s.add_argument("--double", action="store_const", const="double", dest="interpolation",
                   help="double interpolation through the midground")
    s.add_argument("--enrich", action="store_const", const=True)
    s.add_argument("--classic", action="store_const", const=True,
                   help="classic Gauss-integrated RKPM baseline")
    s.add_argument("--solver", choices=("direct", "lstsq"))
    s.add_argument("--epsilon", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--levels", type=int)
    s.add_argument("--out")
    s.add_argument("--threads", type=int)
    s.add_argument("--penalty", type=_penalty, action="append", metavar="NAME=VAL")
    s.add_argument("--quiet", action="store_true", help="no per-level progress on stderr")

    pr = sub.add_parser("props", help="run a property suite")
    pr.add_argument("suite", help="basis, extraction, assembly, solve or all")

    ex = sub.add_parser("export-mesh", help="solve the coarsest level and write mesh and solution")
    ex.add_argument("config")
    ex.add_argument("path")
    return p


def _limit_threads(n: int | None) -> None:
    if n is None or n < 1:
        return
    for var in _THREAD_VARS:
        os.environ[var] = str(n)
    try:        # effective even if numpy was already loaded
        from threadpoolctl import threadpool_limits
        threadpool_limits(n)
    except ImportError:
        pass


def _study_config(args):
    from .studies import StudyConfig, load_config

    over = {k: getattr(args, k) for k in ("n", "fg_ratio", "p_ref", "refine_levels",
                                          "interpolation", "enrich", "classic", "solver",
                                          "epsilon", "seed", "levels", "out", "threads")}
    over["study"] = args.name
    if args.penalty:
        over["penalties"] = dict(args.penalty)
    if args.config:
        base = load_config(args.config)
        if over.get("penalties") is not None:
            over["penalties"] = {**base.penalties, **over["penalties"]}
        values = {**base.__dict__, **{k: v for k, v in over.items() if v is not None}}
        return StudyConfig(**values).validate()
    return StudyConfig(**{k: v for k, v in over.items() if v is not None}).validate()


def _cmd_study(args) -> int:
    _limit_threads(args.threads)
    from .studies import run_study

    cfg = _study_config(args)
    log = None if args.quiet else (lambda msg: print(msg, file=sys.stderr, flush=True))
    report = run_study(cfg, log=log)
    if cfg.out is None:
        sys.stdout.write(report.csv_text())
    for norm in ("L2", "H1", "H2", "energy"):
        if norm in report.rates:
            print(f"rate {norm} fit={report.rates[norm]:.3f} "
                  f"last={report.rates[norm + '_last']:.3f}", file=sys.stderr)
    return 0


def _cmd_props(args) -> int:
    from .properties import run_properties

    checks = run_properties(args.suite)
    for c in checks:
        print(c.line())
    failed = sum(not c.passed for c in checks)
    print(f"{len(checks) - failed}/{len(checks)} passed")
    return 1 if failed else 0


def _cmd_export(args) -> int:
    from .studies import load_config, run_level

    cfg = load_config(args.config)
    _limit_threads(cfg.threads)
    res = run_level(cfg, cfg.ladder()[0], keep=True)
    if res.mesh is None:
        raise RuntimeError("classic studies have no foreground mesh to export")
    res.mesh.save(args.path, res.values)
    print(f"wrote {args.path}: {res.mesh.n_cells} cells, L2 error {res.L2:.4e}")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {"study": _cmd_study, "props": _cmd_props, "export-mesh": _cmd_export}
    try:
        return handlers[args.command](args)
    except KeyboardInterrupt:
        print("error: interrupted", file=sys.stderr)
        return 130
    except Exception as exc:
        msg = str(exc).splitlines()[0] if str(exc) else type(exc).__name__
        print(f"error: {msg}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
