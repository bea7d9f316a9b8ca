"""
Command line entry point.

    kelvintrack solve-p1 --preset paper_p1_f1 --out runs/p1
    kelvintrack solve-p2 --config my.yaml --out runs/p2
    kelvintrack transport --preset paper_transport --out runs/tr
    kelvintrack field-dump --preset paper_p1_f1 --out runs/field
    kelvintrack check-gradients --preset paper_p2
    kelvintrack refine-study --preset paper_p1_f1 --out runs/refine

Exit status: 0 converged, 2 completed without converging, 1 error.
"""

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import pipeline
from .config import PRESETS, ConfigError, build_config, load_config, merge, parse_text, preset_text

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2
GRADIENT_TOL = 1e-6

logger = logging.getLogger("kelvintrack")


def _parser():
    p = argparse.ArgumentParser(prog="kelvintrack", description=__doc__.split("\n\n")[0].strip())
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (
        ("solve-p1", "fixed-final-time intensity optimization"),
        ("solve-p2", "minimum-final-time optimization in arc length"),
        ("transport", "advect the concentration bump with the optimized force"),
        ("field-dump", "field and force magnitude on a uniform grid"),
        ("check-gradients", "finite-difference check of the J and F gradients"),
        ("refine-study", "optimized cost on nested time grids"),
    ):
        s = sub.add_parser(name, help=text, description=text)
        s.add_argument("--config", type=Path, help="YAML run configuration")
        s.add_argument("--preset", choices=PRESETS, help="bundled configuration")
        s.add_argument("--out", type=Path, help="output directory")
        s.add_argument("--seed", type=int, help="override optimizer.seed")
        s.add_argument("--threads", type=int, help="limit BLAS threads")
        s.add_argument("-v", "--verbose", action="store_true")
    return p


def _config(args):
    if args.config and args.preset:
        # preset supplies defaults, the file overrides them
        doc = merge(parse_text(preset_text(args.preset), f"preset:{args.preset}"),
                    parse_text(args.config.read_text(), str(args.config)))
        cfg = build_config(doc, str(args.config))
    elif args.config:
        cfg = load_config(args.config)
    elif args.preset:
        doc = parse_text(preset_text(args.preset), f"preset:{args.preset}")
        cfg = build_config(doc, f"preset:{args.preset}")
    else:
        raise ConfigError("give --config PATH or --preset NAME")
    if args.seed is not None:
        cfg.optimizer = dataclasses.replace(cfg.optimizer, seed=args.seed)
    return cfg


def _status(converged):
    return EXIT_OK if converged else EXIT_NOT_CONVERGED


def _report(res, kind):
    r = res.report
    line = (f"{kind}: cost {r.cost:.10g} after {r.iterations} iterations "
            f"(start {res.start_cost:.10g}), residual {r.residual:.3e}, {r.message}")
    if r.final_time is not None:
        line += f", T_F {r.final_time:.10g}"
    print(line)


def _run(args, cfg):
    out = args.out if args.out is not None else (Path(cfg.out_dir) if cfg.out_dir else None)
    cmd = args.command
    if cmd == "solve-p1":
        res = pipeline.solve_p1(cfg, out)
        _report(res, "solve-p1")
        return _status(res.report.converged)
    if cmd == "solve-p2":
        res = pipeline.solve_p2(cfg, out)
        _report(res, "solve-p2")
        return _status(res.report.converged)
    if cmd == "transport":
        result, solve_res, _ = pipeline.run_transport_cfg(cfg, out)
        if solve_res is not None:
            _report(solve_res, "solve-p1")
        print(f"transport: mass {result.mass[0]:.10g} -> {result.mass[-1]:.10g}, "
              f"containment at T {result.containment[-1]:.6f}, "
              f"min c / max c {min(result.c_min / result.c_max):.4g}")
        return _status(solve_res is None or solve_res.report.converged)
    if cmd == "field-dump":
        grid, files = pipeline.run_field_dump(cfg, out)
        print(f"field-dump: {grid['x'].size} points" + (f" -> {files['field_grid']}" if files else ""))
        return EXIT_OK
    if cmd == "check-gradients":
        errs = pipeline.check_gradients(cfg)
        ok = True
        for name, err in errs.items():
            passed = err <= GRADIENT_TOL
            ok &= passed
            print(f"grad {name}: max relative FD error {err:.3e} ({'pass' if passed else 'FAIL'})")
        return EXIT_OK if ok else EXIT_ERROR
    if cmd == "refine-study":
        rows, _ = pipeline.refine_study(cfg, out_dir=out)
        for r in rows:
            print(f"N={r['N']:4d} cost {r['cost']:.12g} iterations {r['iterations']} gap {r['gap']:.3e}")
        return _status(all(r["converged"] for r in rows))
    raise ConfigError(f"unknown command {cmd}")


def main(argv=None):
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be >= 1")
            with threadpool_limits(limits=args.threads):
                return _run(args, cfg)
        return _run(args, cfg)
    except (ConfigError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
