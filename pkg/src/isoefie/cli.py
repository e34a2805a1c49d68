"""Command line entry point: ``isoefie run-study | check-geometry | print-config-template``."""
from __future__ import annotations

import os

_threads = os.environ.get("ISOEFIE_THREADS")
if _threads:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[_var] = _threads

import argparse  # noqa: E402
import logging  # noqa: E402
import sys  # noqa: E402


def _run_study(args) -> int:
    from .study import ConfigError, StudyConfig, run_study

    try:
        config = StudyConfig.load(args.config)
        if args.output:
            config.output = args.output
        config.validate()
    except (OSError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    results = run_study(config)
    for r in results:
        status = "ok" if r.converged else ("FAILED: " + r.error if r.error else "not converged")
        print(f"p={r.row['p']} m={r.row['m']} dofs={r.row['dofs_real']} iters={r.row['gmres_iters']} "
              f"dp={r.row['dp_error']} mie={r.row['mie_l2_error']} {status}")
    print(f"results written to {config.output}")
    return 0 if all(r.converged for r in results) else 1


def _check_geometry(args) -> int:
    import numpy as np

    from .geometry import GeometryError, save_geometry
    from .study import resolve_geometry

    try:
        geo = resolve_geometry(args.geometry)
    except (OSError, GeometryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(f"patches: {geo.n_patches}")
    print(f"interfaces: {len(geo.interfaces)}")
    for f in geo.interfaces:
        print(f"  patch {f.patch_a} edge {f.edge_a} <-> patch {f.patch_b} edge {f.edge_b}"
              f"{' (reversed)' if f.reversed else ''}")
    print(f"closed: {geo.closed}")
    t = np.linspace(0.0, 1.0, 33)
    s = np.stack(np.meshgrid(t, t, indexing="ij"), axis=-1).reshape(-1, 2)
    taus = []
    for i in range(geo.n_patches):
        _, d1, d2 = geo.evaluate(np.full(s.shape[0], i), s)
        taus.append(np.linalg.norm(np.cross(d1, d2), axis=-1))
    taus = np.concatenate(taus)
    print(f"surface measure: min {taus.min():.4g}, max {taus.max():.4g}")
    if args.export:
        save_geometry(geo, args.export)
        print(f"geometry written to {args.export}")
    return 0


def _print_template(args) -> int:
    from .study import config_template

    sys.stdout.write(config_template())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="isoefie", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run-study", help="run a convergence study from an INI file")
    run.add_argument("config")
    run.add_argument("-o", "--output", help="output directory (overrides the config)")
    run.set_defaults(func=_run_study)
    chk = sub.add_parser("check-geometry", help="validate a geometry file or the builtin 'sphere'")
    chk.add_argument("geometry")
    chk.add_argument("--export", help="write the geometry in the text patch format")
    chk.set_defaults(func=_check_geometry)
    tpl = sub.add_parser("print-config-template", help="print a commented default configuration")
    tpl.set_defaults(func=_print_template)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
