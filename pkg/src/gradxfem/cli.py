"""Command-line entry point.

Exit codes: 0 success, 1 solver failure, 2 configuration or usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .config import PRESETS, ConfigError, load_config, with_overrides

EXIT_OK, EXIT_SOLVER, EXIT_CONFIG = 0, 1, 2

DEFAULT_PRESET = {
    "boundary-layer": "fig2_validation",
    "plate": "plate_coarse_xfem",
    "material-point": "material_point",
    "mesh-info": "plate_coarse_xfem",
}
KIND = {"boundary-layer": "boundary_layer", "plate": "plate", "material-point": "material_point"}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="case file (INI sections [case], [geometry], [mesh], ...)")
    common.add_argument("--lambda", dest="lam", type=float, help="radial exponent of the tip enrichment")
    common.add_argument("--enrichment", choices=["none", "topological", "geometrical"], help="enrichment strategy")
    common.add_argument("--r-e", dest="r_e", help="geometrical enrichment radius (mm, or with um/nm suffix)")
    common.add_argument("--increments", type=int, help="number of load increments")
    common.add_argument("--out-dir", type=Path, default=Path("out"), help="output directory (default: ./out)")
    common.add_argument("-v", "--verbose", action="store_true", help="log Newton iterations")

    p = argparse.ArgumentParser(
        prog="gradxfem",
        description="CMSG strain-gradient plasticity fracture benchmarks with XFEM crack-tip enrichment.",
        epilog="exit codes: 0 success, 1 solver failure, 2 configuration error",
    )
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="command")
    sub.add_parser("boundary-layer", parents=[common], help="mode-I boundary layer (K-field on a disc)")
    sub.add_parser("plate", parents=[common], help="edge-cracked plate under end displacement")
    sub.add_parser("material-point", parents=[common], help="single-point uniaxial stress-strain curve")
    sub.add_parser("mesh-info", parents=[common], help="report mesh and enrichment statistics for a case")
    return p


def resolve_config(args):
    if args.config is not None:
        cfg = load_config(args.config)
    else:
        cfg = PRESETS[DEFAULT_PRESET[args.command]]
    if args.command in KIND and cfg.kind != KIND[args.command]:
        cfg = replace(cfg, kind=KIND[args.command])
    r_e = None
    if args.r_e is not None:
        from .config import parse_length

        try:
            r_e = parse_length(args.r_e, cfg.material.l)
        except ValueError as exc:
            raise ConfigError(f"--r-e: {exc}") from exc
    if args.increments is not None and args.increments < 1:
        raise ConfigError("--increments: must be >= 1")
    return with_overrides(cfg, lam=args.lam, enrichment=args.enrichment, r_e=r_e, increments=args.increments)


def _mesh_info(cfg) -> None:
    from .benchmarks import build_boundary_layer, build_plate

    setup = build_boundary_layer(cfg) if cfg.kind == "boundary_layer" else build_plate(cfg)
    disc = setup.problem.disc
    mesh, dm = disc.mesh, disc.dofmap
    size = mesh.element_size
    print(f"case: {cfg.kind} ({cfg.preset or 'custom'})")
    print(f"nodes: {mesh.n_nodes}  elements: {mesh.n_elements}  order: {mesh.order}")
    print(f"dofs: {disc.n_dofs} (standard {mesh.n_dofs})  quadrature points: {disc.n_qp}")
    print(f"heaviside nodes: {len(dm.heaviside_nodes)}  tip nodes: {len(dm.tip_nodes)}")
    print(f"element size: min {size.min():.4g} mm  max {size.max():.4g} mm")
    print(f"max adjacent size ratio: {mesh.max_adjacent_size_ratio():.3f}")


def _run(args, cfg) -> list:
    from .benchmarks import run_boundary_layer, run_material_point, run_plate, strain_path

    if args.command == "plate":
        return run_plate(cfg, args.out_dir).files
    if args.command == "boundary-layer":
        return run_boundary_layer(cfg, args.out_dir).files
    path = strain_path(cfg.path.mode, cfg.path.max_strain, cfg.path.steps)
    rows = run_material_point(cfg.material, path, cfg.path.eta_p, args.out_dir)
    files = [args.out_dir / "material_point.csv"]
    if cfg.output.plots:
        from .plotting import material_point_figure

        files.append(material_point_figure(rows, args.out_dir / "material_point.png"))
    return files


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse: 0 for --help/--version, 2 for usage errors
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")

    from .solver import SolverError

    try:
        cfg = resolve_config(args)
        if args.command == "mesh-info":
            _mesh_info(cfg)
            return EXIT_OK
        files = _run(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"output error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    for f in files:
        print(f)
    return EXIT_OK


def main() -> None:
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
