"""Command line entry point: ``miscible-fem <subcommand> [options]``.

Exit status is 0 on success, 1 for usage or configuration errors and 2 when
a solve or another numerical step fails.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .assembly import AssemblyError
from .fe import EvaluationError
from .mesh import MeshError, generate_disk_mesh, generate_square_mesh, mesh_stats, write_mesh
from .sparse import SolverError
from .studies import (ConfigError, RateError, StudyConfig, projection_lab, rate,
                      run_convergence, tensor_probe)
from .timestep import TimeStepError

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2
NUMERICAL_ERRORS = (SolverError, TimeStepError, AssemblyError, EvaluationError,
                    FloatingPointError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _int_list(text: str):
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _float_list(text: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _study_options(p: argparse.ArgumentParser, with_exponents: bool = False) -> None:
    p.add_argument("--config", type=Path, help="JSON config file; flags override its keys")
    p.add_argument("--mesh-levels", type=_int_list, help="comma-separated mesh parameters M")
    p.add_argument("--degree", type=int, help="concentration polynomial degree r")
    p.add_argument("--dt", type=float, help="fixed time step (implies --dt-policy fixed)")
    p.add_argument("--dt-policy", choices=("h2/2", "h2/4", "h", "fixed"))
    p.add_argument("--final-time", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--output", help="report CSV path; the JSON summary goes next to it")
    p.add_argument("--replicate-paper", action="store_true",
                   help="reference mesh lists and, for ex52, dt = 2^-14")
    if with_exponents:
        p.add_argument("--p", type=float, help="time exponent of the L^p(L^q) norms")
        p.add_argument("--q", type=float, help="space exponent of the L^p(L^q) norms")
    else:
        p.add_argument("--mass-lumping", action="store_true", default=None,
                       help="row-sum lumped mass (degraded scheme, negative control)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="miscible-fem",
                     description="Finite element studies for miscible displacement.")
    parser.add_argument("-v", "--verbose", action="store_true", help="progress messages")
    sub = parser.add_subparsers(dest="command", metavar="subcommand", parser_class=_Parser)

    m = sub.add_parser("mesh", help="generate a mesh, print its statistics")
    m.add_argument("--domain", choices=("square", "disk"), default="square")
    m.add_argument("-M", type=int, required=True, help="mesh parameter")
    m.add_argument("--output", help="write the mesh in the plain-text format")

    for name, helptext in (("ex51", "rough-coefficient parabolic convergence study"),
                           ("ex52", "coupled disk problem convergence study")):
        _study_options(sub.add_parser(name, help=helptext))
    _study_options(sub.add_parser("projection-lab", help="parabolic projection stability lab"),
                   with_exponents=True)

    t = sub.add_parser("tensor-probe", help="dispersion tensor regularity probes")
    t.add_argument("--config", type=Path)
    t.add_argument("--eps", type=_float_list, help="decreasing step sizes")
    t.add_argument("--alpha", type=float, default=0.1)
    t.add_argument("--seed", type=int)
    t.add_argument("--output", help="probe CSV path")

    r = sub.add_parser("rate", help="observed convergence orders from error/h pairs")
    r.add_argument("--errors", type=_float_list, required=True)
    r.add_argument("--hs", type=_float_list, required=True)
    return parser


def _config(args, experiment: str) -> StudyConfig:
    if args.config is not None:
        try:
            config = StudyConfig.from_json(args.config)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        if config.experiment != experiment:
            raise ConfigError(f"config is for {config.experiment!r}, not {experiment!r}")
        base = {f: getattr(config, f) for f in config.__dataclass_fields__}
    else:
        base = {"experiment": experiment}
    overrides = {
        "mesh_levels": getattr(args, "mesh_levels", None),
        "degree": getattr(args, "degree", None),
        "dt": getattr(args, "dt", None),
        "dt_policy": getattr(args, "dt_policy", None),
        "final_time": getattr(args, "final_time", None),
        "seed": getattr(args, "seed", None),
        "output": getattr(args, "output", None),
        "p": getattr(args, "p", None),
        "q": getattr(args, "q", None),
        "mass_lumping": getattr(args, "mass_lumping", None),
    }
    if overrides["dt"] is not None and overrides["dt_policy"] is None:
        overrides["dt_policy"] = "fixed"
    base.update({k: v for k, v in overrides.items() if v is not None})
    config = StudyConfig.from_dict(base)
    if getattr(args, "replicate_paper", False):
        config = config.reference_setup()
    return config


def _outputs(config: StudyConfig):
    csv_path = Path(config.output or f"{config.experiment}_report.csv")
    return csv_path, csv_path.with_suffix(".json")


def _emit(report, config: StudyConfig) -> None:
    csv_path, json_path = _outputs(config)
    csv_path.parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(csv_path)
    report.write_json(json_path)
    sys.stdout.write(report.csv_text())
    print(f"wrote {csv_path} and {json_path}", file=sys.stderr)


def _progress(args):
    return (lambda msg: print(msg, file=sys.stderr, flush=True)) if args.verbose else None


def _cmd_mesh(args) -> int:
    mesh = generate_disk_mesh(args.M) if args.domain == "disk" else generate_square_mesh(args.M)
    stats = mesh_stats(mesh)
    print(json.dumps({"domain": args.domain, "M": args.M, "vertices": mesh.n_vertices,
                      "triangles": mesh.n_triangles, "boundary_edges": len(mesh.boundary_edges),
                      "h_max": stats.h_max, "h_min": stats.h_min,
                      "total_area": stats.total_area, "quality": stats.quality}, indent=2))
    if args.output:
        write_mesh(mesh, args.output)
    return EXIT_OK


def _cmd_study(args) -> int:
    config = _config(args, args.command)
    if args.command == "projection-lab":
        report = projection_lab(config, progress=_progress(args))
    else:
        report = run_convergence(config, progress=_progress(args))
    _emit(report, config)
    return EXIT_OK


def _cmd_tensor_probe(args) -> int:
    config = _config(args, "tensor-probe")
    kwargs = {"alpha": args.alpha}
    if args.eps:
        kwargs["eps_list"] = args.eps
    _emit(tensor_probe(config, **kwargs), config)
    return EXIT_OK


def _cmd_rate(args) -> int:
    print(",".join(str(round(r, 4)) for r in rate(args.errors, args.hs)))
    return EXIT_OK


COMMANDS = {"mesh": _cmd_mesh, "ex51": _cmd_study, "ex52": _cmd_study,
            "projection-lab": _cmd_study, "tensor-probe": _cmd_tensor_probe, "rate": _cmd_rate}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_usage(sys.stderr)
            raise UsageError("miscible-fem: error: a subcommand is required")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:          # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, RateError, MeshError, ValueError) as exc:
        if isinstance(exc, NUMERICAL_ERRORS):
            print(f"numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERICAL
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
