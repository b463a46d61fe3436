"""Command line interface: ``sgcorrosion <subcommand> [options]``."""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

from . import config as cfgmod
from . import experiments as ex
from .params import HypothesisWarning, validate
from .timeloop import run

log = logging.getLogger("sgcorrosion")


def _load(args) -> cfgmod.Config:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.default()
    s = cfg.settings
    if args.mesh is not None:
        s["mesh"] = args.mesh
    if args.cells is not None:
        s["cells"] = args.cells
    if args.mesh_file is not None:
        s["mesh_file"] = args.mesh_file
    return cfg


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_validate(args) -> int:
    cfg = _load(args)
    report = validate(cfg.params)
    print(report.format())
    return 0


def cmd_run(args) -> int:
    cfg = _load(args)
    rc = cfg.run_config()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", HypothesisWarning)
        traj = run(rc)
    out = _out(args)
    records = [(k + 1, it, r, m[0], m[1], int(b), npn, nnn)
               for k, (it, r, m, b, npn, nnn) in enumerate(zip(
                   traj.iterations, traj.residuals, traj.mass_defects,
                   traj.in_bounds, traj.norm_p, traj.norm_n))]
    path = ex.write_rows(out / "diagnostics.csv",
                         ("step", "iterations", "residual", "mass_defect_p", "mass_defect_n",
                          "in_bounds", "norm_p", "norm_n"), records)
    final = ex.write_rows(out / "final.csv", ex.PROFILE_COLUMNS,
                          ex.profile_records(traj.final, rc.mesh))
    print(f"steps={len(traj.iterations)} all_in_bounds={traj.all_in_bounds} "
          f"steady={traj.steady} max_residual={traj.max_residual:.3e}")
    print(f"wrote {path} and {final}")
    return 0 if traj.all_in_bounds else 2


def cmd_profile(args) -> int:
    cfg = _load(args)
    res = ex.profile_run(cfg.run_config(), _out(args))
    print(f"wrote {len(res.paths)} profile(s) to {args.out}; steady={res.steady}")
    return 0


def cmd_conv_space(args) -> int:
    cfg = _load(args)
    s = cfg.settings
    table = ex.convergence_space(cfg.run_config(), s["resolutions"], s["reference_cells"],
                                 s["reference_dt"], threads=args.threads, norm=s["error_norm"])
    path = ex.emit_csv(table, _out(args) / "conv_space.csv")
    for f in ex.FIELDS:
        print(f"rate_{f} (finest two pairs) = {table.headline_rate(f):.3f}")
    print(f"wrote {path}")
    return 0


def cmd_conv_time(args) -> int:
    cfg = _load(args)
    s = cfg.settings
    table = ex.convergence_time(cfg.run_config(), s["dt_list"], s["reference_dt"], s["cells"],
                                threads=args.threads)
    path = ex.emit_csv(table, _out(args) / "conv_time.csv")
    for f in ex.FIELDS:
        print(f"rate_{f} (finest two pairs) = {table.headline_rate(f):.3f}")
    print(f"wrote {path}")
    return 0


def cmd_eps_sweep(args) -> int:
    cfg = _load(args)
    s = cfg.settings
    table = ex.eps_sweep(cfg.run_config(), s["eps_list"], s["cells"], s["dt"],
                         s["reference_cells"], s["reference_dt"], threads=args.threads,
                         norm=s["error_norm"])
    path = ex.emit_csv(table, _out(args) / "eps_sweep.csv")
    print(f"wrote {path}")
    return 0


COMMANDS = {
    "validate": (cmd_validate, "check the stability hypotheses of a parameter set"),
    "run": (cmd_run, "run one simulation and write per-step diagnostics"),
    "profile": (cmd_profile, "write x,p,n,psi profiles at the output times"),
    "conv-space": (cmd_conv_space, "spatial convergence table"),
    "conv-time": (cmd_conv_time, "temporal convergence table"),
    "eps-sweep": (cmd_eps_sweep, "errors across epsilon at fixed mesh and step"),
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--out", default="results", help="output directory (default: results)")
    common.add_argument("--threads", type=int, default=1,
                        help="worker processes for independent runs")
    common.add_argument("--mesh", choices=("uniform", "tchebychev"))
    common.add_argument("--cells", type=int)
    common.add_argument("--mesh-file", help="interfaces, one per line")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(
        prog="sgcorrosion",
        description="Scharfetter-Gummel finite volume solver for the corrosion drift-diffusion model.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (fn, help_) in COMMANDS.items():
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=fn)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        return args.func(args)
    except (cfgmod.ConfigError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ex.StudyError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
