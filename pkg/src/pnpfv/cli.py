"""Command-line interface: ``pnpfv run|mms|steady``.

The log level comes from the ``PNPFV_LOG_LEVEL`` environment variable
(default ``WARNING``).
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import mms, presets, vtk
from .config import ConfigError, apply_overrides, load_document, parse_config
from .diagnostics import DiagnosticsWriter
from .marching import Discretization, SteadyStateError, init_state, run, run_to_steady
from .sparse import SolverError, write_matrix_market
from .transport import MEANS, assemble_density_step

logger = logging.getLogger("pnpfv")

LOG_ENV = "PNPFV_LOG_LEVEL"
_MMS_KEYS = {"preset", "order", "tau_rule", "grids", "end", "limiter", "mean", "reference"}


def _grid_arg(text: str) -> list:
    parts = text.lower().replace("x", ",").split(",")
    try:
        counts = [int(p) for p in parts if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected N or N1xN2[xN3], got {text!r}") from None
    if not counts or any(n < 1 for n in counts):
        raise argparse.ArgumentTypeError(f"grid counts must be positive integers, got {text!r}")
    return counts


def _positive(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got {text!r}")
    return value


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"expected an integer >= 0, got {text!r}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--tau", type=_positive, help="time step (overrides the config)")
    common.add_argument("--grid", type=_grid_arg,
                        help="cells per axis: N or N1xN2xN3 (mms: comma list of N, e.g. 8,16,32)")
    common.add_argument("--scheme", choices=("first", "second"))
    common.add_argument("--mean", choices=MEANS)
    common.add_argument("--limiter", choices=("on", "off"))
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--snapshot-every", type=_nonneg_int, metavar="K",
                        help="write a VTK snapshot every K steps (0: first and last only)")
    common.add_argument("--seed", type=int, help="accepted for reproducible fuzzing harnesses; runs are deterministic")

    parser = argparse.ArgumentParser(
        prog="pnpfv", description="Finite-volume Poisson-Nernst-Planck solver.",
        epilog=f"Set {LOG_ENV}=INFO or DEBUG for progress logging.")
    sub = parser.add_subparsers(dest="command", metavar="{run,mms,steady}")
    p = sub.add_parser("run", parents=[common], help="march a configuration and write outputs")
    p.add_argument("config", help="TOML file or bundled preset name (" + ", ".join(presets.names()) + ")")
    p = sub.add_parser("mms", parents=[common], help="manufactured-solution convergence table")
    p.add_argument("target", help=f"preset ({', '.join(sorted(mms.PRESETS))}) or TOML file with an [mms] table")
    p = sub.add_parser("steady", parents=[common], help="march a closed system to its steady state")
    p.add_argument("config", help="TOML file or bundled preset name")
    return parser


def _configure_logging():
    level = os.environ.get(LOG_ENV, "WARNING").upper()
    if not isinstance(logging.getLevelName(level), int):
        raise ValueError(f"{LOG_ENV}={level!r} is not a logging level")
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def _load_run_config(target: str, args):
    path = Path(target)
    if path.is_file():
        doc, base = load_document(path), path.parent
    elif target in presets.names():
        doc, base = load_document(presets.path(target)), None
    else:
        raise ConfigError("", f"no such file or preset: {target}")
    doc = apply_overrides(doc, tau=args.tau, grid=args.grid, scheme=args.scheme, mean=args.mean,
                          limiter=None if args.limiter is None else args.limiter == "on",
                          snapshot_every=args.snapshot_every)
    cfg = parse_config(doc, base)
    if args.out is not None:
        # relative to the working directory, unlike output.dir in a file
        cfg = dataclasses.replace(cfg, out_dir=Path(args.out))
    return cfg


def _dump_matrices(cfg, disc, state, out: Path):
    write_matrix_market(disc.poisson.matrix, out / "poisson.mtx")
    sc = cfg.scenario
    for i, rho in enumerate(state.densities):
        system = assemble_density_step(sc.grid, rho, state.psis[i], disc.d_faces[i],
                                       disc.dirichlet_faces(i, 0.0, sc.tau), sc.tau, sc.mean)
        write_matrix_market(system.matrix, out / f"density_{i}.mtx")


def cmd_run(args) -> int:
    cfg = _load_run_config(args.config, args)
    sc = cfg.scenario
    out = cfg.out_dir
    out.mkdir(parents=True, exist_ok=True)
    names = [sp.name or f"rho{i}" for i, sp in enumerate(sc.species)]
    disc = Discretization(sc)
    state = init_state(disc)
    if cfg.matrix_dump:
        _dump_matrices(cfg, disc, state, out)

    def snapshot(s):
        if cfg.vtk:
            vtk.write_snapshot(sc.grid, vtk.state_fields(s, names), out / f"snapshot_{s.step:06d}.vtk",
                               f"{sc.name or 'pnpfv'} t={float(s.time)!r}")

    snapshot(state)
    writer = DiagnosticsWriter(out / "diagnostics.csv", len(sc.species)) if cfg.diagnostics_csv else None

    def on_step(s, row, report):
        if writer is not None:
            writer(row)
        if cfg.snapshot_every and s.step % cfg.snapshot_every == 0:
            snapshot(s)

    try:
        result = run(sc, callbacks=[on_step], state=state, disc=disc)
    finally:
        if writer is not None:
            writer.close()
    final = result.state
    if not cfg.snapshot_every or final.step % cfg.snapshot_every:
        snapshot(final)
    patches = sum(r.limiter_count for r in result.reports)
    print(f"steps {final.step}  t {final.time:.6g}  limiter patches {patches}")
    for name, m in zip(names, disc.masses(final)):
        print(f"mass {name} {m:.12g}")
    print(f"energy {disc.energy(final):.12g}")
    print(f"outputs in {out}")
    return 0


def _mms_settings(target: str, args) -> dict:
    if target in mms.PRESETS:
        settings = dict(mms.PRESETS[target])
        settings["grids"] = list(mms.DEFAULT_GRIDS)
    else:
        path = Path(target)
        if not path.is_file():
            raise ConfigError("", f"no such preset or file: {target} (presets: {', '.join(sorted(mms.PRESETS))})")
        doc = load_document(path)
        table = doc.get("mms")
        if not isinstance(table, dict) or set(doc) - {"mms"}:
            raise ConfigError("", "an mms configuration holds a single [mms] table")
        unknown = sorted(set(table) - _MMS_KEYS)
        if unknown:
            raise ConfigError(f"mms.{unknown[0]}", f"unknown key (allowed: {', '.join(sorted(_MMS_KEYS))})")
        preset = table.get("preset")
        if preset is not None and preset not in mms.PRESETS:
            raise ConfigError("mms.preset", f"expected one of {', '.join(sorted(mms.PRESETS))}, got {preset!r}")
        settings = dict(mms.PRESETS[preset]) if preset else {"order": 1, "tau_rule": "h"}
        settings["grids"] = list(mms.DEFAULT_GRIDS)
        settings.update({k: v for k, v in table.items() if k != "preset"})
        if "end" in settings:
            settings["end_time"] = float(settings.pop("end"))
    if args.tau is not None:
        raise ConfigError("", "--tau does not apply to mms; the step follows the preset's tau rule")
    if args.grid is not None:
        settings["grids"] = args.grid
    if args.scheme is not None:
        settings["order"] = 1 if args.scheme == "first" else 2
    if args.mean is not None:
        settings["mean"] = args.mean
    if args.limiter is not None:
        settings["limiter"] = args.limiter == "on"
    return settings


def cmd_mms(args) -> int:
    settings = _mms_settings(args.target, args)
    table = mms.convergence_sweep(**settings)
    text = table.to_csv()
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "errors.csv").write_text(text)
    sys.stdout.write(text)
    return 1 if any(row.error for row in table.rows) else 0


def cmd_steady(args) -> int:
    cfg = _load_run_config(args.config, args)
    sc = cfg.scenario
    result = run_to_steady(sc, cfg.steady_tol, cfg.steady_max_steps)
    names = [sp.name or f"rho{i}" for i, sp in enumerate(sc.species)]
    print(f"steps {result.steps}  t {result.state.time:.6g}")
    for name, c in zip(names, result.constants):
        print(f"c {name} {c:.12e}")
    print(f"residual {result.residual:.3e}")
    if cfg.vtk or cfg.diagnostics_csv:
        cfg.out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.vtk:
        vtk.write_snapshot(sc.grid, vtk.state_fields(result.state, names), cfg.out_dir / "steady.vtk")
    if cfg.diagnostics_csv:
        with DiagnosticsWriter(cfg.out_dir / "diagnostics.csv", len(sc.species)) as writer:
            for row in result.rows:
                writer(row)
    return 0


_COMMANDS = {"run": cmd_run, "mms": cmd_mms, "steady": cmd_steady}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_help(sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.command is None:
        parser.print_help(sys.stderr)
        return 2
    try:
        _configure_logging()
        if args.seed is not None:
            np.random.seed(args.seed)
        return _COMMANDS[args.command](args)
    except (ConfigError, SolverError, SteadyStateError, ValueError, OSError) as exc:
        print(f"pnpfv {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
