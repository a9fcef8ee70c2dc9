"""Command line entry point: ``dilation <command> --config FILE``."""

from __future__ import annotations

import argparse
import math
import os
import sys

import numpy as np

from ..averaging1d import (IntegrationError, integrate_euler, integrate_flavors,
                           integrate_seamless, reformulate, shoot)
from ..coefficient import dilate_local, wrap
from ..fem import SolverError
from ..homogenize import harmonic_mean_1d, tensor_table
from .config import CONFIG_HELP, ConfigError, load_config
from .experiments import (run_channel_study, run_dilation_sweep, run_discretization_sweep,
                          run_homogenization_sweep, run_integrated_test, solve_configured)

SWEEPS = {
    "dilation": run_dilation_sweep,
    "homog": run_homogenization_sweep,
    "disc": run_discretization_sweep,
}


def _output(args, cfg, default: str) -> str:
    return args.output or cfg.output or default


def _say(msg: str) -> None:
    print(msg, flush=True)


def cmd_solve(args, cfg):
    u, _ = solve_configured(cfg)
    path = _output(args, cfg, "solution.csv")
    u.to_csv(path)
    _say(f"solved {cfg.system} ({cfg.method}) on n={u.mesh.n}: wrote {path}")


def cmd_homogenize(args, cfg):
    system = cfg.make_system()
    path = _output(args, cfg, "homogenized.csv")
    if system.dim == 1:
        x = np.linspace(0.0, 1.0, cfg.grid_n)
        abar = harmonic_mean_1d(system.field, x)
        with open(path, "w") as fh:
            fh.write("x1,abar\n")
            for xi, ai in zip(x, abar):
                fh.write(f"{xi:.12g},{ai:.12g}\n")
    else:
        tensor_table(system.field, cfg.grid_n, cfg.cell_n).to_csv(path)
    _say(f"homogenized {cfg.system} on a {cfg.grid_n}-point grid: wrote {path}")


def cmd_dilate_preview(args, cfg):
    """Original, locally dilated and partially dilated coefficient on a 1D line."""
    system = cfg.make_system()
    eps = system.eps
    params = cfg.dilation()
    x = np.linspace(0.0, 1.0, args.points)
    if system.dim == 1:
        pts, cols = x, ["x"]
    else:
        pts = np.column_stack([x, np.full_like(x, args.x2)])
        cols = ["x1"]
    A = system.coefficient()
    fields = (A, dilate_local(A, params), wrap(system.field, cfg.m * eps))
    columns = [np.asarray(F(pts)).reshape(len(x), -1)[:, 0] for F in fields]
    path = _output(args, cfg, "dilate_preview.csv")
    with open(path, "w") as fh:
        fh.write(",".join(cols + ["A", "DA", "partial"]) + "\n")
        for row in zip(x, *columns):
            fh.write(",".join(f"{v:.12g}" for v in row) + "\n")
    _say(f"dilation preview (L={params.L:g}, m={params.m:g}, nu={params.nu:g}): wrote {path}")


def cmd_sweep(args, cfg):
    if args.kind == "integrated":
        out = run_integrated_test(cfg)
        base = _output(args, cfg, "integrated.csv")
        stem, ext = os.path.splitext(base)
        for name, report in out.reports.items():
            path = f"{stem}_{name}{ext or '.csv'}"
            report.to_csv(path)
            _say(f"{name}: slope={report.slope} wrote {path}")
        path = f"{stem}_budget{ext or '.csv'}"
        with open(path, "w") as fh:
            fh.write("m,L,total,disc,homog,dilation\n")
            for r in out.budget:
                fh.write(",".join(f"{r[k]:.12g}" for k in
                                  ("m", "L", "total", "disc", "homog", "dilation")) + "\n")
        _say(f"budget: wrote {path}")
        for m, fits in out.fits.items():
            _say(f"hybrid m={m:g} smooth fit a11: {fits.get((0, 0))}")
        return
    report = SWEEPS[args.kind](cfg)
    path = _output(args, cfg, f"sweep_{args.kind}.csv")
    report.to_csv(path)
    _say(str(report))
    _say(f"wrote {path}")


def cmd_channel(args, cfg):
    report = run_channel_study(cfg)
    path = _output(args, cfg, "channel.csv")
    report.to_csv(path)
    _say(str(report))
    _say(f"wrote {path}")


def cmd_avg1d(args, cfg):
    system = cfg.make_system()
    if system.dim != 1:
        raise ConfigError("avg1d needs a one-dimensional system")
    src = system.source

    def f(x, u):
        return float(src(np.array([x]))[0])

    eps = system.eps
    dx = cfg.dx
    if cfg.shoot:
        res = shoot(system.field, f, eps, target=cfg.target, integrator=cfg.integrator,
                    v0_init=cfg.v0, dx=dx, tau=cfg.tau, dfdu=lambda x, u: 0.0, force=cfg.force)
        traj = res.trajectory
        _say(f"shooting: v0={res.v0:.10g} residual={res.residual:.3g} "
             f"iterations={res.iterations} converged={res.converged}")
    else:
        sys2 = reformulate(system.field, f, eps)
        if dx is None:
            dx = eps / 10 if cfg.integrator == "euler" else eps
        n_steps = int(round(1.0 / dx))
        dx = 1.0 / n_steps
        W0 = (0.0, cfg.v0, 0.0)
        if cfg.integrator == "euler":
            traj = integrate_euler(sys2, dx, n_steps, W0, force=cfg.force)
        elif cfg.integrator == "seamless":
            traj = integrate_seamless(sys2, dx, cfg.tau or dx, n_steps, W0, force=cfg.force)
        elif cfg.integrator == "flavors":
            traj = integrate_flavors(sys2, dx, cfg.tau or dx, n_steps, W0)
        else:
            raise ConfigError(f"unknown integrator {cfg.integrator!r}")
    if not all(math.isfinite(v) for v in traj.u[-1:]):
        raise IntegrationError("trajectory ended non-finite")
    path = _output(args, cfg, "avg1d.csv")
    traj.to_csv(path)
    _say(f"u(1)={traj.u[-1]:.10g}: wrote {path}")


COMMANDS = {
    "solve": cmd_solve,
    "homogenize": cmd_homogenize,
    "dilate-preview": cmd_dilate_preview,
    "sweep": cmd_sweep,
    "channel": cmd_channel,
    "avg1d": cmd_avg1d,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dilation", description="Dilation solvers for oscillatory elliptic problems.",
        epilog=CONFIG_HELP, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, epilog=CONFIG_HELP,
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("--config", required=True, help="experiment configuration file")
        p.add_argument("--output", help="CSV output path (overrides [run] output)")
        p.add_argument("--force", action="store_true",
                       help="skip the scale-condition checks")
        return p

    add("solve", "solve the configured problem and write nodal values")
    add("homogenize", "tabulate the homogenized tensor")
    p = add("dilate-preview", "sample original, dilated and partially dilated coefficients")
    p.add_argument("--points", type=int, default=1025, help="number of samples on [0, 1]")
    p.add_argument("--x2", type=float, default=0.5, help="fixed x2 for 2D systems")
    p = add("sweep", "run an error-component sweep")
    p.add_argument("kind", choices=sorted(list(SWEEPS) + ["integrated"]))
    add("channel", "naive against structure-aware dilation on the channel system")
    add("avg1d", "integrate or shoot the 1D slow/fast ODE")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.force:
            cfg = cfg.with_(force=True)
        COMMANDS[args.command](args, cfg)
    except (SolverError, IntegrationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
