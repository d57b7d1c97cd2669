"""Command line interface: run scenarios, sweep parameters, verify suites.

Exit codes: 0 success, 2 config error, 3 numerical abort, 4 verification
failure. ISOFLOW_THREADS caps sweep workers.
"""

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor

from .scenario import (ConfigError, parse_scenario, registry, run_scenario,
                       with_param)
from .solver import NumericalAbort, SolverError
from .verify import format_checks, run_suite, suite_names

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_VERIFY = 4


def _load_scenario(ref):
    """A scenario reference is either a registry name or a config file path."""
    reg = registry()
    if ref in reg:
        return reg[ref]
    if os.path.exists(ref):
        return parse_scenario(ref)
    raise ConfigError(f"no scenario named {ref!r} and no such file")


def _cmd_run(args):
    sc = _load_scenario(args.scenario)
    traj, csv_path = run_scenario(sc, out_dir=args.out)
    print(f"wrote {csv_path} ({len(traj.diagnostics)} records)")
    return EXIT_OK


def _sweep_worker(payload):
    sc, key, value, out_dir = payload
    varied = with_param(sc, key, value)
    _, csv_path = run_scenario(varied, out_dir=out_dir)
    return csv_path


def _cmd_sweep(args):
    sc = _load_scenario(args.scenario)
    if "=" not in args.param:
        raise ConfigError("expected --param key=v1,v2,...")
    key, raw_vals = args.param.split("=", 1)
    values = [float(v) for v in raw_vals.split(",") if v.strip()]
    if not values:
        raise ConfigError("sweep needs at least one value")
    base_dir = args.out or sc.outputs.directory
    jobs = []
    for v in values:
        out_dir = os.path.join(base_dir, f"sweep-{key.split('.')[-1]}-{v:g}")
        jobs.append((sc, key, v, out_dir))
    env_cap = os.environ.get("ISOFLOW_THREADS")
    workers = min(len(jobs), int(env_cap) if env_cap else (os.cpu_count() or 1))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            paths = list(pool.map(_sweep_worker, jobs))
    else:
        paths = [_sweep_worker(job) for job in jobs]
    for path in paths:
        print(f"wrote {path}")
    return EXIT_OK


def _cmd_verify(args):
    if args.suite == "lyapunov" and args.scenario:
        return _verify_lyapunov_refinement(args)
    if args.suite not in suite_names():
        raise ConfigError(f"unknown verify suite {args.suite!r}; "
                          f"known: {', '.join(suite_names())}")
    results = run_suite(args.suite)
    for line in format_checks(results):
        print(line)
    return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY


def _verify_lyapunov_refinement(args):
    """Residual-vs-refinement table for the decay identities of a scenario."""
    from dataclasses import replace
    from .diagnostics import lyapunov_identity_check
    from .grids import DomainMask
    from .scenario import build_initial, build_medium, build_grid, build_stencil
    from .solver import run as run_solver, Probes

    sc = _load_scenario(args.scenario)
    grid = build_grid(sc.grid)
    medium = build_medium(sc.medium, grid.dim)
    stencil = build_stencil(sc.kernel, grid)
    u0 = build_initial(sc.initial, grid)
    mask = (DomainMask(grid, sc.solver.mask_radius)
            if sc.solver.boundary == "mask" else None)
    out_dir = args.out or sc.outputs.directory
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, "lyapunov_refinement.csv")
    rows = ["level,dt,delta,resid_decay,resid_energy"]
    ok = True
    prev = None
    for level in range(3):
        cfg = replace(sc.solver, dt=sc.solver.dt / 2 ** level)
        traj = run_solver(u0, medium, stencil, cfg,
                          Probes(sc.probes.lp_p, sc.probes.lp_radius,
                                 sc.probes.dist_target))
        rep = lyapunov_identity_check(traj, medium, stencil,
                                      sc.solver.boundary, mask)
        delta = cfg.dt * cfg.snapshot_every
        rows.append(f"{level},{cfg.dt!r},{delta!r},"
                    f"{rep.max_resid_decay!r},{rep.max_resid_energy!r}")
        worst = max(rep.max_resid_decay, rep.max_resid_energy)
        if prev is not None and worst >= prev:
            ok = False
        prev = worst
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(rows) + "\n")
    print(f"wrote {path}")
    print(f"CHECK lyapunov.refinement {'PASS' if ok else 'FAIL'} {prev:.3e}")
    return EXIT_OK if ok else EXIT_VERIFY


def _cmd_list(_args):
    for name, sc in registry().items():
        tag = "" if sc.asserted else "  (exploratory, no assertions)"
        print(f"{name}{tag}")
    return EXIT_OK


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="isoflow",
        description="Nonlocal heat flow simulator and verification harness")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario (registry name or .cfg path)")
    p_run.add_argument("scenario")
    p_run.add_argument("--out", default=None, help="output directory override")
    p_run.set_defaults(fn=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a scenario across parameter values")
    p_sweep.add_argument("scenario")
    p_sweep.add_argument("--param", required=True, help="e.g. dt=1e-2,1e-3")
    p_sweep.add_argument("--out", default=None)
    p_sweep.set_defaults(fn=_cmd_sweep)

    p_verify = sub.add_parser("verify", help="run a verification suite")
    p_verify.add_argument("suite")
    p_verify.add_argument("scenario", nargs="?", default=None,
                          help="scenario for the lyapunov refinement table")
    p_verify.add_argument("--out", default=None)
    p_verify.set_defaults(fn=_cmd_verify)

    p_list = sub.add_parser("list", help="list built-in scenarios")
    p_list.set_defaults(fn=_cmd_list)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, SolverError, ValueError) as exc:
        # kernel/medium/grid validation errors are ValueError subclasses
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
