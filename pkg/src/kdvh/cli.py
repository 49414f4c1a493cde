"""Command-line entry point: ``kdvh <command> [options]``.

Exit status is 0 on success, 1 for configuration errors and 2 for numerical
failures.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericalError
from .harness import (
    DEFAULT_TAUS,
    GROWTH_SOLITON_SPEED,
    RunConfig,
    aa_study,
    ap_sweep,
    error_growth,
    flatten_config,
    write_csv,
    write_meta,
)
from .imex.stepper import KdvhProblem, KdvProblem, StageSolverCache, integrate
from .model import KdvhState, kdv_soliton, well_prepared_init, write_snapshot
from .sbp import check_operator_set, make_grid, make_operators
from .waves import (
    TravelingWaveParams,
    classify_equilibria,
    find_homoclinic,
    integrate_orbit,
    petviashvili_solve,
    phase_portrait_field,
    write_field_csv,
    write_orbit_csv,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("kdvh")


def _on_off(text: str) -> bool:
    if text.lower() in ("on", "true", "yes", "1"):
        return True
    if text.lower() in ("off", "false", "no", "0"):
        return False
    raise argparse.ArgumentTypeError("expected on or off")


def _float_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}") from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML file with [run], [grid], [operator], [time], [initial] sections")
    p.add_argument("--tau", type=float)
    p.add_argument("--dt", type=float)
    p.add_argument("--n", type=int)
    p.add_argument("--method")
    p.add_argument("--order", type=int)
    p.add_argument("--operator", choices=("upwind_fd", "fourier"))
    p.add_argument("--t-final", dest="t_final", type=float)
    p.add_argument("--relaxation", type=_on_off, metavar="on|off")
    p.add_argument("--c", dest="soliton_c", type=float, help="soliton speed")
    p.add_argument("--backend", choices=("fft", "sparse", "dense"))
    p.add_argument("--out", dest="out_dir", type=Path, default=None)
    p.add_argument("--name")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="kdvh", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    ops = sub.add_parser("operators", help="operator audits")
    ops_sub = ops.add_subparsers(dest="action", required=True)
    chk = ops_sub.add_parser("check", help="check SBP identities")
    chk.add_argument("--n", type=int, nargs="+", default=[16, 64, 256])
    chk.add_argument("--order", type=int, nargs="+", default=list(range(1, 9)))
    chk.add_argument("--fourier", action=argparse.BooleanOptionalAction, default=True)
    chk.add_argument("--out", dest="out_dir", type=Path, default=None)

    p = sub.add_parser("solve", help="integrate one KdV or KdVH run")
    _common(p)
    p.add_argument("--model", choices=("kdv", "kdvh"))

    p = sub.add_parser("ap-table", help="asymptotic-preserving tau sweep")
    _common(p)
    p.add_argument("--taus", type=_float_list, default=list(DEFAULT_TAUS))
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("aa-study", help="dt convergence against an exact traveling wave")
    _common(p)
    p.add_argument("--taus", type=_float_list, default=[1e-5, 1e-9])
    p.add_argument("--dts", type=_float_list, default=[0.02, 0.01, 0.005, 0.0025])
    p.add_argument("--methods", default="AGSA(3,4,2);SSP3-ImEx(3,4,3);ARS(2,2,2);ARK3(2)4L[2]SA",
                   help="semicolon-separated method names")

    p = sub.add_parser("error-growth", help="long-time error growth with or without relaxation")
    _common(p)
    p.add_argument("--reference", choices=("kdv", "kdvh"), default="kdv")

    p = sub.add_parser("solitary-wave", help="Petviashvili solitary-wave profile")
    p.add_argument("--c", type=float, default=1.0 / 3.0)
    p.add_argument("--tau", type=float, default=0.1)
    p.add_argument("--x-left", type=float, default=-30 * math.pi)
    p.add_argument("--x-right", type=float, default=30 * math.pi)
    p.add_argument("--n", type=int, default=512)
    p.add_argument("--tol", type=float, default=1e-13)
    p.add_argument("--max-iter", type=int, default=10_000)
    p.add_argument("--out", dest="out_dir", type=Path, default=Path("."))
    p.add_argument("--name", default="solitary_wave")

    p = sub.add_parser("phase-portrait", help="phase-plane field and orbits")
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--tau", type=float, default=0.4)
    p.add_argument("--u-range", type=_float_list, default=[-1.0, 3.5])
    p.add_argument("--v-range", type=_float_list, default=[-1.5, 1.5])
    p.add_argument("--samples", type=int, default=41)
    p.add_argument("--start", type=_float_list, action="append", default=[],
                   help="extra orbit start u,v (repeatable)")
    p.add_argument("--out", dest="out_dir", type=Path, default=Path("."))
    p.add_argument("--name", default="phase_portrait")
    return parser


def load_config(args: argparse.Namespace, **defaults) -> RunConfig:
    """Command defaults, then the config file, then command-line flags."""
    data: dict = {}
    if getattr(args, "config", None) is not None:
        try:
            with open(args.config, "rb") as fh:
                data = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from None
    keys = ("tau", "dt", "n", "method", "order", "operator", "t_final", "relaxation",
            "soliton_c", "backend", "out_dir", "name", "model")
    flags = {k: getattr(args, k, None) for k in keys}
    if flags["out_dir"] is not None:
        flags["out_dir"] = str(flags["out_dir"])
    merged = {**defaults, **flatten_config(data)}
    return RunConfig.from_mapping(merged, **flags)


def _stem(cfg: RunConfig) -> Path:
    return Path(cfg.out_dir) / cfg.name


def cmd_operators(args) -> int:
    reports = []
    ok = True
    for n in args.n:
        grid = make_grid(-40.0, 40.0, n)
        sets = [make_operators(grid, "upwind_fd", q) for q in args.order]
        if args.fourier:
            sets.append(make_operators(grid, "fourier"))
        for ops in sets:
            rep = check_operator_set(ops)
            reports.append(rep)
            ok &= rep["ok"]
            print(f"{ops.kind:10s} order={ops.accuracy_order:<4d} n={n:<5d} {'ok' if rep['ok'] else 'FAIL'}")
    if args.out_dir is not None:
        args.out_dir.mkdir(parents=True, exist_ok=True)
        (args.out_dir / "operators.json").write_text(json.dumps(reports, indent=2, default=float))
    return 0 if ok else 2


def cmd_solve(args) -> int:
    cfg = load_config(args, name="solve")
    ops = cfg.operators()
    x = ops.grid.nodes
    eta0 = kdv_soliton(cfg.soliton_c, x, x0=cfg.x0)
    tab = cfg.tableau()
    stem = _stem(cfg)
    log_rows = []

    def record(t, q, gamma):
        log_rows.append((t, gamma, 0.5 * float(np.dot(problem.energy_weights * q, q))))

    if cfg.model == "kdv":
        problem = KdvProblem(ops)
        q0 = eta0
    else:
        problem = KdvhProblem(ops, cfg.tau)
        q0 = well_prepared_init(ops, eta0, cfg.tau).as_vector()
    res = integrate(tab, problem, q0, cfg.dt, cfg.t_final, relaxation=cfg.relaxation,
                    cache=StageSolverCache(problem, cfg.backend), callback=record)
    if cfg.model == "kdv":
        write_csv(stem.with_suffix(".csv"), ["x", "eta"], zip(x, res.q))
    else:
        stem.parent.mkdir(parents=True, exist_ok=True)
        write_snapshot(stem.with_suffix(".csv"), x, KdvhState.from_vector(res.q, cfg.tau), res.t,
                       ops.describe())
    write_csv(stem.parent / f"{stem.name}_steps.csv", ["t", "gamma", "invariant"], log_rows)
    write_meta(stem.with_suffix(".meta.json"), cfg, t_end=res.t, steps=res.steps,
               flagged_steps=res.flagged_steps)
    print(f"{cfg.model} t={res.t:.6f} steps={res.steps} -> {stem.with_suffix('.csv')}")
    return 0


def cmd_ap_table(args) -> int:
    cfg = load_config(args, name="ap_table")
    rows = ap_sweep(cfg, args.taus, workers=args.workers)
    stem = _stem(cfg)
    header = ["tau", "err_u", "eoc_u", "err_v", "eoc_v", "err_w", "eoc_w"]
    write_csv(stem.with_suffix(".csv"), header,
              [(r.tau, r.err_u, r.eoc_u, r.err_v, r.eoc_v, r.err_w, r.eoc_w) for r in rows])
    write_meta(stem.with_suffix(".meta.json"), cfg, taus=args.taus)
    for r in rows:
        e = [("" if v is None else f"{v:5.2f}") for v in (r.eoc_u, r.eoc_v, r.eoc_w)]
        print(f"{r.tau:9.2e}  {r.err_u:9.2e} {e[0]:>5}  {r.err_v:9.2e} {e[1]:>5}  {r.err_w:9.2e} {e[2]:>5}")
    return 0


def cmd_aa_study(args) -> int:
    cfg = load_config(args, name="aa_study", t_final=4.8)
    methods = [m.strip() for m in args.methods.split(";") if m.strip()]
    curves = aa_study(cfg, methods, args.taus, args.dts)
    stem = _stem(cfg)
    rows = [row for c in curves for row in c.as_rows()]
    write_csv(stem.with_suffix(".csv"), ["method", "tau", "dt", "err_u", "err_v", "err_w"], rows)
    write_meta(stem.with_suffix(".meta.json"), cfg, taus=args.taus, dts=args.dts,
               slopes={f"{c.method}@{c.tau:g}": c.slopes for c in curves})
    for c in curves:
        print(f"{c.method:20s} tau={c.tau:7.1e} slopes " + " ".join(f"{s:5.2f}" for s in c.slopes))
    return 0


def cmd_error_growth(args) -> int:
    cfg = load_config(args, name="error_growth", n=256, dt=0.05, t_final=333.34, tau=1e-6,
                      method="ARS(4,4,3)", soliton_c=GROWTH_SOLITON_SPEED)
    series = error_growth(cfg, args.reference)
    stem = _stem(cfg)
    write_csv(stem.with_suffix(".csv"), ["t", "error", "invariant_drift", "gamma"],
              zip(series.t, series.error, series.drift, series.gamma))
    slope = series.slope() if len(series.t) > 2 else None
    write_meta(stem.with_suffix(".meta.json"), cfg, reference=args.reference, slope=slope,
               max_drift=float(series.drift.max()))
    print(f"steps={len(series.t) - 1} final_error={series.error[-1]:.3e} "
          f"max_drift={series.drift.max():.2e} slope={'' if slope is None else f'{slope:.2f}'}")
    return 0


def cmd_solitary_wave(args) -> int:
    grid = make_grid(args.x_left, args.x_right, args.n)
    p = TravelingWaveParams(args.c, args.tau)
    res = petviashvili_solve(grid, p, kdv_soliton(args.c, grid.nodes), tol=args.tol, max_iter=args.max_iter)
    stem = args.out_dir / args.name
    write_csv(stem.with_suffix(".csv"), ["x", "u", "kdv_soliton"],
              zip(grid.nodes, res.profile, kdv_soliton(args.c, grid.nodes)))
    stem.with_suffix(".meta.json").write_text(json.dumps({
        "c": args.c, "tau": args.tau, "grid": [args.x_left, args.x_right, args.n],
        "iterations": res.iterations, "residual": res.residual, "converged": res.converged,
    }, indent=2))
    print(f"iterations={res.iterations} residual={res.residual:.2e} peak={res.profile.max():.6f}")
    return 0 if res.converged else 2


def cmd_phase_portrait(args) -> int:
    p = TravelingWaveParams(args.c, args.tau)
    stem = args.out_dir / args.name
    stem.parent.mkdir(parents=True, exist_ok=True)
    write_field_csv(stem.with_suffix(".csv"),
                    *phase_portrait_field(p, args.u_range, args.v_range, args.samples, args.samples))
    eq = classify_equilibria(p)
    summary = {"c": args.c, "tau": args.tau, "origin": eq["origin"]["kind"], "crest": eq["crest"]["kind"],
               "orbits": []}
    orbits = []
    if eq["origin_is_saddle"]:
        orbits.append(("homoclinic", find_homoclinic(p)))
    for i, start in enumerate(args.start):
        if len(start) != 2:
            raise ConfigError("--start expects u,v")
        orbits.append((f"orbit{i}", integrate_orbit(p, start)))
    for label, orbit in orbits:
        write_orbit_csv(stem.parent / f"{stem.name}_{label}.csv", orbit)
        summary["orbits"].append({"label": label, "classification": orbit.classification,
                                  "H_drift": orbit.H_drift, "u_max": float(orbit.u_tilde.max())})
        print(f"{label}: {orbit.classification} H_drift={orbit.H_drift:.1e}")
    stem.with_suffix(".meta.json").write_text(json.dumps(summary, indent=2))
    return 0


COMMANDS = {
    "operators": cmd_operators,
    "solve": cmd_solve,
    "ap-table": cmd_ap_table,
    "aa-study": cmd_aa_study,
    "error-growth": cmd_error_growth,
    "solitary-wave": cmd_solitary_wave,
    "phase-portrait": cmd_phase_portrait,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, KeyError, ValueError) as exc:
        log.error("configuration error: %s", exc)
        return 1
    except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
        log.error("numerical failure: %s", exc)
        return 2


if __name__ == "__main__":
    sys.exit(main())
