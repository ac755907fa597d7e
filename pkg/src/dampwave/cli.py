"""Command-line entry point: ``dampwave <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import analysis
from . import damping as dmp
from . import dynamics as dyn
from . import equilibria as eqm
from .config import SCENARIOS, RunConfiguration, load_config, preset_path
from .errors import ConfigError, DampwaveError, DegenerateSamples, NewtonError

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_BLOWUP = 0, 1, 2, 3

log = logging.getLogger("dampwave")


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def write_json(path: Path, data: dict) -> None:
    path.write_text(json.dumps(data, indent=2, default=_json_default, allow_nan=True) + "\n")


def _outdir(rc: RunConfiguration, override: str | None) -> Path:
    out = Path(override) if override else (rc.output or Path("runs") / rc.name)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.cfg").write_text(rc.resolved_text())
    return out


def _simulate(rc: RunConfiguration) -> dyn.Trajectory:
    if rc.system is not None:
        return dyn.galerkin_run(rc.system, rc.sim)
    return dyn.run(rc.sim)


def _blowup_code(rc: RunConfiguration, traj: dyn.Trajectory) -> int:
    """3 for blow-up under a violated sign condition, 2 for numerical failure."""
    from .nonlinearity import validate_sign

    nl = rc.system.nonlinearity if rc.system is not None else rc.sim.nonlinearity
    sup_u0 = max(1.0, float(np.max(np.abs(rc.sim.u0))))
    if validate_sign(nl, sup_u0).status == "violated" or nl.sign_status == "violated":
        return EXIT_BLOWUP
    return EXIT_NUMERIC


def _write_trajectory(out: Path, traj: dyn.Trajectory, rc: RunConfiguration) -> None:
    traj.write_csv(out / "trajectory.csv")
    summary = traj.summary()
    summary["scenario"] = rc.name
    summary["seed"] = rc.seed
    write_json(out / "summary.json", summary)


def _equilibrium(rc: RunConfiguration, traj: dyn.Trajectory | None = None) -> eqm.Equilibrium:
    if rc.guess is not None:
        guess = rc.guess
    elif traj is not None and traj.u is not None and not traj.blown_up:
        guess = traj.u[-1]
    else:
        guess = rc.sim.u0
    if rc.system is not None:
        return eqm.solve_galerkin_equilibrium(rc.system, np.asarray(guess, float))
    return eqm.solve_equilibrium(rc.sim.mesh, rc.sim.nonlinearity, guess)


def _probe(rc: RunConfiguration, eq: eqm.Equilibrium, seed: int | None = None) -> eqm.LojasiewiczEstimate:
    return eqm.probe_lojasiewicz(
        eq, nl=rc.sim.nonlinearity, mesh=rc.sim.mesh, radii=rc.radii, samples_per_radius=rc.samples_per_radius,
        seed=rc.seed if seed is None else seed,
    )


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    rc = load_config(args.config)
    out = _outdir(rc, args.out)
    traj = _simulate(rc)
    _write_trajectory(out, traj, rc)
    print(f"wrote {out / 'trajectory.csv'} ({len(traj.times)} samples, dt = {traj.dt:.6g})")
    if traj.blown_up:
        print(f"blow-up at t = {traj.blow_up_time:.6g}")
        return _blowup_code(rc, traj)
    print(f"final E = {traj.final.E:.6g}, |v| = {traj.final.v_l2:.3e}")
    return EXIT_OK


def cmd_certify(args) -> int:
    profile = dmp.parse(args.profile)
    eps = tuple(float(e) for e in args.epsilons.split(","))
    cert = dmp.certify_integrally_positive(profile, epsilons=eps, horizon=args.horizon)
    structure = dmp.classify_structure(profile)
    c11 = dmp.criterion_11(profile, horizon=max(args.horizon, 1.0))
    print(f"profile     : {profile.label}")
    print(f"certificate : {cert.verdict}")
    for row in cert.per_epsilon:
        print("  " + ", ".join(f"{k} = {v}" for k, v in row.items()))
    if cert.verdict == "refuted":
        print(f"  witness window: [{cert.witness[0]:.6g}, {cert.witness[1]:.6g}]")
    print(f"structure   : {structure}")
    print(f"divergence  : {c11.verdict}")
    if args.json:
        write_json(Path(args.json), {"schema_version": 1, "profile": profile.label, "certificate": cert.to_dict(),
                                     "structure": structure, "criterion_11": c11.to_dict()})
    return EXIT_OK


def cmd_equilibrium(args) -> int:
    rc = load_config(args.config)
    out = _outdir(rc, args.out)
    eq = _equilibrium(rc)
    eqm.save_equilibrium(eq, out / "equilibrium")
    print(f"equilibrium: residual = {eq.residual:.3e}, iterations = {eq.iterations}, "
          f"sup|phi| = {float(np.max(np.abs(eq.phi))):.6g}")
    return EXIT_OK if eq.converged else EXIT_NUMERIC


def cmd_probe_theta(args) -> int:
    rc = load_config(args.config)
    out = _outdir(rc, args.out)
    eq = _equilibrium(rc)
    ls = _probe(rc, eq, args.seed)
    write_json(out / "theta.json", {"schema_version": 1, "equilibrium": eq.metadata(), **ls.to_dict()})
    print(f"theta = {ls.theta:.4f} (R^2 = {ls.r2:.4f}, samples = {ls.n_used})")
    if ls.note:
        print(f"note: {ls.note}")
    return EXIT_OK


def _read_series(path: str, column: str | None):
    data = dyn.read_trajectory_csv(path)
    if "t" not in data:
        raise ConfigError(f"{path}: no 't' column")
    if column is None:
        column = "y" if "y" in data else "v_l2"
    if column not in data:
        raise ConfigError(f"{path}: no column {column!r} (have {', '.join(data)})")
    t, y = data["t"], data[column]
    keep = np.isfinite(y)
    return t[keep], y[keep], column


def cmd_fit(args) -> int:
    t, y, column = _read_series(args.trajectory, args.column)
    fit = analysis.fit_decay(t, y, args.t_min)
    result = {"schema_version": 1, "column": column, "fit": fit.to_dict()}
    print(f"{column}: {fit.cls}" + (f", rate = {fit.rate:.6g}" if fit.rate is not None else ""))
    if args.alpha is not None or args.C is not None:
        if args.alpha is None or args.C is None:
            raise ConfigError("--alpha and --C go together")
        chk = analysis.lemma3_check(t, y, args.alpha, args.C)
        result["ode_bound"] = chk.to_dict()
        print(f"differential inequality: {chk.inequality_violations} violations, "
              f"bound: {chk.bound_violations} violations")
    if args.json:
        write_json(Path(args.json), result)
    return EXIT_OK


def run_scenario(name_or_path: str, out: str | None = None, threshold: float | None = None) -> int:
    """Simulate, solve for the limit equilibrium, probe θ and write the report."""
    path = preset_path(name_or_path) if name_or_path in SCENARIOS else name_or_path
    rc = load_config(path)
    out_dir = _outdir(rc, out)
    traj = _simulate(rc)
    _write_trajectory(out_dir, traj, rc)
    eq, ls = None, None
    notes = list(rc.notes)
    if not traj.blown_up:
        eq = _equilibrium(rc, traj)
        eqm.save_equilibrium(eq, out_dir / "equilibrium")
        try:
            ls = _probe(rc, eq)
        except DegenerateSamples as exc:
            notes.append(f"theta probe degenerate: {exc}")
    report = analysis.theorem1_report(
        traj, eq, ls, rc.sim, system=rc.system,
        lemma1_threshold=threshold if threshold is not None else rc.threshold,
        scenario=rc.name, notes=tuple(notes),
    )
    if ls is not None:
        report.data["lojasiewicz"] = ls.to_dict()
    write_json(out_dir / "report.json", report.to_dict())
    text = report.text()
    (out_dir / "report.txt").write_text(text + "\n")
    print(text)
    if traj.blown_up:
        return _blowup_code(rc, traj)
    return EXIT_OK


def _scenario_job(args):
    name, out = args
    return name, _guarded(run_scenario, name, out)


def cmd_scenario(args) -> int:
    names = args.names
    if len(names) > 1 and args.out:
        raise ConfigError("--out takes a single scenario; use --root for several")
    jobs = [(n, args.out or str(Path(args.root) / Path(n).stem)) for n in names]
    if args.sweep and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            codes = dict(pool.map(_scenario_job, jobs))
    else:
        codes = dict(_scenario_job(j) for j in jobs)
    if len(codes) > 1:
        for n, c in codes.items():
            print(f"{n}: exit {c}")
    return max(codes.values())


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dampwave", description="Damped semilinear wave equations: simulation and decay analysis.")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="integrate one configuration")
    s.add_argument("config")
    s.add_argument("--out", help="output directory")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("certify", help="integral positivity, structure and divergence test for h")
    s.add_argument("--profile", required=True, help="e.g. constant:1, power_law:1,2, onoff:1,1, expr:abs(sin(t))")
    s.add_argument("--epsilons", default="0.1,0.5,1,2")
    s.add_argument("--horizon", type=float, default=200.0)
    s.add_argument("--json", help="write the report here")
    s.set_defaults(func=cmd_certify)

    s = sub.add_parser("equilibrium", help="solve the stationary problem from the configured guess")
    s.add_argument("config")
    s.add_argument("--out")
    s.set_defaults(func=cmd_equilibrium)

    s = sub.add_parser("probe-theta", help="estimate the Lojasiewicz exponent at the equilibrium")
    s.add_argument("config")
    s.add_argument("--seed", type=int)
    s.add_argument("--out")
    s.set_defaults(func=cmd_probe_theta)

    s = sub.add_parser("fit", help="fit decay class of a column of a CSV series")
    s.add_argument("trajectory")
    s.add_argument("--column", help="series column (default y, else v_l2)")
    s.add_argument("--t-min", type=float, default=0.2, dest="t_min", help="transient fraction to discard")
    s.add_argument("--alpha", type=float)
    s.add_argument("--C", type=float)
    s.add_argument("--json")
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("scenario", help="full pipeline for named presets or config files")
    s.add_argument("names", nargs="+", metavar="name", help=", ".join(SCENARIOS))
    s.add_argument("--out", help="output directory (single scenario)")
    s.add_argument("--root", default="runs", help="parent directory for several scenarios")
    s.add_argument("--sweep", action="store_true", help="run several scenarios concurrently")
    s.add_argument("--workers", type=int, default=None)
    s.set_defaults(func=cmd_scenario)
    return p


def _guarded(fn, *args) -> int:
    try:
        return fn(*args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NewtonError, DegenerateSamples, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DampwaveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return _guarded(args.func, args)


if __name__ == "__main__":
    sys.exit(main())
