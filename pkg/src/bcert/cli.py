"""Command-line pipeline: check, lift, compose, bound, synthesize, simulate,
and the two packaged case-study demos.

Every command writes JSON artifacts (schema_version tagged) into --out and
returns 0 on success, 1 on refutation/infeasibility, 2 on input errors.
"""

from __future__ import annotations

import argparse
import json
import os
import sys as _sys
import time
from pathlib import Path

from . import fixtures
from .bound import safety_bound
from .cegis import SynthesisFailure, Template, synthesize_cbc
from .certify import (CertStatus, GridConfig, check_apbc, check_cbc,
                      summary_status)
from .compose import (ScalingSet, build_gain_digraph, compose_abc, find_sigma,
                      small_gain_check)
from .dwell import (common_barrier_apbc, estimate_mu, lift_derivation,
                    lift_to_apbc, min_dwell_time)
from .errors import (BcertError, CompositionInfeasibleError, InputError,
                     UnverifiedCertificateError)
from .model import validate_network
from .project import (Project, SCHEMA_VERSION, cbc_to_json, load_project,
                      save_project)
from .sim import Controller, plot_data, run_monte_carlo

EXIT_OK = 0
EXIT_REFUTED = 1
EXIT_INPUT = 2


def _threads() -> int | None:
    raw = os.environ.get("BCERT_THREADS")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise InputError(f"BCERT_THREADS must be an integer, got {raw!r}")


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(outdir: Path, name: str, payload: dict, command: str) -> Path:
    payload = {"schema_version": SCHEMA_VERSION, "command": command,
               "threads": _threads(), **payload}
    path = outdir / name
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _grid_config(project: Project, args) -> GridConfig:
    res = getattr(args, "resolution", None)
    if res is None:
        res = project.check.get("resolution")
    ppd = getattr(args, "points_per_dim", None) or \
        project.check.get("points_per_dim", 50)
    return GridConfig(resolution=res, points_per_dim=ppd)


def _require_certs(project: Project) -> None:
    if not project.certificates:
        raise InputError("this command needs a 'certificates' section in the "
                         "project file")
    missing = [sid for sid in project.network.ids
               if sid not in project.certificates]
    if missing:
        raise InputError(f"no certificates for subsystems: {missing}")
    for sid, modes in project.certificates.items():
        have = sorted(modes)
        need = sorted(project.network.subsystem(sid).dynamics)
        if have != need:
            raise InputError(f"subsystem {sid!r} needs certificates for modes "
                             f"{need}, got {have}")


def _resolve_dwell(project: Project, certs: dict) -> tuple[float, int, float | None, str]:
    """(epsilon, k_d, mu, method) from the project dwell section."""
    d = project.dwell
    epsilon = float(d.get("epsilon", 2.0))
    mu = d.get("mu")
    kappas = {m: c.constants.kappa for m, c in certs.items()}
    if "k_d" in d:
        k_d = int(d["k_d"])
    elif mu is not None:
        k_d = min_dwell_time(epsilon, float(mu), kappas)
    else:
        k_d = 1
    method = d.get("method", "auto")
    if method == "auto":
        barriers = {c.barrier for c in certs.values()}
        method = "common" if len(barriers) == 1 and k_d == 1 else "lift"
    return epsilon, k_d, None if mu is None else float(mu), method


def _apbc_for(project: Project, sid: str):
    certs = project.certificates[sid]
    epsilon, k_d, mu, method = _resolve_dwell(project, certs)
    if method == "common":
        return common_barrier_apbc(certs, k_d=k_d, epsilon=epsilon), method
    return lift_to_apbc(certs, epsilon, k_d, mu=mu), method


def _all_apbcs(project: Project) -> tuple[list, str]:
    out = []
    method = "lift"
    for sid in project.network.ids:
        a, method = _apbc_for(project, sid)
        out.append(a)
    return out, method


# ---------------------------------------------------------------------------
# commands


def cmd_check(args) -> int:
    project = load_project(args.project)
    _require_certs(project)
    outdir = _outdir(args)
    cfg = _grid_config(project, args)
    targets = [args.subsystem] if args.subsystem else list(project.network.ids)
    result: dict = {"subsystems": {}}
    any_refuted = False
    for sid in targets:
        if sid not in project.certificates:
            raise InputError(f"no certificates for subsystem {sid!r}")
        sub = project.network.subsystem(sid)
        block = {}
        for mode, cert in sorted(project.certificates[sid].items()):
            t0 = time.perf_counter()
            reports = check_cbc(sub, cert, cfg)
            status = summary_status(reports, max(r.status.resolution or 0.0
                                                 for r in reports))
            any_refuted |= status.refuted
            block[str(mode)] = {
                "reports": [r.to_json() for r in reports],
                "status": status.to_json(),
                "seconds": time.perf_counter() - t0,
            }
        result["subsystems"][sid] = block
    result["all_verified"] = not any_refuted and all(
        b[m]["status"]["kind"] == "verified"
        for b in result["subsystems"].values() for m in b)
    _write(outdir, "check_report.json", result, "check")
    return EXIT_REFUTED if any_refuted else EXIT_OK


def cmd_lift(args) -> int:
    project = load_project(args.project)
    _require_certs(project)
    outdir = _outdir(args)
    result: dict = {"subsystems": {}}
    for sid in project.network.ids:
        certs = project.certificates[sid]
        epsilon, k_d, mu, method = _resolve_dwell(project, certs)
        if args.epsilon is not None:
            epsilon = args.epsilon
        if args.kd is not None:
            k_d = args.kd
        if args.mu is not None:
            mu = args.mu
        if method == "common":
            apbc = common_barrier_apbc(certs, k_d=k_d, epsilon=epsilon)
            deriv = [{"constant": "all", "formula":
                      "degenerate common-barrier case: constants undegraded"}]
        else:
            apbc = lift_to_apbc(certs, epsilon, k_d, mu=mu)
            deriv = lift_derivation(certs, epsilon, k_d)
        result["subsystems"][sid] = {
            "method": method, "epsilon": epsilon, "k_d": k_d, "mu": mu,
            "constants": apbc.constants.to_json(),
            "derivation": deriv,
        }
    _write(outdir, "lift.json", result, "lift")
    return EXIT_OK


def _compose_payload(project: Project):
    apbcs, method = _all_apbcs(project)
    g = build_gain_digraph(project.network, apbcs)
    sg = small_gain_check(g)
    raw = project.composition.get("scalings")
    scalings = None if raw is None else ScalingSet(tuple(float(v) for v in raw))
    semantics = project.composition.get("semantics", "auto")
    abc = compose_abc(project.network, apbcs, scalings, semantics)
    payload = {
        "gain_digraph": g.to_json(),
        "small_gain": sg.to_json(),
        "scalings": list(abc.scalings),
        "semantics": abc.semantics,
        "constants": abc.constants.to_json(),
        "status": abc.status.to_json(),
        "lift_method": method,
    }
    return abc, payload


def cmd_compose(args) -> int:
    project = load_project(args.project)
    _require_certs(project)
    if args.semantics:
        project.composition["semantics"] = args.semantics
    outdir = _outdir(args)
    abc, payload = _compose_payload(project)
    _write(outdir, "compose.json", payload, "compose")
    return EXIT_OK


def cmd_bound(args) -> int:
    outdir = _outdir(args)
    flags = [args.gamma, getattr(args, "lambda"), args.kappa, args.psi]
    if all(v is not None for v in flags):
        if args.horizon is None:
            raise InputError("--horizon is required")
        b = safety_bound(args.gamma, getattr(args, "lambda"), args.kappa,
                         args.psi, args.horizon)
        source = "flags"
    elif any(v is not None for v in flags):
        raise InputError("provide all of --gamma --lambda --kappa --psi, "
                         "or none and use --project")
    else:
        if not args.project:
            raise InputError("either the four constants or --project required")
        project = load_project(args.project)
        _require_certs(project)
        abc, _ = _compose_payload(project)
        horizon = args.horizon if args.horizon is not None \
            else project.bound.get("horizon")
        if horizon is None:
            raise InputError("no horizon given (flag or project bound section)")
        c = abc.constants
        b = safety_bound(c.gamma, c.lam, c.kappa, c.psi, int(horizon))
        source = "composed certificate"
    payload = {"bound": b.to_json(), "source": source}
    _write(outdir, "bound.json", payload, "bound")
    if not args.quiet:
        print(f"delta = {b.delta:.6g} (branch {b.branch}), "
              f"safety >= {b.safety:.6g} over horizon {b.horizon}")
    return EXIT_OK


def cmd_synthesize(args) -> int:
    project = load_project(args.project)
    outdir = _outdir(args)
    s = project.synthesis
    sid = args.subsystem or s.get("subsystem")
    if sid is None:
        if len(project.network.ids) == 1:
            sid = project.network.ids[0]
        else:
            raise InputError("--subsystem required for multi-subsystem networks")
    sub = project.network.subsystem(sid)
    mode = args.mode if args.mode is not None else s.get("mode", 1)
    degree = args.degree if args.degree is not None else s.get("degree", 2)
    budget = args.budget if args.budget is not None else s.get("budget", 200)
    seed = args.seed if args.seed is not None else s.get("seed", 0)
    kwargs = {}
    if args.kappa_grid:
        kwargs["kappa_grid"] = tuple(float(v) for v in args.kappa_grid.split(","))
    elif s.get("kappa_grid"):
        kwargs["kappa_grid"] = tuple(s["kappa_grid"])
    if args.lambda_grid:
        kwargs["lambda_grid"] = tuple(float(v) for v in args.lambda_grid.split(","))
    elif s.get("lambda_grid"):
        kwargs["lambda_grid"] = tuple(s["lambda_grid"])
    template = Template(degree=degree, **kwargs)
    cfg = _grid_config(project, args)
    t0 = time.perf_counter()
    log: list = []
    result = synthesize_cbc(sub, mode, template, budget=budget, grid=cfg,
                            seed=seed, log=log)
    elapsed = time.perf_counter() - t0
    _write(outdir, "synthesis_log.json",
           {"subsystem": sid, "mode": mode, "entries": log}, "synthesize")
    if isinstance(result, SynthesisFailure):
        _write(outdir, "synthesis.json",
               {"outcome": "failure", "subsystem": sid, "mode": mode,
                "seconds": elapsed, "report": result.to_json()}, "synthesize")
        return EXIT_REFUTED
    payload = {"outcome": "certificate", "subsystem": sid, "mode": mode,
               "seconds": elapsed, "certificate": cbc_to_json(result),
               "status": result.status.to_json()}
    _write(outdir, "synthesis.json", payload, "synthesize")
    return EXIT_OK


def _simulate_payload(project: Project, args, verify: bool):
    sim = dict(project.simulation)
    M = args.trajectories if args.trajectories is not None \
        else sim.get("trajectories", 1000)
    horizon = args.horizon if args.horizon is not None \
        else sim.get("horizon", project.bound.get("horizon", 100))
    seed = args.seed if args.seed is not None else sim.get("seed", 0)
    retain = args.retain if args.retain is not None else sim.get("retain", 0)
    allow = args.allow_unverified or sim.get("allow_unverified", False)
    initial = args.initial_mode if args.initial_mode is not None \
        else sim.get("initial_mode")
    apbcs, _ = _all_apbcs(project)
    net = project.network
    if verify and not allow:
        cfg = _grid_config(project, args)
        checked = []
        for sub, a in zip(net.subsystems, apbcs):
            reports = check_apbc(sub, a, cfg)
            checked.append(a.with_status(summary_status(
                reports, max(r.status.resolution or 0.0 for r in reports))))
        apbcs = checked
    raw = project.composition.get("scalings")
    scalings = None if raw is None else ScalingSet(tuple(float(v) for v in raw))
    abc = compose_abc(net, apbcs, scalings,
                      project.composition.get("semantics", "auto"))
    controller = Controller(net, abc)
    report = run_monte_carlo(net, abc, controller, M=M, horizon=int(horizon),
                             seed=int(seed), initial_modes=initial,
                             allow_unverified=allow, retain=int(retain))
    return abc, report


def cmd_simulate(args) -> int:
    project = load_project(args.project)
    _require_certs(project)
    outdir = _outdir(args)
    abc, report = _simulate_payload(project, args, verify=True)
    payload = {"certificate_status": abc.status.to_json(),
               "report": report.to_json()}
    _write(outdir, "simulation.json", payload, "simulate")
    if report.retained is not None:
        plot_data(report, outdir / "trajectories.csv")
    return EXIT_OK


def cmd_demo(args) -> int:
    outdir = _outdir(args)
    n = args.n
    if args.fixture == "room-temp":
        net = fixtures.room_network(n)
        certs = fixtures.room_cbcs()
        dwell = {"epsilon": 2.0, "mu": fixtures.ROOM_MU, "k_d": fixtures.ROOM_K_D,
                 "method": "common"}
        horizon = args.horizon if args.horizon is not None else 10
        paper_claim = 0.87
        claim_note = ("published claim rounds up; the branch-1 formula value "
                      "is the authoritative one")
    else:
        net = fixtures.two_mode_network(n)
        certs = fixtures.two_mode_cbcs()
        dwell = {"epsilon": fixtures.TWO_MODE_EPSILON, "mu": fixtures.TWO_MODE_MU,
                 "k_d": fixtures.two_mode_k_d(), "method": "lift"}
        horizon = args.horizon if args.horizon is not None else 100
        paper_claim = 0.86
        claim_note = "published claim matches the branch-1 formula value"
    M = args.trajectories if args.trajectories is not None else 10000
    seed = args.seed if args.seed is not None else 42

    project = Project(
        network=net,
        certificates={sid: dict(certs) for sid in net.ids},
        dwell=dwell,
        composition={"semantics": "auto", "scalings": None},
        bound={"horizon": horizon},
        simulation={"trajectories": M, "horizon": horizon, "seed": seed,
                    "retain": 10, "allow_unverified": True},
    )
    save_project(project, outdir / "demo_project.json")

    report: dict = {"fixture": args.fixture, "n": n,
                    "symmetry_note":
                        "subsystems are identical up to renaming; per-mode and "
                        "augmented checks run once on the first subsystem and "
                        "apply to all of them by symmetry"}
    issues = [str(v) for v in validate_network(net)]
    report["network_warnings"] = issues

    cfg = _grid_config(project, args)
    sid = net.ids[0]
    sub = net.subsystem(sid)
    check_block = {}
    for mode, cert in sorted(certs.items()):
        t0 = time.perf_counter()
        reports = check_cbc(sub, cert, cfg)
        check_block[str(mode)] = {
            "reports": [r.to_json() for r in reports],
            "seconds": time.perf_counter() - t0}
    report["cbc_check"] = check_block

    epsilon, k_d, mu, method = _resolve_dwell(project, certs)
    mu_est = estimate_mu(certs, sub.X, cfg)
    report["mu_estimate"] = {
        "raw": mu_est.raw, "inflated": mu_est.inflated,
        "argmax": {"modes": list(mu_est.argmax[:2]),
                   "state": list(mu_est.argmax[2])},
        "paper_value": mu, "skipped_points": mu_est.skipped,
        "note": ("grid estimate exceeds the published value"
                 if mu is not None and mu_est.raw > mu else "")}

    if method == "common":
        apbc = common_barrier_apbc(certs, k_d=k_d, epsilon=epsilon)
        report["lift"] = {"method": "common",
                          "constants": apbc.constants.to_json(), "k_d": k_d}
    else:
        apbc = lift_to_apbc(certs, epsilon, k_d, mu=mu)
        report["lift"] = {"method": "lift", "epsilon": epsilon, "k_d": k_d,
                          "constants": apbc.constants.to_json(),
                          "derivation": lift_derivation(certs, epsilon, k_d)}

    apbc_reports = check_apbc(sub, apbc, cfg)
    report["apbc_check"] = [r.to_json() for r in apbc_reports]

    _, compose_payload = _compose_payload(project)
    report["compose"] = compose_payload

    c = compose_payload["constants"]
    b = safety_bound(c["gamma"], c["lambda"], c["kappa"], c["psi"], horizon)
    report["bound"] = {"bound": b.to_json(), "paper_claim": paper_claim,
                       "formula_vs_paper": claim_note}

    abc, sim_report = _simulate_payload(project, args, verify=False)
    report["simulation"] = sim_report.to_json()
    freq = sim_report.exceed_freq if sim_report.exceed_freq is not None else 0.0
    cp_lower = sim_report.exceed_cp[0] if sim_report.exceed_cp else 0.0
    report["bound_vs_empirical"] = {
        "delta": b.delta, "exceed_freq": freq,
        "cp95_lower": cp_lower,
        "consistent": cp_lower <= b.delta,
    }
    if sim_report.retained is not None:
        plot_data(sim_report, outdir / "trajectories.csv")
    _write(outdir, "demo_report.json", report, "demo")
    if not args.quiet:
        print(f"{args.fixture} n={n}: delta={b.delta:.4f} "
              f"(1-delta={b.safety:.4f}), empirical exceedance {freq:.4f} "
              f"over M={sim_report.M}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(p: argparse.ArgumentParser, project_required: bool = True):
    p.add_argument("--project", required=project_required,
                   help="path to a project JSON file")
    p.add_argument("--out", required=True, help="artifact output directory")
    p.add_argument("--resolution", type=float, default=None,
                   help="grid resolution override")
    p.add_argument("--points-per-dim", type=int, default=None)
    p.add_argument("--quiet", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="bcert",
        description="grid-checked barrier certificates for switched "
                    "stochastic networks")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="check per-mode certificates on a grid")
    _add_common(p)
    p.add_argument("--subsystem", default=None)
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("lift", help="lift per-mode certificates to "
                                    "dwell-augmented form")
    _add_common(p)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--kd", type=int, default=None)
    p.add_argument("--mu", type=float, default=None)
    p.set_defaults(fn=cmd_lift)

    p = sub.add_parser("compose", help="compose augmented certificates over "
                                       "the network")
    _add_common(p)
    p.add_argument("--semantics", choices=["auto", "product", "union"],
                   default=None)
    p.set_defaults(fn=cmd_compose)

    p = sub.add_parser("bound", help="finite-horizon exit-probability bound")
    _add_common(p, project_required=False)
    p.add_argument("--gamma", type=float, default=None)
    p.add_argument("--lambda", type=float, default=None, dest="lambda")
    p.add_argument("--kappa", type=float, default=None)
    p.add_argument("--psi", type=float, default=None)
    p.add_argument("--horizon", type=int, default=None)
    p.set_defaults(fn=cmd_bound)

    p = sub.add_parser("synthesize", help="CEGIS search for a per-mode "
                                          "certificate")
    _add_common(p)
    p.add_argument("--subsystem", default=None)
    p.add_argument("--mode", type=int, default=None)
    p.add_argument("--degree", type=int, default=None)
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--kappa-grid", default=None,
                   help="comma-separated kappa candidates")
    p.add_argument("--lambda-grid", default=None,
                   help="comma-separated lambda candidates")
    p.set_defaults(fn=cmd_synthesize)

    p = sub.add_parser("simulate", help="closed-loop Monte Carlo run")
    _add_common(p)
    p.add_argument("--trajectories", type=int, default=None)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--retain", type=int, default=None)
    p.add_argument("--initial-mode", type=int, default=None)
    p.add_argument("--allow-unverified", action="store_true")
    p.set_defaults(fn=cmd_simulate)

    p = sub.add_parser("demo", help="run a packaged case study end to end")
    p.add_argument("fixture", choices=["room-temp", "two-mode"])
    p.add_argument("--n", type=int, required=True,
                   help="number of subsystems in the ring")
    p.add_argument("--out", required=True)
    p.add_argument("--trajectories", type=int, default=None)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--resolution", type=float, default=None)
    p.add_argument("--points-per-dim", type=int, default=None)
    p.add_argument("--retain", type=int, default=None)
    p.add_argument("--allow-unverified", action="store_true", default=True)
    p.add_argument("--quiet", action="store_true")
    p.set_defaults(fn=cmd_demo, project=None, subsystem=None,
                   initial_mode=None)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except InputError as e:
        print(f"input error: {e}", file=_sys.stderr)
        return EXIT_INPUT
    except (CompositionInfeasibleError, UnverifiedCertificateError) as e:
        print(f"infeasible: {e}", file=_sys.stderr)
        return EXIT_REFUTED
    except BcertError as e:
        print(f"error: {e}", file=_sys.stderr)
        return EXIT_REFUTED


if __name__ == "__main__":
    raise SystemExit(main())
