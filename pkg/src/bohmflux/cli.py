"""Command-line front end: ``bohmflux <command> --config scenario.cfg --out DIR``.

Exit codes: 0 success, 2 invalid input (config or parameters), 3 a numerical
check failed or a numerical method did not converge.  Errors are written to
stderr as one JSON object.  Reports are deterministic given the config and
seed; wall-clock data goes to ``run_meta.json`` only.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ScenarioConfig, load_config, require_grid
from .errors import BohmfluxError, InvalidParameterError
from .evolution import boundary_mass
from .guidance import AnalyticSource, FrameSource, integrate_ensemble
from .sampling import sample_positions
from .stats import (build_frames, cross_section_check, crossing_expectation_check,
                    ensemble_report, exit_law_check, interacting_fast_check, run_ensemble,
                    s_matrix_prediction, write_ensemble_csv)
from .surfaces import (SphereSpec, escape_horizon, flux_across_surface, flux_table,
                       momentum_cone_probability, momentum_probabilities)

FAST_TOLERANCE = 0.02
COMMANDS = ("evolve", "trajectories", "fast-check", "cross-section", "phase-shifts", "report")


class CheckFailed(Exception):
    def __init__(self, failed):
        self.failed = list(failed)
        super().__init__("failed checks: " + ", ".join(self.failed))


# ---------------------------------------------------------------------------
# output helpers


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else repr(v)
    return obj


def write_json(path: Path, data) -> None:
    text = json.dumps(_jsonable(data), indent=2, sort_keys=True, ensure_ascii=False)
    path.write_text(text + "\n", encoding="utf-8")


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _gnuplot(path: Path, title: str, body: str) -> None:
    path.write_text(f"# gnuplot script: {title}\nset datafile separator ','\nset key autotitle columnhead\n"
                    f"{body}\n", encoding="utf-8")


def _header(cfg: ScenarioConfig, command: str, seed: int) -> dict:
    return {"command": command, "config_hash": cfg.hash(), "version": __version__, "seed": seed}


class Context:
    def __init__(self, args, cfg: ScenarioConfig):
        self.args = args
        self.cfg = cfg
        self.out = Path(args.out)
        self.seed = cfg.seed if args.seed is None else int(args.seed)
        self.scale = float(args.tolerance_scale)
        self.threads = max(1, int(args.threads))
        if args.command in ("evolve", "trajectories", "fast-check", "cross-section"):
            require_grid(cfg, args.command)
        self._scenario = None

    @property
    def scenario(self):
        if self._scenario is None:
            self._scenario = self.cfg.scenario(self.seed)
        return self._scenario


# ---------------------------------------------------------------------------
# commands


def cmd_evolve(ctx: Context) -> dict:
    sc = ctx.scenario
    if sc.grid is None:
        raise InvalidParameterError("evolve needs a [grid] section")
    frames = build_frames(sc)
    d = ctx.out / "frames"
    frames.save(d)
    norms = frames.norms()
    return {**_header(ctx.cfg, "evolve", ctx.seed), "frames": len(frames),
            "manifest": "frames/manifest.json", "norm_drift": float(np.max(np.abs(norms - norms[0]))),
            "boundary_mass_end": boundary_mass(frames[len(frames) - 1]), "pass": True}


def _source(ctx: Context):
    sc = ctx.scenario
    if sc.interacting:
        return FrameSource(build_frames(sc))
    return AnalyticSource(sc.packet)


def cmd_trajectories(ctx: Context) -> dict:
    sc = ctx.scenario
    n_paths = int(ctx.cfg.get("output", "n_paths", 10))
    n = min(n_paths, sc.n_traj)
    src = _source(ctx)
    t1 = sc.horizon()
    x0 = sample_positions(sc.packet, sc.n_traj, ctx.seed)[:n]
    tr = integrate_ensemble(x0, src, (0.0, t1), sc.radii, record_paths=True)
    d = ctx.out / "trajectories"
    d.mkdir(parents=True, exist_ok=True)
    for i, (ts, xs) in enumerate(tr.paths):
        _write_csv(d / f"traj_{i:05d}.csv", ["t", "x", "y", "z"],
                   ([t, *x] for t, x in zip(ts, xs)))
    order = np.lexsort((tr.event_t, tr.event_radius, tr.event_row))
    _write_csv(d / "crossings.csv", ["traj", "t", "x", "y", "z", "sign", "R"],
               ([int(tr.event_row[i]), tr.event_t[i], *tr.event_x[i], int(tr.event_sign[i]),
                 float(tr.radii[tr.event_radius[i]])] for i in order))
    _gnuplot(d / "trajectories.gp", "trajectory paths (z vs t)",
             "plot for [f in system('ls traj_*.csv')] f using 1:4 with lines notitle")
    return {**_header(ctx.cfg, "trajectories", ctx.seed), "n_paths": n, "t_span": [0.0, t1],
            "crossings": int(len(tr.event_t)), "aborted": int(np.sum(tr.status != 0)), "pass": True}


def _free_fast(ctx: Context) -> dict:
    sc = ctx.scenario
    bin_ = ctx.cfg.forward_cone()
    ref = momentum_cone_probability(sc.packet, bin_)
    n_theta = int(ctx.cfg.get("spheres", "n_theta", 64))
    n_phi = int(ctx.cfg.get("spheres", "n_phi", 128))
    rows = []
    for R in sc.radii:
        T = escape_horizon(sc.packet, R)
        res = flux_across_surface(sc.packet, SphereSpec(R, n_theta, n_phi), bin_, (0.0, T),
                                  rel_tol=1e-10 * ctx.scale, abs_tol=1e-12 * ctx.scale)
        rows.append({"R": R, "t_max": T, "signed_flux": res.signed, "abs_flux": res.absolute,
                     "inward_flux": res.inward, "rel_error": abs(res.signed - ref) / ref})
    errs = [r["rel_error"] for r in rows]
    monotone = all(b <= a for a, b in zip(errs, errs[1:]))
    tol = FAST_TOLERANCE * ctx.scale
    _write_csv(ctx.out / "flux_vs_R.csv", ["R", "t_max", "signed_flux", "abs_flux", "rel_error"],
               ([r["R"], r["t_max"], r["signed_flux"], r["abs_flux"], r["rel_error"]] for r in rows))
    _gnuplot(ctx.out / "flux_vs_R.gp", "flux through the cone vs sphere radius",
             f"set logscale xy\nset xlabel 'R'\nset ylabel 'relative error'\n"
             f"plot 'flux_vs_R.csv' using 1:5 with linespoints title 'relative error', {tol} title 'tolerance'")
    return {
        **_header(ctx.cfg, "fast-check", ctx.seed), "cone_half_angle_deg": float(
            np.degrees(bin_.theta_hi)), "momentum_prediction": ref, "sweep": rows,
        "monotone": monotone, "tolerance": tol, "pass": bool(monotone and errs[-1] <= tol),
    }


def cmd_fast_check(ctx: Context) -> dict:
    sc = ctx.scenario
    if not sc.interacting:
        return _free_fast(ctx)
    seeds = [int(s) for s in ctx.cfg.get("ensemble", "seeds", [ctx.seed, ctx.seed + 1, ctx.seed + 2])]
    rep = interacting_fast_check(sc, seeds=seeds)
    rep.update(_header(ctx.cfg, "fast-check", ctx.seed))
    return rep


def cmd_cross_section(ctx: Context) -> dict:
    sc = ctx.scenario
    if sc.interacting:
        frames = build_frames(sc)
        src = FrameSource(frames)
    else:
        src = AnalyticSource(sc.packet)
    results = run_ensemble(sc, source=src, seed=ctx.seed, threads=ctx.threads)
    t_span = next(iter(results.values())).t_span
    n_theta = int(ctx.cfg.get("spheres", "n_theta", 48))
    n_phi = int(ctx.cfg.get("spheres", "n_phi", 16))
    tables = {R: flux_table(src, SphereSpec(R, n_theta, n_phi), sc.bins, list(t_span),
                            rel_tol=1e-8 * ctx.scale, abs_tol=1e-10 * ctx.scale)
              for R in sc.radii}
    if sc.interacting:
        try:
            momentum = s_matrix_prediction(sc.packet, sc.potential, sc.bins)
        except (InvalidParameterError, AttributeError):
            momentum = None
    else:
        momentum = momentum_probabilities(sc.packet, sc.bins)
    checks = {}
    for R in sc.radii:
        # the momentum prediction is an infinite-time statement; a finite grid
        # window is compared with the flux only
        mom = momentum if not sc.interacting else None
        checks[f"cross_section_R{R:g}"] = cross_section_check(results[R], tables[R], mom)
        checks[f"crossings_R{R:g}"] = crossing_expectation_check(results[R], tables[R])
    R = max(sc.radii)
    checks[f"exit_law_R{R:g}"] = exit_law_check(results[R], src, SphereSpec(R, n_theta, n_phi),
                                                tolerance=1e-3 * ctx.scale)
    if len(sc.radii) > 2:
        diffs = [float(np.max(np.abs(results[b].sigma_hat - results[a].sigma_hat)))
                 for a, b in zip(sc.radii, sc.radii[1:])]
        checks["r_sweep"] = {"max_bin_change": diffs,
                             "pass": bool(all(y <= x for x, y in zip(diffs, diffs[1:])))}
    report = ensemble_report(sc, results, tables, momentum, checks, __version__)
    report.update(_header(ctx.cfg, "cross-section", ctx.seed))
    write_ensemble_csv(ctx.out / "ensemble.csv", results, tables, momentum)
    for i, R_ in enumerate(sc.radii):
        tables[R_].to_csv(ctx.out / "flux_tables.csv", append=i > 0)
    rows = []
    for R_, res in results.items():
        for lo, hi, c in zip(res.time_edges[:-1], res.time_edges[1:], res.time_counts):
            rows.append([R_, lo, hi, int(c)])
    _write_csv(ctx.out / "exit_times.csv", ["R", "t_lo", "t_hi", "count"], rows)
    _gnuplot(ctx.out / "exit_histogram.gp", "exit-time histogram",
             "set xlabel 'exit time'\nset ylabel 'count'\nset style fill solid 0.5\n"
             "plot 'exit_times.csv' using (($2+$3)/2):4:($3-$2) with boxes title 'exits'")
    law = checks[f"exit_law_R{R:g}"]
    gated = [v.get("pass") for k, v in checks.items() if not k.startswith("exit_law")]
    if law["status"] == "applicable":
        gated.append(law["pass"])
    report["pass"] = bool(all(gated))
    return report


def cmd_phase_shifts(ctx: Context) -> dict:
    from .stationary import (cross_section_csv, optical_theorem_residual, phase_shifts,
                             total_cross_section)

    pot = ctx.cfg.potential()
    ks = ctx.cfg.get("potential", "k_values")
    if ks is None:
        k0 = np.asarray(ctx.cfg.get("packet", "k0"), dtype=float)
        ks = [float(np.linalg.norm(k0)) or 1.0]
    l_max = ctx.cfg.get("potential", "l_max")
    theta = np.linspace(0.0, np.pi, 181)
    tables = []
    entries = []
    for k in ks:
        tab = phase_shifts(pot, float(k), l_max)
        tables.append(tab)
        name = f"dcs_k{float(k):g}.csv"
        cross_section_csv(ctx.out / name, tab, theta, pot)
        entries.append({**tab.metadata(), "deltas": tab.deltas.tolist(), "dcs_file": name,
                        "sigma_total": total_cross_section(tab),
                        "optical_theorem_residual": optical_theorem_residual(tab)})
    with open(ctx.out / "phase_shifts.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["k", "l", "delta"])
        for tab in tables:
            for l, dl in enumerate(tab.deltas):
                w.writerow([repr(tab.k), l, repr(float(dl))])
    files = ", ".join(f"'{e['dcs_file']}' using 1:2 with lines title 'k={e['k']:g}'" for e in entries)
    _gnuplot(ctx.out / "dcs.gp", "differential cross section",
             f"set logscale y\nset xlabel 'theta (rad)'\nset ylabel 'dsigma/dOmega'\nplot {files}")
    ok = all(e["converged"] and e["optical_theorem_residual"] <= 1e-8 * ctx.scale for e in entries)
    return {**_header(ctx.cfg, "phase-shifts", ctx.seed), "potential": pot.spec(),
            "tables": entries, "pass": bool(ok)}


REPORT_FILES = {"evolve": "evolve.json", "trajectories": "trajectories.json",
                "fast-check": "fast_report.json", "cross-section": "cross_section.json",
                "phase-shifts": "phase_shifts.json"}


def cmd_report(ctx: Context) -> dict:
    """Summary of the reports already present in the output directory."""
    found = {}
    for cmd, name in REPORT_FILES.items():
        p = ctx.out / name
        if p.exists():
            data = json.loads(p.read_text(encoding="utf-8"))
            found[cmd] = {"file": name, "pass": data.get("pass"),
                          "config_hash": data.get("config_hash")}
    if not found:
        raise InvalidParameterError(f"no reports found in {ctx.out}")
    mismatched = sorted(c for c, v in found.items() if v["config_hash"] != ctx.cfg.hash())
    return {**_header(ctx.cfg, "report", ctx.seed), "reports": found,
            "config_mismatch": mismatched,
            "pass": bool(all(v["pass"] is not False for v in found.values()) and not mismatched)}


HANDLERS = {"evolve": cmd_evolve, "trajectories": cmd_trajectories, "fast-check": cmd_fast_check,
            "cross-section": cmd_cross_section, "phase-shifts": cmd_phase_shifts,
            "report": cmd_report}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bohmflux", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"bohmflux {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, metavar="PATH", help="scenario file")
        sp.add_argument("--out", default="bohmflux-out", metavar="DIR", help="output directory")
        sp.add_argument("--threads", type=int, default=1, metavar="N", help="worker thread cap")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--tolerance-scale", type=float, default=1.0, metavar="S",
                        help="multiply numerical-check tolerances by S")
    return ap


def _fail(code: int, kind: str, message: str, **extra) -> int:
    err = {"error": kind, "message": message, "exit_code": code, **extra}
    sys.stderr.write(json.dumps(_jsonable(err), sort_keys=True) + "\n")
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    started = time.time()
    try:
        if args.threads < 1 or not args.tolerance_scale > 0:
            raise InvalidParameterError("--threads must be >= 1 and --tolerance-scale > 0")
        cfg = load_config(args.config)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        ctx = Context(args, cfg)
        report = HANDLERS[args.command](ctx)
        name = "report.json" if args.command == "report" else REPORT_FILES[args.command]
        write_json(out / name, report)
        write_json(out / "run_meta.json", {
            "command": args.command, "argv": list(sys.argv[1:] if argv is None else argv),
            "started": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(started)),
            "wall_seconds": round(time.time() - started, 3), "version": __version__,
        })
        if report.get("pass") is False:
            failed = [k for k, v in report.get("checks", {}).items()
                      if isinstance(v, dict) and v.get("pass") is False] or [args.command]
            raise CheckFailed(failed)
    except ConfigError as exc:
        return _fail(2, "config", str(exc), problems=exc.problems,
                     missing_sections=exc.missing_sections)
    except (InvalidParameterError, ValueError) as exc:
        return _fail(2, "validation", str(exc))
    except OSError as exc:
        return _fail(2, "io", str(exc))
    except CheckFailed as exc:
        return _fail(3, "check_failed", str(exc), failed=exc.failed)
    except BohmfluxError as exc:
        return _fail(3, type(exc).__name__, str(exc))
    return 0


if __name__ == "__main__":
    sys.exit(main())
