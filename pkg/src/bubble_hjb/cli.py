"""``bubble-hjb`` command line.

Usage::

    bubble-hjb <command> --config run.cfg [--out DIR] [--seed U64] [--n INT]

Every command writes its data as CSV plus a JSON-lines report into the
output directory, and (unless ``charts = false``) SVG charts next to them.
The exit status is 0 exactly when every check in the report passed;
diagnostics go to standard error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import plotting
from .branch import (extrapolated_vanishing_point, find_critical_lambda, trace_branch)
from .config import COMMANDS, RunConfig, load_config
from .control_mc import McConfig, estimate_growth_rate, estimate_value
from .elliptic import EllipticProblem, solve_positive
from .errors import BubbleError
from .grid import ScalarField, interpolate, make_grid, sup_norm, write_field_csv
from .parabolic import evolve_to_steady
from .scenarios import (CryptoScenario, RealEstateScenario, allocation_profile,
                        build_problem, gate_threshold_scan)
from .spectral import existence_gate, principal_eigenpair

logger = logging.getLogger("bubble_hjb")

EXIT_OK, EXIT_FAILED_CHECK, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3
DEFAULT_SHIFTS = tuple(np.round(np.linspace(-1.0, 1.0, 9), 12))


def _num(v):
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    if isinstance(v, np.integer):
        return int(v)
    return v


class Report:
    """Accumulates check records and writes them as JSON lines."""

    def __init__(self, command: str):
        self.command = command
        self.records = []

    def info(self, name: str, **data):
        self.records.append({"kind": "info", "name": name,
                             **{k: _num(v) for k, v in data.items()}})

    def check(self, name: str, passed: bool, **data) -> bool:
        self.records.append({"kind": "check", "name": name, "pass": bool(passed),
                             **{k: _num(v) for k, v in data.items()}})
        stream = logging.INFO if passed else logging.WARNING
        logger.log(stream, "%s: %s", name, "pass" if passed else "FAIL")
        return bool(passed)

    @property
    def all_passed(self) -> bool:
        return all(r["pass"] for r in self.records if r["kind"] == "check")

    def write(self, path: Path) -> None:
        lines = [json.dumps(r, separators=(",", ":")) for r in self.records]
        lines.append(json.dumps({"kind": "summary", "command": self.command,
                                 "checks": sum(r["kind"] == "check" for r in self.records),
                                 "pass": self.all_passed}, separators=(",", ":")))
        path.write_text("\n".join(lines) + "\n")


def _write_rows(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])
    path.write_text(buf.getvalue())


# -- building the problem -------------------------------------------------------------

def _field(cfg: RunConfig, key: str, grid, default=None) -> Optional[ScalarField]:
    spec = cfg.problem.get(key)
    if spec is None:
        return None if default is None else ScalarField(grid, default)
    return spec.build(grid, cfg.base_dir)


def build_scenario(cfg: RunConfig):
    p = cfg.problem
    grid = make_grid(p["n"])
    r0 = _field(cfg, "r0", grid)
    if cfg.model == "crypto":
        return CryptoScenario(p["nu"], p["c"], p["K"], p["N"], p["r1"], r0)
    if cfg.model == "realestate":
        return RealEstateScenario(p["nu"], p["gamma"], p["K"], p["Q"], p["r1"], r0,
                                  _field(cfg, "f", grid, 0.0))
    raise BubbleError(f"model '{cfg.model}' is not a market scenario")


def build_elliptic(cfg: RunConfig) -> EllipticProblem:
    if cfg.model in ("crypto", "realestate"):
        return build_problem(build_scenario(cfg))
    if cfg.model == "branch":
        raise BubbleError("model 'branch' only supports the branch command")
    p = cfg.problem
    grid = make_grid(p["n"])
    return EllipticProblem(p["nu"], p["eps"], _field(cfg, "a", grid),
                           _field(cfg, "b", grid, 0.0), _field(cfg, "f", grid, 0.0))


# -- pipelines --------------------------------------------------------------------------

class Run:
    def __init__(self, cfg: RunConfig, out: Path):
        self.cfg = cfg
        self.out = out
        self.report = Report(cfg.command)
        self.charts = bool(cfg.output["charts"])

    # individual stages, shared by the commands

    def gate(self, p: EllipticProblem):
        verdict = existence_gate(p.nu, p.a, p.b)
        self.report.check("gate", True, regime=str(verdict.regime), lambda1=verdict.lambda1,
                          min_a=verdict.min_a)
        return verdict

    def solve(self, p: EllipticProblem):
        rep = solve_positive(p, tol=self.cfg.solver["tol"])
        u = rep.u
        write_field_csv(u, self.out / "u.csv")
        norm = sup_norm(u)
        limit = self.cfg.solver["residual_tol"] * (1.0 + norm)
        self.report.info("solve", regime=str(rep.regime.regime), lambda1=rep.regime.lambda1,
                         outer_iterations=rep.outer_iterations, sup_norm=norm,
                         flagged=rep.flagged, newton_finish=rep.newton_finish)
        self.report.check("residual", rep.final_residual <= limit,
                          value=rep.final_residual, limit=limit)
        self.report.check("monotone_iterates", rep.monotone_violation <= 1e-12 * (1.0 + norm),
                          value=rep.monotone_violation, limit=1e-12 * (1.0 + norm))
        if rep.regime.passes:
            self.report.check("positive", float(u.values.min()) > 0.0,
                              value=float(u.values.min()))
        else:
            self.report.check("zero_solution", norm == 0.0 or rep.flagged, value=norm)
        if self.charts:
            plotting.plot_fields({"u": u}, self.out / "u.svg",
                                 title=f"{rep.regime.regime}, sup u = {norm:.6g}")
        return rep

    def evolve(self, p: EllipticProblem, reference: ScalarField):
        s = self.cfg.solver
        u0 = s["u0"].build(p.grid, self.cfg.base_dir)
        ev = evolve_to_steady(p, u0, dt=s["dt"], t_max=s["t_max"], tol=s["steady_tol"],
                              reference=reference)
        _write_rows(self.out / "series.csv", ["t", "gap", "sup_norm"],
                    zip(ev.times, ev.gaps, ev.sup_norms))
        write_field_csv(ev.u_final, self.out / "u_parabolic.csv")
        gap = ev.gaps[-1]
        self.report.check("parabolic_gap", gap <= s["gap_tol"], value=gap, limit=s["gap_tol"],
                          t_final=ev.times[-1], steps=ev.steps, settled=ev.converged)
        if self.charts:
            plotting.plot_series(ev.times, ev.gaps, ev.sup_norms, self.out / "series.svg")
        return ev

    def mc_value(self, p: EllipticProblem):
        m = self.cfg.mc
        perturbed = p.replace(f=ScalarField(p.grid, m["eps_p"]))
        u_eps = solve_positive(perturbed, tol=self.cfg.solver["tol"]).u
        write_field_csv(u_eps, self.out / "u_eps.csv")
        rows = []
        for x0 in m["x0"]:
            mc = McConfig(paths=m["paths"], dt=m["dt"], horizon=m["horizon"],
                          master_seed=m["seed"], x0=x0, weight_floor=m["weight_floor"])
            t0 = time.perf_counter()
            est = estimate_value(perturbed, u_eps, x0, mc)
            logger.info("MC value at x0=%g: %.6g +- %.2g (%.1fs)", x0, est.mean,
                        est.std_error, time.perf_counter() - t0)
            target = float(interpolate(u_eps, x0))
            err = abs(est.mean - target)
            limit = 3.0 * est.std_error + m["bias"] * abs(target)
            self.report.check(f"mc_value[x0={x0:g}]", err <= limit, estimate=est.mean,
                              std_error=est.std_error, target=target, error=err, limit=limit,
                              truncation_mass=est.truncation_mass)
            rows.append((float(x0), est.mean, est.std_error, est.paths_used,
                         est.truncation_mass))
        _write_rows(self.out / "mc.csv", ["x0", "mean", "std_error", "paths", "truncation_mass"],
                    rows)

    def mc_growth(self, p: EllipticProblem):
        m = self.cfg.mc
        mc = McConfig(paths=m["paths"], dt=m["growth_dt"], horizon=m["growth_horizon"],
                      master_seed=m["seed"], x0=0.5, weight_floor=0.0)
        est = estimate_growth_rate(p.nu, p.b, p.a, mc)
        target = -principal_eigenpair(p.nu, p.b, p.a).lambda1
        limit = max(0.05, 3.0 * est.std_error)
        self.report.check("mc_growth_rate", abs(est.mean - target) <= limit, estimate=est.mean,
                          std_error=est.std_error, target=target, limit=limit)

    # commands

    def cmd_solve(self):
        self.solve(build_elliptic(self.cfg))

    def cmd_eigen(self):
        p = build_elliptic(self.cfg)
        pair = principal_eigenpair(p.nu, p.b, p.a)
        verdict = existence_gate(p.nu, p.a, p.b)
        write_field_csv(pair.phi, self.out / "phi.csv")
        self.report.info("eigen", lambda1=pair.lambda1, regime=str(verdict.regime),
                         iterations=pair.iterations)
        # principal_eigenpair raises unless its two-sided bracket closed
        self.report.check("eigen_converged", True, residual=pair.residual)
        if self.charts:
            plotting.plot_fields({"phi": pair.phi}, self.out / "phi.svg",
                                 title=f"lambda1 = {pair.lambda1:.10g}", ylabel="phi(x)")

    def cmd_evolve(self):
        p = build_elliptic(self.cfg)
        rep = self.solve(p)
        self.evolve(p, rep.u)

    def cmd_branch(self):
        c = self.cfg.problem
        grid = make_grid(c["n"])
        r = _field(self.cfg, "r", grid)
        nu = c["nu"]
        lam_c = find_critical_lambda(nu, r)
        step = c["lambda_span"] / c["lambda_points"]
        lams = [lam_c + step * k for k in range(1, c["lambda_points"] + 1)]
        data = trace_branch(nu, r, c["eps_list"], lams, lam_c)
        rows = data.rows()
        _write_rows(self.out / "branch.csv", ["eps", "lambda", "sup_norm"], rows)
        self.report.info("branch", lambda_c=lam_c, lambda_step=step)
        for eps, pts in data.points.items():
            norms = np.array([pt.sup_norm for pt in pts])
            self.report.check(f"branch_increasing[eps={eps:g}]",
                              bool(np.all(np.diff(norms) > -1e-10)),
                              min_increment=float(np.min(np.diff(norms))))
            est = extrapolated_vanishing_point(pts)
            self.report.check(f"branch_vanishing[eps={eps:g}]", abs(est - lam_c) <= 2 * step,
                              estimate=est, lambda_c=lam_c, limit=2 * step)
        eps_sorted = sorted(data.points)
        for small, big in zip(eps_sorted, eps_sorted[1:]):
            worst = 0.0
            for ps, pb in zip(data.points[small], data.points[big]):
                worst = max(worst, float(np.max(pb.u.values - ps.u.values)))
            self.report.check(f"branch_order[eps={small:g}<{big:g}]", worst <= 1e-8, value=worst)
        if self.charts:
            plotting.plot_branch(rows, lam_c, self.out / "branch.svg")

    def cmd_verify_control(self):
        p = build_elliptic(self.cfg)
        self.mc_value(p)
        if self.cfg.mc["growth"]:
            self.mc_growth(p)

    def cmd_scenario(self):
        scn = build_scenario(self.cfg)
        p = build_problem(scn)
        self.report.info("scenario", model=self.cfg.model, eps=scn.eps)
        rep = self.solve(p)
        prof = allocation_profile(scn, rep.u, rep)
        prof.to_csv(self.out / "allocation.csv")
        self.report.check("clearing_error", math.isfinite(prof.clearing_error),
                          value=prof.clearing_error, utility=prof.kind)
        scan = gate_threshold_scan(scn, self.cfg.problem.get("shifts") or DEFAULT_SHIFTS)
        _write_rows(self.out / "threshold.csv", ["shift", "lambda1", "regime"],
                    [(row.shift, row.lambda1, str(row.regime)) for row in scan.rows])
        self.report.info("threshold", shift=scan.threshold)
        if self.charts:
            plotting.plot_allocation(prof.x, prof.u, prof.theta, prof.demand, scn.K_asset,
                                     self.out / "allocation.svg")
            plotting.plot_threshold([row.shift for row in scan.rows],
                                    [row.lambda1 for row in scan.rows], scan.threshold,
                                    self.out / "threshold.svg")

    def cmd_verify_all(self):
        p = build_elliptic(self.cfg)
        self.gate(p)
        rep = self.solve(p)
        self.evolve(p, rep.u)
        self.mc_value(p)

    def execute(self) -> int:
        self.out.mkdir(parents=True, exist_ok=True)
        handler = getattr(self, "cmd_" + self.cfg.command.replace("-", "_"))
        handler()
        self.report.write(self.out / "report.jsonl")
        return EXIT_OK if self.report.all_passed else EXIT_FAILED_CHECK


def run(cfg: RunConfig, out: Optional[Path] = None) -> int:
    out = Path(out if out is not None else cfg.output["dir"])
    return Run(cfg, out).execute()


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bubble-hjb", description=__doc__.split("\n\n")[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, type=Path, help="key = value run file")
    ap.add_argument("--out", type=Path, help="output directory (overrides [output] dir)")
    ap.add_argument("--seed", type=int, help="Monte Carlo master seed")
    ap.add_argument("--n", type=int, help="number of grid nodes")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s",
                        level=logging.WARNING - 10 * min(args.verbose, 2))
    try:
        cfg = load_config(args.config, args.command)
        if args.seed is not None:
            if not 0 <= args.seed < 2**64:
                raise BubbleError("--seed must be an unsigned 64-bit integer")
            cfg = replace(cfg, mc={**cfg.mc, "seed": args.seed})
        if args.n is not None:
            if args.n < 3:
                raise BubbleError("--n must be >= 3")
            cfg = replace(cfg, problem={**cfg.problem, "n": args.n})
    except (BubbleError, ValueError) as exc:
        print(f"bubble-hjb: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return run(cfg, args.out)
    except BubbleError as exc:
        print(f"bubble-hjb: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
