"""Command-line entry points: ``simulate``, ``equilibrium``, ``stability``
and ``classify``.

Exit codes: 0 success, 2 usage or invalid scenario, 3 solver failure,
4 I/O failure.  ``GFMSAT_OUTPUT_DIR`` overrides the default output
directory of ``simulate``.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .control import Strategy
from .core import rotated_setpoint
from .equilibrium import (
    SaturatedEquilibriumProblem,
    desaturation_indicator,
    existence_conditions,
    solve_saturated_equilibrium,
)
from .errors import DomainError, GfmSatError, ScenarioError, SolverError
from .network import apply_event, augment_with_virtual_impedance, reduce_to_terminals
from .scenario import dumps, load_scenario, scenario_to_dict
from .simulation import TimeSeriesLog, classify, fault_stage_time, measure_fault_stage, run
from .stability import check_microgrid, check_multi_grid, check_single

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_IO = 0, 2, 3, 4
OUTPUT_ENV = "GFMSAT_OUTPUT_DIR"
DEFAULT_OUTPUT = "gfmsat-out"
_MODES = {"exact": "exact-limiter", "equivalent": "equivalent-circuit"}


class UsageError(Exception):
    pass


def _clean(obj):
    """JSON-safe copy: NaN/inf become null, numpy scalars become floats."""
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _emit(obj, out=None):
    text = json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"
    (out or sys.stdout).write(text)
    return text


def _thevenin(spec, k: int = 0):
    """Grid-side Thevenin impedance and voltage ratio seen by converter ``k``
    when it is the only converter."""
    if spec.grid is None:
        raise UsageError("this command needs a grid-connected scenario")
    if spec.n != 1:
        raise UsageError("this command needs a single-converter scenario")
    red = reduce_to_terminals(spec.network, spec.terminals, spec.grid_node)
    y_c = complex(red.y_c[0, 0])
    ratio = complex(red.y_link[0]) / y_c
    return 1.0 / y_c, ratio


def _fault_voltage(spec) -> float:
    steps = [float(e.parameter) for e in spec.events if e.kind == "grid-voltage-step"]
    return min(steps) if steps else spec.grid.v_g


def _equilibrium_problem(spec, v_g: float) -> SaturatedEquilibriumProblem:
    z_th, ratio = _thevenin(spec)
    cfg = spec.converters[0]
    if spec.strategies[0] != Strategy.SATURATION_INFORMED:
        cfg = replace(cfg, frt_overrides=None)
    # network quantities are on the system base; the problem is on the converter's own
    return SaturatedEquilibriumProblem.from_converter(
        cfg, z_th * cfg.rating, v_g * abs(ratio), spec.grid.omega_delta)


def cmd_simulate(args) -> int:
    sf = load_scenario(args.scenario)
    spec = sf.spec
    if args.strategy:
        spec = spec.with_strategy(args.strategy)
    changes = {}
    if args.mode:
        changes["solver_mode"] = _MODES[args.mode]
    if args.dt is not None:
        changes["dt"] = args.dt
    if args.t_end is not None:
        # a shortened run drops the events it never reaches
        changes["t_end"] = args.t_end
        changes["events"] = tuple(e for e in spec.events if e.time < args.t_end)
    if changes:
        try:
            spec = replace(spec, **changes)
        except DomainError as exc:
            raise UsageError(str(exc)) from exc
    out = Path(args.out or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)
    log, verdict = run(spec)
    resolved = replace(sf, spec=spec)
    meta = {
        "scenario": scenario_to_dict(resolved),
        "strategies": [s.value for s in spec.strategies],
        "solver_mode": spec.solver_mode,
        "dt": spec.dt,
        "t_end": spec.t_end,
        "version": __version__,
    }
    expected = {s.value for s in spec.strategies}
    if len(expected) == 1:
        meta["expected_verdict"] = sf.expected.get(expected.pop())
    try:
        out.mkdir(parents=True, exist_ok=True)
        log.to_csv(out / "log.csv", spec.outputs)
        (out / "verdict.json").write_text(json.dumps(_clean(verdict.to_dict()), indent=2, sort_keys=True) + "\n")
        (out / "run.json").write_text(dumps(_clean(meta)))
    except OSError as exc:
        print(f"error: cannot write to {out}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    _emit(verdict.to_dict())
    return EXIT_OK


def cmd_equilibrium(args) -> int:
    spec = load_scenario(args.scenario).spec
    v_g = args.grid_voltage if args.grid_voltage is not None else _fault_voltage(spec)
    if v_g < 0:
        raise UsageError("--grid-voltage must be nonnegative")
    prob = _equilibrium_problem(spec, v_g)
    sol = solve_saturated_equilibrium(prob)
    report = {
        "grid_voltage": v_g,
        "solution": sol.to_dict(),
        "existence_conditions": [
            {"name": c.name, "lhs": c.lhs, "rhs": c.rhs, "holds": c.holds}
            for c in existence_conditions(prob)
        ],
        "lambda_exsat": desaturation_indicator(prob),
    }
    _emit(report)
    return EXIT_OK


def cmd_stability(args) -> int:
    sf = load_scenario(args.scenario)
    spec = sf.spec.with_strategy(Strategy.SATURATION_INFORMED)
    cond = args.condition
    if cond in ("single", "multi") and spec.grid is None:
        raise UsageError(f"the {cond} condition needs a grid-connected scenario")
    if cond == "microgrid" and spec.grid is not None:
        raise UsageError("the microgrid condition needs an islanded scenario")
    if cond == "single" and spec.n != 1:
        raise UsageError("the single condition needs exactly one converter")
    sat = [c.saturated_config() for c in spec.converters]
    setpoints = [rotated_setpoint(c.p_star, c.q_star, c.v_star, c.varphi) for c in sat]
    alpha = [c.alpha for c in sat]
    varphi = sat[0].varphi
    inputs = {}

    if cond == "single":
        v_g = args.grid_voltage if args.grid_voltage is not None else _fault_voltage(spec)
        prob = _equilibrium_problem(spec, v_g)
        v_mu, v_mu_star = args.v_mu, args.v_mu_star
        if (v_mu is None or v_mu_star is None) and args.variant != "no_voltage_info":
            sol = solve_saturated_equilibrium(prob)
            if not sol.exists:
                raise SolverError(f"no saturated equilibrium at v_g = {v_g}: {sol.diagnostic}")
            v_mu = sol.v_hat_mu_s if v_mu is None else v_mu
            v_mu_star = sol.mu_s * prob.v_star if v_mu_star is None else v_mu_star
        inputs = {"grid_voltage": v_g, "v_hat_mu_s": v_mu, "v_mu_star": v_mu_star}
        rep = check_single(prob.setpoint, prob.alpha, v_mu or 0.0, v_mu_star or prob.v_star,
                           prob.y, varphi, args.variant, v_star=prob.v_star)
    else:
        z_sys = np.array([c.z_v / c.rating for c in sat])
        need_measure = (cond == "multi" and (args.v_mu is None or args.v_mu_star is None)
                        and args.variant != "no_voltage_info") or \
                       (cond == "microgrid" and (args.delta_bar is None or args.mu_bar is None))
        network = spec.network
        if need_measure:
            m = measure_fault_stage(spec)
            network = m.network
            inputs["measured_at"] = m.time
        elif spec.events:
            # condition applies to the faulted network
            grid = spec.grid
            for e in spec.events:
                if e.time < fault_stage_time(spec) - 1e-12:
                    network, grid = apply_event(network, e, grid)
        red = reduce_to_terminals(network, spec.terminals, spec.grid_node)
        Y_aug = augment_with_virtual_impedance(red.y_c, z_sys)
        if cond == "multi":
            v_mu = args.v_mu if args.v_mu is not None else (float(np.min(m.v_hat_mu)) if need_measure else 0.0)
            v_mu_star = args.v_mu_star if args.v_mu_star is not None else (
                float(np.max(m.v_mu_star)) if need_measure else 1.0)
            inputs.update({"v_hat_mu_s_min": v_mu, "v_mu_star_max": v_mu_star})
            rep = check_multi_grid(setpoints, alpha, v_mu, v_mu_star, Y_aug, varphi, args.variant)
        else:
            d_bar = args.delta_bar if args.delta_bar is not None else m.max_phase_difference
            mu_bar = args.mu_bar if args.mu_bar is not None else m.voltage_ratio_deviation
            inputs.update({"delta_bar": d_bar, "mu_bar": mu_bar})
            rep = check_microgrid(setpoints, alpha, d_bar, mu_bar, Y_aug, varphi)
    _emit({"report": rep.to_dict(), "inputs": inputs})
    return EXIT_OK


def cmd_classify(args) -> int:
    spec = load_scenario(args.scenario).spec
    try:
        log = TimeSeriesLog.from_csv(args.log, islanded=spec.is_islanded)
    except OSError as exc:
        print(f"error: cannot read {args.log}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    _emit(classify(log, spec).to_dict())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gfmsat", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    scen_help = "scenario JSON path or fixture name (case1-single, case2-three-converter, case3-ieee9)"

    s = sub.add_parser("simulate", help="run a scenario and write log, verdict and run metadata")
    s.add_argument("--scenario", required=True, help=scen_help)
    s.add_argument("--strategy", choices=[x.value for x in Strategy])
    s.add_argument("--mode", choices=sorted(_MODES))
    s.add_argument("--dt", type=float)
    s.add_argument("--t-end", type=float)
    s.add_argument("--out", help=f"output directory (default ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")
    s.set_defaults(func=cmd_simulate)

    e = sub.add_parser("equilibrium", help="current-saturated equilibrium of a single converter")
    e.add_argument("--scenario", required=True, help=scen_help)
    e.add_argument("--grid-voltage", type=float, help="grid voltage in p.u. (default: the dip level)")
    e.set_defaults(func=cmd_equilibrium)

    c = sub.add_parser("stability", help="evaluate a parametric stability condition")
    c.add_argument("--scenario", required=True, help=scen_help)
    c.add_argument("--condition", required=True, choices=["single", "multi", "microgrid"])
    c.add_argument("--variant", default="exact", choices=["exact", "v_star_relaxed", "no_voltage_info"])
    c.add_argument("--grid-voltage", type=float)
    c.add_argument("--v-mu", type=float, help="steady-state internal voltage (minimum for multi)")
    c.add_argument("--v-mu-star", type=float, help="internal voltage setpoint (maximum for multi)")
    c.add_argument("--delta-bar", type=float)
    c.add_argument("--mu-bar", type=float)
    c.set_defaults(func=cmd_stability)

    k = sub.add_parser("classify", help="classify a logged trajectory")
    k.add_argument("--scenario", required=True, help=scen_help)
    k.add_argument("--log", required=True)
    k.set_defaults(func=cmd_classify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO if str(exc).startswith("cannot read") else EXIT_USAGE
    except DomainError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except GfmSatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
