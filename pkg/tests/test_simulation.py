import cmath
import io
import math
from dataclasses import replace

import numpy as np
import pytest

from gfmsat.control import ConverterConfig, ConverterState, Mode, Strategy
from gfmsat.core import GridModel
from gfmsat.errors import DomainError
from gfmsat.network import Branch, FaultEvent, NetworkModel, Node, TerminalSource, reduce_to_terminals, solve_terminal
from gfmsat.scenario import load_scenario
from gfmsat.simulation import (
    ScenarioSpec,
    Simulator,
    SystemState,
    TimeSeriesLog,
    Verdict,
    classify,
    initial_state,
    measure_fault_stage,
    run,
    simulate,
    step,
)

import frozen
import oracles

Z_G = 0.1 + 0.1j
Z_V = cmath.rect(0.2, math.pi / 4)


@pytest.fixture(scope="module")
def case1():
    return load_scenario("case1-single").spec


def line_spec(strategy, cfg=None, v_g=1.0, **kw):
    net = NetworkModel((Node("c", "converter-terminal"), Node("g", "grid")), (Branch("l", "c", "g", Z_G),))
    cfg = cfg or ConverterConfig(p_star=0.2, q_star=0.2, z_v=Z_V)
    return ScenarioSpec(net, (cfg,), (Strategy(strategy),), ("c",), GridModel(v_g=v_g), "g", **kw)


def state_of(spec, v_hat, mu_f=1.0, mode=Mode.NORMAL):
    return SystemState((ConverterState(v_hat, mu_f, mode, 0.0),), 0.0, 0.0, spec.network, spec.grid, 0)


def test_initial_state_is_a_fixed_point(case1):
    st = initial_state(case1)
    sim = Simulator(case1)
    v = np.array([c.v_hat for c in st.converters])
    dv, dmu, _ = sim.evaluate(v, np.ones(1), np.zeros(1, dtype=int), 0.0)
    assert np.max(np.abs(dv)) <= 1e-9 and np.max(np.abs(dmu)) == 0.0


def test_no_drift_at_equilibrium(case1):
    spec = replace(case1, events=(), t_end=1.0)
    log = simulate(spec)
    v = log.channel(0, "vhat")
    assert np.max(np.abs(v - v[0])) <= 1e-8
    assert np.max(np.abs(log.channel(0, "delta") - log.channel(0, "delta")[0])) <= 1e-8


def test_islanded_initialization_shares_frequency():
    spec = load_scenario("case3-ieee9").spec
    sim = Simulator(spec)
    v, w = sim.steady_state()
    dv, _, _ = sim.evaluate(v, np.ones(3), np.zeros(3, dtype=int), 0.0)
    assert np.max(np.abs(dv - 1j * w * v)) <= 1e-8
    assert v[0].imag == 0.0


def test_flat_start_when_no_unsaturated_point():
    # a setpoint far beyond the current limit has no unsaturated equilibrium
    spec = line_spec("saturation-informed", ConverterConfig(p_star=3.0, q_star=0.0, z_v=Z_V), t_end=0.1,
                     settle_time=0.2)
    sim = Simulator(spec)
    assert sim.steady_state() is None
    *_, how = sim.initial_arrays()
    assert how == "flat-start"


def test_filtered_dos_step_response():
    # frozen reference (eta = 0) and conventional feedback: the limiter DoS
    # is constant, so mu_f must follow mu + (1 - mu) exp(-t/tau)
    cfg = ConverterConfig(eta=0.0, z_v=Z_V)
    spec = line_spec("conventional-with-limiter", cfg, v_g=0.3, t_end=0.5, log_rate=1000.0)
    v_hat = cmath.rect(1.0, 0.2)
    log = simulate(spec, state_of(spec, v_hat, 1.0, Mode.SATURATED))
    red = reduce_to_terminals(spec.network, ["c"], "g")
    mu = solve_terminal(red, [TerminalSource(v_hat, True, Z_V, 1.1, 1.0, False)], v_grid=0.3).mu[0]
    assert mu < 1.0
    exact = mu + (1.0 - mu) * np.exp(-log.t / cfg.tau)
    assert np.max(np.abs(log.channel(0, "mu_f") - exact)) <= 1e-6
    assert np.all(log.channel(0, "mode") == 1)


def _end_state(spec, init, dt):
    log = simulate(replace(spec, dt=dt), init)
    return log.final_state.converters[0].v_hat, log.final_state.converters[0].mu_f


@pytest.mark.parametrize("strategy,v_g,mode,mu_f", [
    ("no-limiter", 1.0, Mode.NORMAL, 1.0),
    ("saturation-informed", 0.3, Mode.SATURATED, 0.9),
])
def test_rk4_order(strategy, v_g, mode, mu_f):
    spec = line_spec(strategy, v_g=v_g, t_end=0.04, log_rate=100.0)
    init = state_of(spec, cmath.rect(0.9, 0.4), mu_f, mode)
    ends = [_end_state(spec, init, dt) for dt in (2e-4, 1e-4, 5e-5)]
    order_v = oracles.richardson_order(*(e[0] for e in ends))
    assert order_v >= 3.5
    if mode == Mode.SATURATED:
        assert oracles.richardson_order(*(e[1] for e in ends)) >= 3.5


def _synthetic_log(delta, t, vmag=None, freq=None):
    n = len(t)
    data = {
        "conv1.delta": delta,
        "conv1.vmag": np.ones(n) if vmag is None else vmag,
        "conv1.freq": np.ones(n) if freq is None else freq,
        "conv1.imag": np.zeros(n),
        "conv1.mu_f": np.ones(n),
        "conv1.mode": np.zeros(n),
    }
    return TimeSeriesLog(t, data, 1)


def test_classify_synthetic_logs(case1):
    t = np.linspace(0, 6, 6001)
    assert classify(_synthetic_log(np.full_like(t, 0.3), t), case1).classification == Verdict.STABLE
    ramp = np.where(t < 3, 0.3, 0.3 + 10 * (t - 3))
    v = classify(_synthetic_log(ramp, t), case1)
    assert v.classification == Verdict.UNSTABLE and v.max_angle_excursion == pytest.approx(30.0)
    damped = np.where(t < 3, 0.2, oracles.damped_oscillation(np.maximum(t - 3, 0)))
    v = classify(_synthetic_log(damped, t), case1)
    assert v.classification == Verdict.STABLE and v.recovered_to_prefault
    live = 0.3 + 0.5 * np.sin(2 * np.pi * 2 * t)
    assert classify(_synthetic_log(live, t), case1).classification == Verdict.INCONCLUSIVE
    off = classify(_synthetic_log(np.full_like(t, 0.3), t, freq=np.full_like(t, 1.01)), case1)
    assert off.classification == Verdict.INCONCLUSIVE
    with pytest.raises(DomainError):
        classify(_synthetic_log(np.zeros(10), np.linspace(0, 0.1, 10)), case1)


def test_classify_islanded_uses_pairwise_angles():
    spec = load_scenario("case3-ieee9").spec
    t = np.linspace(0, 6, 601)
    common = 0.7 * t  # a common rotation is not a loss of synchronism
    data = {}
    for k in range(3):
        data[f"conv{k + 1}.delta"] = common + 0.1 * k
        data[f"conv{k + 1}.freq"] = np.full_like(t, 1.0 + 1e-4)
        data[f"conv{k + 1}.vmag"] = np.ones_like(t)
    log = TimeSeriesLog(t, data, 3, islanded=True)
    assert classify(log, spec).classification == Verdict.STABLE
    data["conv3.delta"] = common + np.where(t > 3, 5 * (t - 3), 0.0)
    assert classify(log, spec).classification == Verdict.UNSTABLE


@pytest.fixture(scope="module")
def sustained(case1):
    """Case-I converter through a 3 s dip to 0.3 p.u. starting at 0.5 s."""
    spec = replace(case1, events=(FaultEvent("grid-voltage-step", 0.5, parameter=0.3),), t_end=3.5)
    return spec, simulate(spec)


def test_sustained_fault_reaches_saturated_equilibrium(sustained):
    _, log = sustained
    st = log.final_state.converters[0]
    assert st.mode == Mode.SATURATED
    assert abs(st.mu_f - frozen.MU_S_CASE1) <= 1e-3
    assert abs(abs(st.mu_f * st.v_hat) - frozen.FAULT_V_HAT_MU) <= 1e-3
    assert abs(log.channel(0, "delta")[-1]) <= 1e-3
    assert np.max(log.channel(0, "imag")) <= 1.1 + 1e-6


@pytest.mark.slow
def test_equivalent_circuit_mode_has_same_steady_state(sustained):
    spec, log = sustained
    eq = simulate(replace(spec, solver_mode="equivalent-circuit"))
    a, b = log.final_state.converters[0], eq.final_state.converters[0]
    assert abs(a.mu_f - b.mu_f) <= 1e-6
    assert abs(a.v_hat - b.v_hat) <= 1e-6


def test_step_matches_simulate():
    spec = line_spec("saturation-informed", v_g=0.3, t_end=0.01, log_rate=1e4)
    init = state_of(spec, cmath.rect(0.9, 0.4), 0.9, Mode.SATURATED)
    st = init
    sim = Simulator(spec)
    for _ in range(spec.n_steps):
        st = step(st, spec, sim)
    ref = simulate(spec, init).final_state
    assert abs(st.converters[0].v_hat - ref.converters[0].v_hat) <= 1e-13
    assert st.t == pytest.approx(spec.t_end)


@pytest.fixture(scope="module")
def short_case1(case1):
    events = (FaultEvent("grid-voltage-step", 0.5, parameter=0.3), FaultEvent("grid-voltage-step", 1.5, parameter=1.0))
    return replace(case1, events=events, t_end=3.0)


@pytest.mark.slow
def test_verdict_invariant_to_log_rate(short_case1):
    a = run(short_case1)[1]
    b = run(replace(short_case1, log_rate=200.0))[1]
    assert a.classification == b.classification == Verdict.STABLE
    assert a.recovered_to_prefault and b.recovered_to_prefault


def test_csv_roundtrip(short_case1, tmp_path):
    log, verdict = run(replace(short_case1, t_end=2.2))
    path = tmp_path / "log.csv"
    log.to_csv(path)
    back = TimeSeriesLog.from_csv(path)
    assert back.columns() == log.columns()
    for c in log.columns():
        assert np.allclose(back[c], log[c], rtol=1e-11, atol=1e-12)
    assert classify(back, short_case1).classification == verdict.classification
    assert TimeSeriesLog.from_csv(io.StringIO(log.to_csv())).n_converters == 1
    with pytest.raises(DomainError):
        TimeSeriesLog.from_csv(io.StringIO("x,y\n1,2\n"))


def test_fault_stage_measurement(case1):
    m = measure_fault_stage(replace(case1, t_end=4.5, events=(
        FaultEvent("grid-voltage-step", 0.5, parameter=0.3), FaultEvent("grid-voltage-step", 2.5, parameter=1.0))))
    assert m.time == 2.5 and m.all_saturated
    assert m.v_hat_mu[0] == pytest.approx(frozen.FAULT_V_HAT_MU, abs=1e-3)
    assert m.v_mu_star[0] == pytest.approx(frozen.MU_S_CASE1, abs=1e-3)
    assert m.max_phase_difference == 0.0


def test_spec_validation(case1):
    with pytest.raises(DomainError):
        replace(case1, dt=0.0)
    with pytest.raises(DomainError):
        replace(case1, t_end=3.5)
    with pytest.raises(DomainError):
        replace(case1, solver_mode="magic")
    with pytest.raises(DomainError):
        replace(case1, outputs=("vmag", "nonsense"))
    with pytest.raises(DomainError):
        replace(case1, grid=None)


def test_islanded_frame_uses_nominal_frequency():
    # a 60 Hz islanded system must report frequencies near 1 p.u.
    spec = replace(load_scenario("case3-ieee9").spec, events=(), t_end=0.2)
    log = simulate(spec)
    assert np.max(np.abs(log.stack("freq") - 1.0)) < 0.05
