"""Fixed-step simulation of converters coupled through a network.

All dynamic states live in a frame rotating at ``omega_0``, so the
``j omega_0 v_hat`` term of every law vanishes and the grid phasor turns
slowly at ``-(omega_0 - omega_g)``.  Converters are integrated with the
classical RK4 scheme; the algebraic network solve is repeated inside every
stage.  Events are applied on step boundaries and the FRT mode switch is
supervised once per step, which keeps each RK4 step smooth.

Control laws run on each converter's own rating while the network runs on
the system power base: impedances are divided and currents multiplied by
``rating`` when crossing that boundary.
"""
from __future__ import annotations

import csv
import enum
import io
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import fsolve

from .control import ConverterConfig, ConverterState, Mode, Strategy, mode_transition
from .core import GridModel
from .errors import DomainError, GfmSatError, SolverError
from .network import (
    FaultEvent,
    NetworkModel,
    TerminalSolver,
    apply_event,
    reduce_to_terminals,
)

SOLVER_MODES = ("exact-limiter", "equivalent-circuit")
CHANNELS = ("vmag", "imag", "delta", "mu_f", "mode", "freq")
EXTRA_CHANNELS = ("vhat",)

DRIFT_THRESHOLD = 2.0 * math.pi
SETTLE_WINDOW = 0.5
SETTLE_ANGLE_TOL = 0.05
SETTLE_FREQ_TOL = 1e-3
RECOVERY_ANGLE_TOL = 0.05
RECOVERY_VOLTAGE_TOL = 1e-2


@dataclass(frozen=True)
class ScenarioSpec:
    network: NetworkModel
    converters: tuple[ConverterConfig, ...]
    strategies: tuple[Strategy, ...]
    terminals: tuple[str, ...]
    grid: GridModel | None = None
    grid_node: str | None = None
    events: tuple[FaultEvent, ...] = ()
    dt: float = 1e-4
    t_end: float = 6.0
    solver_mode: str = "exact-limiter"
    log_rate: float = 1000.0
    outputs: tuple[str, ...] = CHANNELS
    settle_time: float = 1.0
    name: str = ""

    def __post_init__(self):
        for name in ("converters", "terminals", "events", "outputs"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        object.__setattr__(self, "strategies", tuple(Strategy(s) for s in self.strategies))
        object.__setattr__(self, "events", tuple(sorted(self.events, key=lambda e: e.time)))
        n = len(self.converters)
        if n == 0:
            raise DomainError("at least one converter is required")
        if len(self.strategies) != n or len(self.terminals) != n:
            raise DomainError("need one strategy and one terminal node per converter")
        if len(set(self.terminals)) != n:
            raise DomainError("converters must sit on distinct terminal nodes")
        if (self.grid is None) != (self.grid_node is None):
            raise DomainError("grid and grid_node must be given together")
        if not self.dt > 0:
            raise DomainError("dt must be positive")
        if self.events and not self.t_end > self.events[-1].time:
            raise DomainError("t_end must exceed the last event time")
        if not self.t_end > 0:
            raise DomainError("t_end must be positive")
        if self.solver_mode not in SOLVER_MODES:
            raise DomainError(f"unknown solver mode {self.solver_mode!r}")
        if not self.log_rate > 0:
            raise DomainError("log_rate must be positive")
        bad = set(self.outputs) - set(CHANNELS) - set(EXTRA_CHANNELS)
        if bad:
            raise DomainError(f"unknown output channels {sorted(bad)}")
        if self.settle_time < 0:
            raise DomainError("settle_time must be nonnegative")

    @property
    def n(self) -> int:
        return len(self.converters)

    @property
    def is_islanded(self) -> bool:
        return self.grid is None

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    @property
    def log_every(self) -> int:
        return max(1, int(round(1.0 / (self.log_rate * self.dt))))

    def with_strategy(self, strategy) -> "ScenarioSpec":
        return replace(self, strategies=(Strategy(strategy),) * self.n)


@dataclass(frozen=True)
class SystemState:
    converters: tuple[ConverterState, ...]
    theta_g: float
    t: float
    network: NetworkModel
    grid: GridModel | None = None
    events_applied: int = 0


class Verdict(str, enum.Enum):
    STABLE = "STABLE"
    UNSTABLE = "UNSTABLE-ANGLE-DRIFT"
    INCONCLUSIVE = "INCONCLUSIVE"


@dataclass(frozen=True)
class StabilityVerdict:
    classification: Verdict
    max_angle_excursion: float
    final_frequency_error: float
    recovered_to_prefault: bool
    final_angle_spread: float = 0.0

    def to_dict(self) -> dict:
        return {
            "classification": self.classification.value,
            "max_angle_excursion": self.max_angle_excursion,
            "final_frequency_error": self.final_frequency_error,
            "recovered_to_prefault": self.recovered_to_prefault,
            "final_angle_spread": self.final_angle_spread,
        }


# --------------------------------------------------------------------------
# Logging

def channel_name(k: int, channel: str) -> str:
    return f"conv{k + 1}.{channel}"


@dataclass(eq=False)
class TimeSeriesLog:
    """Uniformly sampled channels.  ``delta`` is unwrapped and measured
    against the grid angle, or against converter 1 when islanded."""

    t: np.ndarray
    data: dict[str, np.ndarray]
    n_converters: int
    islanded: bool = False
    final_state: SystemState | None = field(default=None, repr=False)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.data[name]

    def channel(self, k: int, name: str) -> np.ndarray:
        return self.data[channel_name(k, name)]

    def stack(self, name: str) -> np.ndarray:
        """``(n_samples, n_converters)`` array of one channel."""
        return np.column_stack([self.channel(k, name) for k in range(self.n_converters)])

    def columns(self, outputs: Sequence[str] = CHANNELS) -> list[str]:
        return [channel_name(k, c) for k in range(self.n_converters) for c in outputs]

    def to_csv(self, path=None, outputs: Sequence[str] = CHANNELS) -> str:
        cols = self.columns(outputs)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + cols)
        arrays = [self.t] + [self.data[c] for c in cols]
        for row in zip(*arrays):
            w.writerow([format(float(x), ".12g") for x in row])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source, islanded: bool = False) -> "TimeSeriesLog":
        text = Path(source).read_text() if not isinstance(source, io.StringIO) else source.getvalue()
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0][0] != "t":
            raise DomainError("CSV log must start with a 't' column")
        header = rows[0]
        values = np.array([[float(x) for x in r] for r in rows[1:]], dtype=float).reshape(-1, len(header))
        data = {h: values[:, i] for i, h in enumerate(header) if h != "t"}
        n = len({h.split(".")[0] for h in data})
        return cls(values[:, 0], data, n, islanded)


def _unwrap_log(delta: np.ndarray) -> np.ndarray:
    return np.unwrap(delta, axis=0)


# --------------------------------------------------------------------------
# Classification

def _angle_series(log: TimeSeriesLog) -> np.ndarray:
    """Angle trajectories used for synchronization: one column per converter
    when grid-connected, all pairwise differences when islanded."""
    d = log.stack("delta")
    if not log.islanded:
        return d
    n = d.shape[1]
    cols = [d[:, j] - d[:, i] for i in range(n) for j in range(i + 1, n)]
    return np.column_stack(cols) if cols else np.zeros((d.shape[0], 1))


def _frequency_error(log: TimeSeriesLog, mask: np.ndarray, omega_ref: float) -> float:
    f = log.stack("freq")[mask]
    if log.islanded:
        err = f - f[:, :1]
    else:
        err = f - omega_ref
    return float(np.max(np.abs(err))) if err.size else 0.0


def classify(log: TimeSeriesLog, spec: ScenarioSpec) -> StabilityVerdict:
    """STABLE when angles and frequency have settled over the final window,
    UNSTABLE-ANGLE-DRIFT once an angle has wound more than 2 pi away from its
    value at the first event, INCONCLUSIVE otherwise."""
    t = log.t
    if t.size < 2 or t[-1] - t[0] < SETTLE_WINDOW - 1e-9:
        raise DomainError(f"log spans less than the {SETTLE_WINDOW} s settling window")
    ang = _angle_series(log)
    t_ev = spec.events[0].time if spec.events else t[0]
    i_ev = int(np.searchsorted(t, t_ev - 1e-9))
    i_ev = min(i_ev, t.size - 1)
    excursion = float(np.max(np.abs(ang[i_ev:] - ang[i_ev])))

    window = t >= t[-1] - SETTLE_WINDOW - 1e-9
    spread = float(np.max(np.abs(ang[window] - ang[-1])))
    omega_ref = 1.0
    if spec.grid is not None:
        omega_ref = spec.grid.omega_g / spec.converters[0].omega_base
    ferr = _frequency_error(log, window, omega_ref)

    recovered = False
    if i_ev > 0:
        pre = i_ev - 1
        dang = np.angle(np.exp(1j * (ang[-1] - ang[pre])))
        dv = log.stack("vmag")[-1] - log.stack("vmag")[pre]
        recovered = bool(np.all(np.abs(dang) < RECOVERY_ANGLE_TOL)
                         and np.all(np.abs(dv) < RECOVERY_VOLTAGE_TOL))

    if excursion > DRIFT_THRESHOLD:
        cls = Verdict.UNSTABLE
    elif spread < SETTLE_ANGLE_TOL and ferr < SETTLE_FREQ_TOL:
        cls = Verdict.STABLE
    else:
        cls = Verdict.INCONCLUSIVE
    return StabilityVerdict(cls, excursion, ferr, recovered, spread)


# --------------------------------------------------------------------------
# Engine

class _LawParams:
    """Per-converter law coefficients for one mode pattern (own base).

    The law is folded into ``ks v - kr i + ka (1 - |v|^2/v*^2) v``.
    """

    __slots__ = ("k", "ks", "kr", "ka", "inv_vs2", "z_sys", "feedback", "any_feedback", "sat", "any_sat")

    def __init__(self, cfgs: Sequence[ConverterConfig], ratings: np.ndarray, modes: tuple,
                 informed: np.ndarray):
        k = np.array([c.eta * c.omega_base for c in cfgs])
        rot = np.exp(1j * np.array([c.varphi for c in cfgs]))
        sigma = np.array([c.setpoint_ratio for c in cfgs])
        self.k = k
        self.kr = k * rot / ratings  # network currents arrive on the system base
        self.ks = k * rot * sigma
        self.ka = k * np.array([c.alpha for c in cfgs])
        self.inv_vs2 = 1.0 / np.array([c.v_star**2 for c in cfgs])
        self.z_sys = np.array([c.z_v for c in cfgs]) / ratings
        self.sat = np.asarray(modes) == 1
        self.any_sat = bool(self.sat.any())
        self.feedback = informed & self.sat
        self.any_feedback = bool(self.feedback.any())


class Simulator:
    """Owns the mutable integration state of one scenario run."""

    def __init__(self, spec: ScenarioSpec):
        self.spec = spec
        n = spec.n
        self.n = n
        self.ratings = np.array([c.rating for c in spec.converters], dtype=float)
        self.informed = np.array([s == Strategy.SATURATION_INFORMED for s in spec.strategies])
        self.limited = np.array([s != Strategy.NO_LIMITER for s in spec.strategies])
        self.tau = np.array([c.tau for c in spec.converters])
        self.i_lim_sys = np.array([c.i_lim for c in spec.converters]) * self.ratings
        self.omega_base = np.array([c.omega_base for c in spec.converters])
        # islanded: rotate at the converters' nominal frequency
        self.omega_0 = spec.grid.omega_0 if spec.grid is not None else float(self.omega_base[0])
        self.equivalent = spec.solver_mode == "equivalent-circuit"
        self._ones = np.ones(n)
        # FRT overrides belong to the saturation-informed law only
        self._sat_cfgs = [c.saturated_config() if inf else c
                          for c, inf in zip(spec.converters, self.informed)]
        self._params: dict[tuple[int, ...], _LawParams] = {}
        self._warm = None
        self.network = spec.network
        self.grid = spec.grid
        self._rebuild()

    # -- network ----------------------------------------------------------
    def _rebuild(self):
        red = reduce_to_terminals(self.network, self.spec.terminals, self.spec.grid_node)
        self.solver = TerminalSolver(red)
        self._warm = None

    def apply(self, event: FaultEvent):
        self.network, self.grid = apply_event(self.network, event, self.grid)
        if event.kind != "grid-voltage-step":
            self._rebuild()

    def params(self, modes: np.ndarray) -> _LawParams:
        key = tuple(modes.tolist())
        p = self._params.get(key)
        if p is None:
            cfgs = [s if m else c for c, s, m in zip(self.spec.converters, self._sat_cfgs, key)]
            p = _LawParams(cfgs, self.ratings, key, self.informed)
            self._params[key] = p
        return p

    def v_grid(self, t: float) -> complex:
        return self.grid.phasor(t) if self.grid is not None else 0j

    # -- right-hand side --------------------------------------------------
    def evaluate(self, v_hat: np.ndarray, mu_f: np.ndarray, modes: np.ndarray, t: float,
                 p: _LawParams | None = None):
        """Derivatives of ``(v_hat, mu_f)`` plus ``(i_o, v, mu)`` from the
        network solve, with ``i_o`` on the system base."""
        if p is None:
            p = self.params(modes)
        red = self.solver.reduced
        if not p.any_sat:
            i_o = red.y_c @ v_hat
            if self.grid is not None:
                i_o -= red.y_link * self.grid.phasor(t)
            v, mu = v_hat, self._ones
        else:
            try:
                sol = self.solver.solve(v_hat, p.sat, p.z_sys, self.i_lim_sys, mu_f, self.informed,
                                        v_grid=self.v_grid(t), equivalent=self.equivalent,
                                        warm_start=self._warm)
            except SolverError:
                self._warm = None
                raise
            self._warm = sol.i_ref[p.sat]
            i_o, v, mu = sol.i_o, sol.v, sol.mu
        fb = np.where(p.feedback, i_o / mu_f, i_o) if p.any_feedback else i_o
        amp = 1.0 - (v_hat * v_hat.conj()).real * p.inv_vs2
        dv = p.ks * v_hat - p.kr * fb + p.ka * amp * v_hat
        dmu = (mu - mu_f) / self.tau
        return dv, dmu, (i_o, v, mu)

    def supervise(self, v_hat, mu_f, modes, entry, t):
        """One pass of the FRT state machine.

        Returns ``(modes, entry, evaluation)`` where ``evaluation`` is the
        right-hand side under the returned modes.
        """
        ev = self.evaluate(v_hat, mu_f, modes, t)
        i_o, v_term, _ = ev[2]
        new = modes.copy()
        for k in range(self.n):
            if not self.limited[k]:
                continue
            st = ConverterState(complex(v_hat[k]), float(min(mu_f[k], 1.0)), Mode(int(modes[k])),
                                float(entry[k]))
            m = mode_transition(st, complex(v_term[k]), complex(i_o[k] / self.ratings[k]),
                                self.spec.converters[k], t)
            new[k] = int(m)
        changed = new != modes
        if changed.any():
            entry = np.where(changed, t, entry)
            ev = self.evaluate(v_hat, mu_f, new, t)
        return new, entry, ev

    def rk4(self, v_hat, mu_f, modes, t, dt, k1=None):
        p = self.params(modes)
        if k1 is None:
            k1 = self.evaluate(v_hat, mu_f, modes, t, p)[:2]
        h = 0.5 * dt
        k2 = self.evaluate(v_hat + h * k1[0], mu_f + h * k1[1], modes, t + h, p)[:2]
        k3 = self.evaluate(v_hat + h * k2[0], mu_f + h * k2[1], modes, t + h, p)[:2]
        k4 = self.evaluate(v_hat + dt * k3[0], mu_f + dt * k3[1], modes, t + dt, p)[:2]
        c = dt / 6.0
        v_new = v_hat + c * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0])
        mu_new = mu_f + c * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1])
        return v_new, np.minimum(mu_new, 1.0)

    # -- initialization ---------------------------------------------------
    def steady_state(self) -> tuple[np.ndarray, float] | None:
        """Unsaturated operating point ``(v_hat, omega_offset)`` or ``None``.

        Grid-connected: ``dv_hat/dt = -j omega_delta v_hat`` (locked to the
        grid).  Islanded: a common frequency offset is an extra unknown and
        converter 1 fixes the angle reference.
        """
        n = self.n
        modes = np.zeros(n, dtype=int)
        p = self.params(modes)
        ones = self._ones
        islanded = self.grid is None
        w_grid = -self.grid.omega_delta if not islanded else 0.0
        v0 = np.sqrt(1.0 / p.inv_vs2) * (np.exp(1j * self.grid.theta_g) if not islanded else 1.0)

        def law(v):
            dv, _, (i, _, _) = self.evaluate(v, ones, modes, 0.0, p)
            return dv, i

        def unpack(x):
            if islanded:
                v = np.concatenate([[x[0]], x[1:n] + 1j * x[n:2 * n - 1]])
                return v, x[2 * n - 1]
            return x[:n] + 1j * x[n:], w_grid

        def resid(x):
            v, w = unpack(x)
            r = (law(v)[0] - 1j * w * v) / p.k
            return np.concatenate([r.real, r.imag])

        if islanded:
            x0 = np.concatenate([[v0[0].real], v0[1:].real, v0[1:].imag, [0.0]])
        else:
            x0 = np.concatenate([v0.real, v0.imag])
        x, info, ier, _ = fsolve(resid, x0, full_output=True, xtol=1e-13)
        v, w = unpack(x)
        if ier != 1 or np.max(np.abs(resid(x))) > 1e-9:
            return None
        i_own = law(v)[1] / self.ratings
        cfgs = self.spec.converters
        ok = all(abs(i_own[k]) <= cfgs[k].i_lim and abs(v[k]) >= cfgs[k].v_sat
                 for k in range(n) if self.limited[k])
        return (v, float(w)) if ok else None

    def initial_arrays(self):
        n = self.n
        modes = np.zeros(n, dtype=int)
        entry = np.zeros(n)
        mu_f = np.ones(n)
        ss = self.steady_state()
        if ss is not None:
            return ss[0], mu_f, modes, entry, "equilibrium"
        v = np.sqrt(1.0 / self.params(modes).inv_vs2).astype(complex)
        if self.grid is not None:
            v = v * np.exp(1j * self.grid.theta_g)
        n_settle = int(round(self.spec.settle_time / self.spec.dt))
        # settle on a copy of the clock that ends at t = 0
        t = -n_settle * self.spec.dt
        for _ in range(n_settle):
            modes, entry, ev = self.supervise(v, mu_f, modes, entry, t)
            v, mu_f = self.rk4(v, mu_f, modes, t, self.spec.dt, k1=ev[:2])
            t += self.spec.dt
        entry = np.minimum(entry, 0.0)
        return v, mu_f, modes, entry, "flat-start"

    # -- snapshots --------------------------------------------------------
    def snapshot(self, v_hat, mu_f, modes, entry, t, applied) -> SystemState:
        convs = tuple(ConverterState(complex(v_hat[k]), float(mu_f[k]), Mode(int(modes[k])),
                                     float(entry[k])) for k in range(self.n))
        theta = self.grid.angle(t) if self.grid is not None else 0.0
        return SystemState(convs, theta, t, self.network, self.grid, applied)


def _unpack_state(state: SystemState):
    v = np.array([c.v_hat for c in state.converters], dtype=complex)
    mu = np.array([c.mu_f for c in state.converters], dtype=float)
    modes = np.array([int(c.mode) for c in state.converters], dtype=int)
    entry = np.array([c.mode_entry_time for c in state.converters], dtype=float)
    return v, mu, modes, entry


def _event_step(event: FaultEvent, dt: float) -> int:
    return int(math.ceil(event.time / dt - 1e-9))


def initial_state(spec: ScenarioSpec) -> SystemState:
    """Pre-fault state from the unsaturated operating point (flat start and a
    settling run when no such point is found)."""
    sim = Simulator(spec)
    v, mu, modes, entry, _ = sim.initial_arrays()
    return sim.snapshot(v, mu, modes, entry, 0.0, 0)


def step(state: SystemState, spec: ScenarioSpec, simulator: Simulator | None = None) -> SystemState:
    """Advance ``state`` by ``spec.dt``: apply due events, supervise modes,
    integrate one RK4 step."""
    sim = simulator or Simulator(spec)
    if simulator is None or sim.network is not state.network or sim.grid is not state.grid:
        sim.network, sim.grid = state.network, state.grid
        sim._rebuild()
    v, mu, modes, entry = _unpack_state(state)
    t = state.t
    k_now = int(round(t / spec.dt))
    applied = state.events_applied
    try:
        while applied < len(spec.events) and _event_step(spec.events[applied], spec.dt) <= k_now:
            sim.apply(spec.events[applied])
            applied += 1
        modes, entry, ev = sim.supervise(v, mu, modes, entry, t)
        v, mu = sim.rk4(v, mu, modes, t, spec.dt, k1=ev[:2])
    except SolverError as exc:
        raise SolverError(str(exc), exc.residual, exc.iterations, state) from exc
    return sim.snapshot(v, mu, modes, entry, t + spec.dt, applied)


def run(spec: ScenarioSpec, initial: SystemState | None = None) -> tuple[TimeSeriesLog, StabilityVerdict]:
    """Simulate the whole event schedule, log the channels and classify."""
    log = simulate(spec, initial)
    return log, classify(log, spec)


def simulate(spec: ScenarioSpec, initial: SystemState | None = None) -> TimeSeriesLog:
    sim = Simulator(spec)
    if initial is None:
        v, mu, modes, entry, _ = sim.initial_arrays()
    else:
        v, mu, modes, entry = _unpack_state(initial)
    n, dt, N, every = spec.n, spec.dt, spec.n_steps, spec.log_every
    n_log = N // every + 1
    buf = {c: np.empty((n_log, n)) for c in CHANNELS + EXTRA_CHANNELS}
    t_log = np.empty(n_log)
    ev_steps = [_event_step(e, dt) for e in spec.events]
    applied = 0
    row = 0
    t = 0.0
    for k in range(N + 1):
        t = k * dt
        try:
            while applied < len(ev_steps) and ev_steps[applied] <= k:
                sim.apply(spec.events[applied])
                applied += 1
            modes, entry, (dv, dmu, sol) = sim.supervise(v, mu, modes, entry, t)
        except SolverError as exc:
            snap = sim.snapshot(v, mu, modes, entry, t, applied)
            raise SolverError(f"t = {t:.6g} s: {exc}", exc.residual, exc.iterations, snap) from exc
        if k % every == 0:
            theta = sim.grid.angle(t) if sim.grid is not None else float(np.angle(v[0]))
            t_log[row] = t
            buf["vmag"][row] = np.abs(sol[1])
            buf["imag"][row] = np.abs(sol[0]) / sim.ratings
            buf["delta"][row] = np.angle(v) - theta
            buf["mu_f"][row] = mu
            buf["mode"][row] = modes
            buf["freq"][row] = (sim.omega_0 + (dv / v).imag) / sim.omega_base
            buf["vhat"][row] = np.abs(v)
            row += 1
        if k == N:
            break
        try:
            v, mu = sim.rk4(v, mu, modes, t, dt, k1=(dv, dmu))
        except SolverError as exc:
            snap = sim.snapshot(v, mu, modes, entry, t, applied)
            raise SolverError(f"t = {t:.6g} s: {exc}", exc.residual, exc.iterations, snap) from exc
        if not np.all(np.isfinite(v)):
            raise GfmSatError(f"non-finite state at t = {t + dt:.6g} s")
    t_log = t_log[:row]
    buf["delta"] = _unwrap_log(buf["delta"][:row])
    data = {}
    for k in range(n):
        for c in CHANNELS + EXTRA_CHANNELS:
            data[channel_name(k, c)] = buf[c][:row, k].copy()
    final = sim.snapshot(v, mu, modes, entry, t, applied)
    return TimeSeriesLog(t_log, data, n, spec.is_islanded, final)


# --------------------------------------------------------------------------
# Fault-stage measurements

def fault_stage_time(spec: ScenarioSpec) -> float:
    """End of the first fault stage: the second event time, or one second
    after a lone event."""
    if not spec.events:
        raise DomainError("scenario has no events, so there is no fault stage")
    if len(spec.events) >= 2 and spec.events[1].time > spec.events[0].time:
        return spec.events[1].time
    return spec.events[0].time + 1.0


@dataclass(frozen=True)
class FaultStageMeasurement:
    """Operating point of saturation-informed converters at the end of a
    sustained fault stage (used for the stability conditions)."""

    time: float
    v_hat_mu: np.ndarray  # |mu_f v_hat| per converter
    v_mu_star: np.ndarray  # mu_f v* per converter
    voltage_ratio_deviation: float  # max_k | |v_hat|/v* - 1 |
    max_phase_difference: float  # max pairwise wrapped angle difference
    network: NetworkModel
    all_saturated: bool


def measure_fault_stage(spec: ScenarioSpec, at: float | None = None) -> FaultStageMeasurement:
    at = fault_stage_time(spec) if at is None else float(at)
    kept = tuple(e for e in spec.events if e.time < at - 1e-12)
    sub = replace(spec.with_strategy(Strategy.SATURATION_INFORMED), events=kept, t_end=at)
    log = simulate(sub)
    st = log.final_state
    v = np.array([c.v_hat for c in st.converters])
    mu = np.array([c.mu_f for c in st.converters])
    vs = np.array([c.v_star for c in spec.converters])
    ang = np.angle(v)
    diff = np.angle(np.exp(1j * (ang[:, None] - ang[None, :])))
    return FaultStageMeasurement(
        time=at,
        v_hat_mu=np.abs(mu * v),
        v_mu_star=mu * vs,
        voltage_ratio_deviation=float(np.max(np.abs(np.abs(v) / vs - 1.0))),
        max_phase_difference=float(np.max(np.abs(diff))),
        network=st.network,
        all_saturated=all(c.mode == Mode.SATURATED for c in st.converters),
    )
