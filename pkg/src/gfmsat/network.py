"""Nodal network models, Kron reduction, virtual-impedance augmentation,
fault events and the algebraic terminal solve.

Node ordering convention: converter nodes first, the grid node (if any)
last.  :func:`reduce_to_terminals` follows it so that the reduced matrix
has the block form ``[[Y_c, -y], [-y^T, y_g]]``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .core import GridModel, as_phasor
from .errors import (
    AugmentationError,
    DomainError,
    EventError,
    NetworkError,
    ReductionError,
    SolverError,
)

NODE_ROLES = ("converter-internal", "converter-terminal", "load", "grid", "junction")
EVENT_KINDS = ("grid-voltage-step", "shunt-fault-apply", "shunt-fault-clear", "line-trip")
DEFAULT_FAULT_IMPEDANCE = 1e-3

# Above this condition number a block is treated as singular.
_SINGULAR_COND = 1e13


@dataclass(frozen=True)
class Node:
    id: str
    role: str = "junction"

    def __post_init__(self):
        if self.role not in NODE_ROLES:
            raise NetworkError(f"node {self.id!r}: unknown role {self.role!r}")


@dataclass(frozen=True)
class Branch:
    id: str
    from_node: str
    to_node: str
    z: complex

    def __post_init__(self):
        object.__setattr__(self, "z", as_phasor(self.z))
        if self.z == 0:
            raise NetworkError(f"branch {self.id!r} has zero impedance")
        if self.from_node == self.to_node:
            raise NetworkError(f"branch {self.id!r} is a self-loop")


@dataclass(frozen=True)
class Shunt:
    id: str
    node: str
    y: complex

    def __post_init__(self):
        object.__setattr__(self, "y", as_phasor(self.y))


@dataclass(frozen=True)
class NetworkModel:
    nodes: tuple[Node, ...]
    branches: tuple[Branch, ...] = ()
    shunts: tuple[Shunt, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "shunts", tuple(self.shunts))
        ids = [n.id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise NetworkError("duplicate node ids")
        known = set(ids)
        for b in self.branches:
            for end in (b.from_node, b.to_node):
                if end not in known:
                    raise NetworkError(f"branch {b.id!r} references unknown node {end!r}")
        for s in self.shunts:
            if s.node not in known:
                raise NetworkError(f"shunt {s.id!r} references unknown node {s.node!r}")
        for group in (self.branches, self.shunts):
            gids = [x.id for x in group]
            if len(set(gids)) != len(gids):
                raise NetworkError("duplicate branch or shunt ids")

    @property
    def node_ids(self) -> list[str]:
        return [n.id for n in self.nodes]

    def index(self, node_id: str) -> int:
        try:
            return self.node_ids.index(node_id)
        except ValueError:
            raise NetworkError(f"unknown node {node_id!r}") from None

    def nodes_with_role(self, role: str) -> list[str]:
        return [n.id for n in self.nodes if n.role == role]

    def branch(self, branch_id: str) -> Branch:
        for b in self.branches:
            if b.id == branch_id:
                return b
        raise EventError(f"unknown branch {branch_id!r}")


def _check_connected(model: NetworkModel) -> None:
    n = len(model.nodes)
    if n == 0:
        raise NetworkError("network has no nodes")
    if n == 1:
        return
    rows = [model.index(b.from_node) for b in model.branches]
    cols = [model.index(b.to_node) for b in model.branches]
    adj = csr_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    count, labels = connected_components(adj, directed=False)
    if count > 1:
        stray = [nid for nid, lab in zip(model.node_ids, labels) if lab != labels[0]]
        raise NetworkError(f"network is disconnected; unreachable nodes: {stray}")


def build_admittance(model: NetworkModel) -> np.ndarray:
    """Full nodal admittance matrix in ``model.nodes`` order."""
    _check_connected(model)
    n = len(model.nodes)
    Y = np.zeros((n, n), dtype=complex)
    for b in model.branches:
        i, j = model.index(b.from_node), model.index(b.to_node)
        y = 1.0 / b.z
        Y[i, i] += y
        Y[j, j] += y
        Y[i, j] -= y
        Y[j, i] -= y
    for s in model.shunts:
        k = model.index(s.node)
        Y[k, k] += s.y
    return Y


@dataclass(frozen=True, eq=False)
class KronReducedNetwork:
    """Reduced network over converter nodes, optionally plus one grid node.

    With a grid node the full matrix is ``[[y_c, -y_link], [-y_link^T, y_g]]``.
    For islanded networks ``y_link`` is empty, ``y_g`` is 0 and ``y_c`` is
    the whole reduced microgrid matrix.
    """

    y_c: np.ndarray
    y_link: np.ndarray
    y_g: complex
    is_islanded: bool
    node_ids: tuple[str, ...] = ()

    @property
    def n(self) -> int:
        return self.y_c.shape[0]

    @property
    def full(self) -> np.ndarray:
        if self.is_islanded:
            return self.y_c.copy()
        n = self.n
        out = np.empty((n + 1, n + 1), dtype=complex)
        out[:n, :n] = self.y_c
        out[:n, n] = -self.y_link
        out[n, :n] = -self.y_link
        out[n, n] = self.y_g
        return out


def kron_matrix(Y: np.ndarray, retained: Sequence[int], labels: Sequence[str] | None = None) -> np.ndarray:
    """``Y_rr - Y_re Y_ee^-1 Y_er`` for the retained index list (order kept)."""
    Y = np.asarray(Y, dtype=complex)
    retained = list(retained)
    if len(set(retained)) != len(retained):
        raise ReductionError("retained node list contains duplicates")
    elim = [k for k in range(Y.shape[0]) if k not in set(retained)]
    Yrr = Y[np.ix_(retained, retained)]
    if not elim:
        return Yrr.copy()
    Yee = Y[np.ix_(elim, elim)]
    names = [labels[k] for k in elim] if labels is not None else elim
    if not np.all(np.isfinite(Yee)) or np.linalg.cond(Yee) > _SINGULAR_COND:
        raise ReductionError(f"eliminated block is singular for nodes {names}", names)
    Yre = Y[np.ix_(retained, elim)]
    Yer = Y[np.ix_(elim, retained)]
    return Yrr - Yre @ np.linalg.solve(Yee, Yer)


def kron_reduce(Y: np.ndarray, retained: Sequence[int], grid: int | None = None,
                labels: Sequence[str] | None = None) -> KronReducedNetwork:
    """Kron-reduce ``Y`` onto ``retained``; ``grid`` (an index in ``retained``)
    is moved to the last position and split off as the grid block."""
    retained = list(retained)
    if grid is not None:
        if grid not in retained:
            raise ReductionError("grid node must be retained")
        retained = [k for k in retained if k != grid] + [grid]
    Yred = kron_matrix(Y, retained, labels)
    ids = tuple(labels[k] for k in retained) if labels is not None else tuple(str(k) for k in retained)
    if grid is None:
        return KronReducedNetwork(Yred, np.zeros(0, dtype=complex), 0j, True, ids)
    n = len(retained) - 1
    return KronReducedNetwork(Yred[:n, :n], -Yred[:n, n], complex(Yred[n, n]), False, ids)


def reduce_to_terminals(model: NetworkModel, terminals: Sequence[str],
                        grid: str | None = None) -> KronReducedNetwork:
    """Build ``Y`` for ``model`` and keep ``terminals`` (in order) plus ``grid``."""
    Y = build_admittance(model)
    idx = [model.index(t) for t in terminals]
    g = model.index(grid) if grid is not None else None
    keep = idx + ([g] if g is not None else [])
    return kron_reduce(Y, keep, grid=g, labels=model.node_ids)


def augment_with_virtual_impedance(Y_c: np.ndarray, z_v) -> np.ndarray:
    """Admittance seen from the internal nodes behind ``z_v``:
    ``(I + Y_c Z_v)^-1 Y_c`` with ``Z_v = diag(z_v)`` (scalar broadcasts)."""
    Y_c = np.atleast_2d(np.asarray(Y_c, dtype=complex))
    n = Y_c.shape[0]
    zv = np.broadcast_to(np.asarray(z_v, dtype=complex), (n,))
    M = np.eye(n) + Y_c * zv[np.newaxis, :]
    if np.linalg.cond(M) > _SINGULAR_COND:
        raise AugmentationError("I + Y_c z_v is singular")
    return np.linalg.solve(M, Y_c)


# --------------------------------------------------------------------------
# Events

@dataclass(frozen=True)
class FaultEvent:
    kind: str
    time: float
    location: str | None = None
    parameter: complex | float | None = None

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise EventError(f"unknown event kind {self.kind!r}")
        if self.time < 0:
            raise EventError("event times must be nonnegative")


def fault_shunt_id(node: str) -> str:
    return f"fault@{node}"


def apply_event(model: NetworkModel, event: FaultEvent,
                grid: GridModel | None = None) -> tuple[NetworkModel, GridModel | None]:
    """Return the network and grid after ``event``; inputs are not mutated."""
    if event.kind == "grid-voltage-step":
        if grid is None:
            raise EventError("grid-voltage-step on an islanded network")
        return model, grid.with_voltage(float(event.parameter))
    if event.kind == "shunt-fault-apply":
        node = event.location
        if node not in model.node_ids:
            raise EventError(f"fault location {node!r} is not a node")
        sid = fault_shunt_id(node)
        if any(s.id == sid for s in model.shunts):
            raise EventError(f"fault already applied at {node!r}")
        z_f = as_phasor(DEFAULT_FAULT_IMPEDANCE if event.parameter is None else event.parameter)
        if z_f == 0:
            raise EventError("fault impedance must be nonzero")
        return replace(model, shunts=model.shunts + (Shunt(sid, node, 1.0 / z_f),)), grid
    if event.kind == "shunt-fault-clear":
        sid = fault_shunt_id(event.location)
        kept = tuple(s for s in model.shunts if s.id != sid)
        if len(kept) == len(model.shunts):
            raise EventError(f"no fault to clear at {event.location!r}")
        return replace(model, shunts=kept), grid
    # line-trip
    model.branch(event.location)
    return replace(model, branches=tuple(b for b in model.branches if b.id != event.location)), grid


# --------------------------------------------------------------------------
# Terminal solve

@dataclass(frozen=True)
class TerminalSource:
    """Converter as seen by the network.

    ``saturated=False``: ideal voltage source ``v_hat`` at the terminal.
    ``saturated=True``: current ``L((v_hat - v / feedback) / z_v)`` where ``L``
    is the circular limiter at ``i_lim`` and ``feedback`` is ``mu_f`` for the
    saturation-informed law and 1 for the conventional one.  All quantities
    are on the network base.
    """

    v_hat: complex
    saturated: bool = False
    z_v: complex = 0.2
    i_lim: float = math.inf
    mu_f: float = 1.0
    informed: bool = True


@dataclass(frozen=True, eq=False)
class TerminalSolution:
    i_o: np.ndarray
    v: np.ndarray
    i_ref: np.ndarray
    mu: np.ndarray
    iterations: int = 0
    residual: float = 0.0


def _realify(A: np.ndarray) -> np.ndarray:
    """Real 2s x 2s matrix of the complex-linear map ``A`` on ``[re; im]``."""
    s = A.shape[0]
    R = np.empty((2 * s, 2 * s))
    R[:s, :s] = A.real
    R[:s, s:] = -A.imag
    R[s:, :s] = A.imag
    R[s:, s:] = A.real
    return R


class TerminalSolver:
    """Repeated terminal solves on one reduced network.

    Matrices that only depend on which converters are saturated are cached,
    so a solver instance should be reused for as long as the topology is
    unchanged.
    """

    def __init__(self, reduced: KronReducedNetwork, tol: float = 1e-13, max_iter: int = 50,
                 method: str = "newton", damping: float = 0.5):
        if method not in ("newton", "picard"):
            raise ValueError(f"unknown method {method!r}")
        self.reduced = reduced
        self.tol = tol
        self.max_iter = max_iter
        self.method = method
        self.damping = damping
        self._cache: dict[tuple[bool, ...], tuple] = {}

    def _blocks(self, sat: tuple[bool, ...]):
        blk = self._cache.get(sat)
        if blk is None:
            Y = self.reduced.y_c
            mask = np.asarray(sat, dtype=bool)
            S = np.flatnonzero(mask)
            V = np.flatnonzero(~mask)
            Yss = Y[np.ix_(S, S)]
            if np.linalg.cond(Yss) > _SINGULAR_COND:
                raise SolverError("saturated converters see a singular network block "
                                  "(no voltage-forming path)")
            Zss = np.linalg.inv(Yss)
            blk = (S, V, Zss, Y[np.ix_(S, V)], Y[V, :], np.eye(len(S)), np.eye(2 * len(S)))
            self._cache[sat] = blk
        return blk

    def solve(self, v_hat, saturated, z_v, i_lim, mu_f, informed, v_grid: complex = 0j,
              equivalent: bool = False, warm_start=None) -> TerminalSolution:
        v_hat = np.asarray(v_hat, dtype=complex)
        n = v_hat.shape[0]
        sat = tuple(np.asarray(saturated, dtype=bool).tolist())
        red = self.reduced
        if red.is_islanded:
            grid_inj = np.zeros(n, dtype=complex)
        else:
            grid_inj = red.y_link * v_grid
        mu = np.ones(n)
        if not any(sat):
            i_o = red.y_c @ v_hat - grid_inj
            return TerminalSolution(i_o, v_hat.copy(), i_o.copy(), mu)

        S, V, Zss, Ysv, Yv, eye, eye2 = self._blocks(sat)
        z = np.asarray(z_v, dtype=complex)[S]
        lim = np.asarray(i_lim, dtype=float)[S]
        muf = np.asarray(mu_f, dtype=float)[S]
        if np.any(muf <= 0):
            raise DomainError("mu_f must be positive")
        inf_s = np.asarray(informed, dtype=bool)[S]
        m = np.where(inf_s, muf, 1.0)
        vh = v_hat[S]
        w = -Zss @ (Ysv @ v_hat[V] - grid_inj[S])

        iters = 0
        resid = 0.0
        if equivalent:
            # informed: (mu_f v_hat - v)/z_v ; conventional: mu_f (v_hat - v)/z_v
            c = np.where(inf_s, 1.0 / z, muf / z)
            e = np.where(inf_s, muf * vh, vh)
            i_s = np.linalg.solve(eye + c[:, None] * Zss, c * (e - w))
            v_s = Zss @ i_s + w
            x = (vh - v_s / m) / z
        else:
            D = 1.0 / (m * z)
            A = D[:, None] * Zss
            b = (vh - w / m) / z
            if warm_start is not None and len(warm_start) == len(S):
                x = np.array(warm_start, dtype=complex)
            else:
                x = np.linalg.solve(eye + A, b)
            try:
                x, iters, resid = self._iterate(x, A, b, lim, eye2)
            except SolverError:
                if self.method != "newton":
                    raise
                x, iters, resid = self._continuation(A, b, lim, eye2)
            i_s = _limit(x, lim)
            v_s = Zss @ i_s + w

        mag = np.abs(x)
        mu_s = np.where(mag > lim, lim / np.where(mag > 0, mag, 1.0), 1.0)
        v = v_hat.copy()
        v[S] = v_s
        i_o = np.empty(n, dtype=complex)
        i_o[S] = i_s
        i_ref = i_o.copy()
        i_ref[S] = x
        if len(V):
            i_v = Yv @ v - grid_inj[V]
            i_o[V] = i_v
            i_ref[V] = i_v
        mu[S] = mu_s
        return TerminalSolution(i_o, v, i_ref, mu, iters, resid)

    def _iterate(self, x, A, b, lim, eye2=None):
        s = len(x)
        if s == 1 and self.method == "newton":
            return self._iterate_scalar(x, A, b, lim)
        if eye2 is None:
            eye2 = np.eye(2 * s)
        tol = self.tol * (1.0 + float(np.max(np.abs(b))))
        RA = None
        r = x + A @ _limit(x, lim) - b
        resid = float(np.max(np.abs(r)))
        for it in range(self.max_iter):
            if resid <= tol:
                return x, it, resid
            if self.method == "picard":
                x = (1 - self.damping) * x + self.damping * (x - r)
            else:
                if RA is None:
                    RA = _realify(A)
                J = eye2 + RA @ _limit_jacobian(x, lim)
                dx = np.linalg.solve(J, np.concatenate([r.real, r.imag]))
                step = dx[:s] + 1j * dx[s:]
                # Armijo backtracking on |r|^2 keeps the kinked limiter from cycling
                f0 = float(np.vdot(r, r).real)
                lam = 1.0
                while True:
                    x_new = x - lam * step
                    r_new = x_new + A @ _limit(x_new, lim) - b
                    if float(np.vdot(r_new, r_new).real) <= (1.0 - 1e-4 * lam) * f0 or lam < 1e-6:
                        break
                    lam *= 0.5
                x, r = x_new, r_new
                resid = float(np.max(np.abs(r)))
                continue
            r = x + A @ _limit(x, lim) - b
            resid = float(np.max(np.abs(r)))
        if resid <= tol:
            return x, self.max_iter, resid
        raise SolverError(f"terminal solve did not converge after {self.max_iter} iterations "
                          f"(residual {resid:.3e})", residual=resid, iterations=self.max_iter)

    def _iterate_scalar(self, x, A, b, lim):
        """One saturated converter: the same semi-smooth Newton iteration on
        plain Python numbers, which avoids per-call array overhead."""
        a, bb, L = complex(A[0, 0]), complex(b[0]), float(lim[0])
        z = complex(x[0])
        tol = self.tol * (1.0 + abs(bb))

        def res(z):
            m = abs(z)
            return z + a * (z * (L / m) if m > L else z) - bb

        r = res(z)
        resid = max(abs(r.real), abs(r.imag))
        for it in range(self.max_iter):
            if resid <= tol:
                return np.array([z]), it, resid
            m = abs(z)
            if m > L:
                sc = L / m
                ur, ui = z.real / m, z.imag / m
                d11, d22, d12 = sc * (1 - ur * ur), sc * (1 - ui * ui), -sc * ur * ui
            else:
                d11, d22, d12 = 1.0, 1.0, 0.0
            # J = I + [[ar, -ai], [ai, ar]] @ [[d11, d12], [d12, d22]]
            j11 = 1 + a.real * d11 - a.imag * d12
            j12 = a.real * d12 - a.imag * d22
            j21 = a.imag * d11 + a.real * d12
            j22 = 1 + a.imag * d12 + a.real * d22
            det = j11 * j22 - j12 * j21
            if det == 0.0:
                break
            step = complex((j22 * r.real - j12 * r.imag) / det, (j11 * r.imag - j21 * r.real) / det)
            f0 = r.real * r.real + r.imag * r.imag
            lam = 1.0
            while True:
                z_new = z - lam * step
                r_new = res(z_new)
                if (r_new.real * r_new.real + r_new.imag * r_new.imag <= (1.0 - 1e-4 * lam) * f0
                        or lam < 1e-6):
                    break
                lam *= 0.5
            z, r = z_new, r_new
            resid = max(abs(r.real), abs(r.imag))
        if resid <= tol:
            return np.array([z]), self.max_iter, resid
        raise SolverError(f"terminal solve did not converge after {self.max_iter} iterations "
                          f"(residual {resid:.3e})", residual=resid, iterations=self.max_iter)

    def _continuation(self, A, b, lim, eye2, stages: int = 64):
        """Track ``x + lam A L(x) = b`` from ``lam = 0`` (where ``x = b``) up
        to ``lam = 1``; a fallback for starts where plain Newton stalls."""
        x = b.copy()
        total = 0
        for lam in np.linspace(0.0, 1.0, stages + 1)[1:]:
            x, it, resid = self._iterate(x, lam * A, b, lim, eye2)
            total += it
        return x, total, resid


def _limit(x: np.ndarray, lim: np.ndarray) -> np.ndarray:
    mag = np.abs(x)
    return np.where(mag > lim, x * (lim / np.maximum(mag, 1e-300)), x)


def _limit_jacobian(x: np.ndarray, lim: np.ndarray) -> np.ndarray:
    """Real Jacobian of the circular limiter on ``[re; im]`` coordinates.

    A clamped entry maps to ``(lim/|x|) (I - u u^T)`` with ``u = x/|x|``.
    """
    s = len(x)
    a = np.abs(x)
    clamp = a > lim
    scale = np.where(clamp, lim / np.maximum(a, 1e-300), 1.0)
    ur = np.where(clamp, x.real / np.maximum(a, 1e-300), 0.0)
    ui = np.where(clamp, x.imag / np.maximum(a, 1e-300), 0.0)
    J = np.zeros((2 * s, 2 * s))
    k = np.arange(s)
    J[k, k] = scale * (1.0 - ur * ur)
    J[s + k, s + k] = scale * (1.0 - ui * ui)
    J[k, s + k] = -scale * ur * ui
    J[s + k, k] = -scale * ur * ui
    return J


def solve_terminal(reduced: KronReducedNetwork, sources: Sequence[TerminalSource],
                   v_grid: complex | None = None, *, equivalent: bool = False,
                   warm_start=None, tol: float = 1e-13, max_iter: int = 50,
                   method: str = "newton") -> TerminalSolution:
    """Output currents and terminal voltages for the given converter sources.

    In exact-limiter mode (default) saturated converters inject the memoryless
    limiter output, solved self-consistently with the network.  With
    ``equivalent=True`` they are replaced by linear sources behind ``z_v``.
    """
    if len(sources) != reduced.n:
        raise ValueError(f"expected {reduced.n} sources, got {len(sources)}")
    for s in sources:
        if s.saturated and not s.mu_f > 0:
            raise DomainError("mu_f must be positive")
    solver = TerminalSolver(reduced, tol=tol, max_iter=max_iter, method=method)
    return solver.solve(
        [s.v_hat for s in sources],
        [s.saturated for s in sources],
        [s.z_v for s in sources],
        [s.i_lim for s in sources],
        [s.mu_f for s in sources],
        [s.informed for s in sources],
        v_grid=0j if v_grid is None else complex(v_grid),
        equivalent=equivalent,
        warm_start=warm_start,
    )
