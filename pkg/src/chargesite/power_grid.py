"""AC power flow and the EV grid-impact metric.

Polar Newton-Raphson on the bus power mismatch equations

    P_i = sum_k |v_i||v_k| (G_ik cos(d_i - d_k) + B_ik sin(d_i - d_k))
    Q_i = sum_k |v_i||v_k| (G_ik sin(d_i - d_k) - B_ik cos(d_i - d_k))

with the Jacobian built from complex derivatives of S = V conj(Y V).
Powers in the public API are MW/MVAr; the solver works in per unit on the
case's MVA base. Systems here are at most a few hundred buses, so dense
linear algebra is used throughout.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigError, DimensionMismatch, DomainError, NonConvergence, QLimitViolation, SingularBranch

SLACK, PV, PQ = "slack", "PV", "PQ"

TOLERANCE = 1e-8
MAX_ITER = 50


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    pd: float = 0.0  # MW
    qd: float = 0.0  # MVAr
    gs: float = 0.0  # MW consumed at 1 p.u.
    bs: float = 0.0  # MVAr injected at 1 p.u.
    vm: float = 1.0  # p.u. setpoint / initial guess


@dataclass(frozen=True)
class Branch:
    f: int
    t: int
    r: float
    x: float
    b: float = 0.0  # total line charging, p.u.
    tap: float = 1.0
    shift_deg: float = 0.0


@dataclass(frozen=True)
class Generator:
    bus: int
    pg: float = 0.0  # MW schedule (ignored at the slack)
    qg: float = 0.0
    vg: float = 1.0
    qmax: float | None = None
    qmin: float | None = None
    participation: float | None = None


@dataclass
class PowerSystem:
    buses: list
    branches: list
    generators: list
    base_mva: float = 100.0
    name: str = ""
    _index: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        self._index = {}
        for i, bus in enumerate(self.buses):
            if bus.id in self._index:
                raise ConfigError(f"duplicate bus id {bus.id}")
            if bus.kind not in (SLACK, PV, PQ):
                raise ConfigError(f"bus {bus.id}: unknown kind {bus.kind!r}")
            self._index[bus.id] = i
        slacks = [b.id for b in self.buses if b.kind == SLACK]
        if len(slacks) != 1:
            raise ConfigError(f"exactly one slack bus required, found {len(slacks)}")
        for br in self.branches:
            if br.f not in self._index or br.t not in self._index:
                raise ConfigError(f"branch {br.f}-{br.t} references an unknown bus")
        for g in self.generators:
            if g.bus not in self._index:
                raise ConfigError(f"generator at unknown bus {g.bus}")
        gen_buses = {g.bus for g in self.generators}
        for bus in self.buses:
            if bus.kind != PQ and bus.id not in gen_buses:
                raise ConfigError(f"{bus.kind} bus {bus.id} has no generator")
        parts = [g.participation for g in self.generators if g.participation is not None]
        if parts:
            if len(parts) != len(self.generators) or any(p < 0 for p in parts):
                raise ConfigError("participation factors must be given for all generators and be >= 0")
            if abs(sum(parts) - 1.0) > 1e-9:
                raise ConfigError("participation factors must sum to 1")

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def index(self, bus_id) -> int:
        try:
            return self._index[bus_id]
        except KeyError:
            raise ConfigError(f"unknown bus {bus_id}") from None

    @property
    def slack_index(self) -> int:
        return next(i for i, b in enumerate(self.buses) if b.kind == SLACK)

    def participation(self) -> np.ndarray:
        """Share of an EV load increase taken by each generator.

        Explicit factors are used when given; otherwise the increase is split
        evenly over non-slack generators, falling back to the slack.
        """
        if self.generators and self.generators[0].participation is not None:
            return np.array([g.participation for g in self.generators], dtype=float)
        slack_id = self.buses[self.slack_index].id
        mask = np.array([g.bus != slack_id for g in self.generators])
        if not mask.any():
            mask = ~mask
        return mask / mask.sum()


@dataclass
class PowerFlowSolution:
    vm: np.ndarray
    va: np.ndarray  # rad, slack = 0
    pg: np.ndarray  # MW per generator
    qg: np.ndarray  # MVAr per generator
    p_injection: np.ndarray  # MW per bus
    q_injection: np.ndarray
    iterations: int
    mismatch: float  # infinity norm, p.u.
    q_violations: list = field(default_factory=list)  # generator indices
    losses_mw: float = 0.0

    @property
    def angle_differences(self) -> np.ndarray:
        return self.va[:, None] - self.va[None, :]


@dataclass
class ImpactResult:
    pg_base: np.ndarray
    pg_ev: np.ndarray
    qg_base: np.ndarray
    qg_ev: np.ndarray
    value: float


def build_admittance(sys: PowerSystem) -> np.ndarray:
    """Bus admittance matrix with pi-model branches, taps and bus shunts."""
    n = sys.n_bus
    y = np.zeros((n, n), dtype=complex)
    for br in sys.branches:
        if br.r == 0 and br.x == 0:
            raise SingularBranch(f"branch {br.f}-{br.t} has zero impedance")
        ys = 1.0 / complex(br.r, br.x)
        tap = (br.tap or 1.0) * np.exp(1j * math.radians(br.shift_deg))
        f, t = sys.index(br.f), sys.index(br.t)
        ytt = ys + 0.5j * br.b
        y[f, f] += ytt / (tap * np.conj(tap))
        y[t, t] += ytt
        y[f, t] += -ys / np.conj(tap)
        y[t, f] += -ys / tap
    for i, bus in enumerate(sys.buses):
        y[i, i] += complex(bus.gs, bus.bs) / sys.base_mva
    return y


def _power_jacobian(ybus, v):
    """dS/dVa and dS/dVm for S = V conj(Y V)."""
    i = ybus @ v
    vn = v / np.abs(v)
    diag_v = np.diag(v)
    ds_dvm = diag_v @ np.conj(ybus @ np.diag(vn)) + np.diag(np.conj(i) * vn)
    ds_dva = 1j * diag_v @ np.conj(np.diag(i) - ybus @ diag_v)
    return ds_dva, ds_dvm


def _newton(ybus, v, s_spec, pvpq, pq, tol, max_iter):
    mis = v * np.conj(ybus @ v) - s_spec
    f = np.r_[mis[pvpq].real, mis[pq].imag]
    norm = np.max(np.abs(f)) if f.size else 0.0
    it = 0
    npvpq = len(pvpq)
    while norm > tol:
        if it >= max_iter:
            raise NonConvergence(f"power flow did not converge in {max_iter} iterations (mismatch {norm:.3e})")
        it += 1
        ds_dva, ds_dvm = _power_jacobian(ybus, v)
        jac = np.block([
            [ds_dva[np.ix_(pvpq, pvpq)].real, ds_dvm[np.ix_(pvpq, pq)].real],
            [ds_dva[np.ix_(pq, pvpq)].imag, ds_dvm[np.ix_(pq, pq)].imag],
        ])
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError as exc:
            raise NonConvergence(f"singular Jacobian: {exc}") from exc
        va, vm = np.angle(v), np.abs(v)
        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:]
        v = vm * np.exp(1j * va)
        mis = v * np.conj(ybus @ v) - s_spec
        f = np.r_[mis[pvpq].real, mis[pq].imag]
        norm = np.max(np.abs(f)) if f.size else 0.0
        if not np.isfinite(norm):
            raise NonConvergence("power flow diverged")
    return v, it, norm


def _as_bus_vector(sys: PowerSystem, load) -> np.ndarray:
    out = np.zeros(sys.n_bus)
    if load is None:
        return out
    if isinstance(load, Mapping):
        for bus_id, value in load.items():
            out[sys.index(bus_id)] += float(value)
        return out
    arr = np.asarray(load, dtype=float)
    if arr.shape != (sys.n_bus,):
        raise DimensionMismatch(f"expected {sys.n_bus} bus values, got shape {arr.shape}")
    return arr.copy()


def solve_power_flow(
    sys: PowerSystem,
    extra_p=None,
    extra_q=None,
    *,
    pg=None,
    tol: float = TOLERANCE,
    max_iter: int = MAX_ITER,
    enforce_q_limits: bool = False,
    strict_q_limits: bool = False,
    ybus: np.ndarray | None = None,
) -> PowerFlowSolution:
    """Solve the AC power flow from a flat start.

    Parameters
    ----------
    extra_p, extra_q : mapping bus-id -> MW/MVAr or per-bus array, optional
        Load added on top of the case's base load.
    pg : array, optional
        Generator active-power schedule in MW overriding the case values.
    enforce_q_limits : bool
        Convert PV buses whose generators leave their reactive limits into PQ
        buses held at the limit, and re-solve.
    strict_q_limits : bool
        With enforcement off, raise :class:`QLimitViolation` instead of only
        listing offending generators in ``q_violations``.
    """
    n = sys.n_bus
    ybus = build_admittance(sys) if ybus is None else ybus
    base = sys.base_mva
    pd = np.array([b.pd for b in sys.buses]) + _as_bus_vector(sys, extra_p)
    qd = np.array([b.qd for b in sys.buses]) + _as_bus_vector(sys, extra_q)
    gen_bus = np.array([sys.index(g.bus) for g in sys.generators], dtype=int)
    pg = np.array([g.pg for g in sys.generators], dtype=float) if pg is None else np.asarray(pg, dtype=float)
    kinds = [b.kind for b in sys.buses]
    slack = sys.slack_index

    vm0 = np.ones(n)
    for g, i in zip(sys.generators, gen_bus):
        if kinds[i] != PQ:
            vm0[i] = g.vg
    fixed_q = np.zeros(n)  # reactive injection of PV buses converted to PQ
    total_iter = 0
    while True:
        pv = [i for i in range(n) if kinds[i] == PV]
        pq = [i for i in range(n) if kinds[i] == PQ]
        pvpq = np.array(pv + pq, dtype=int)
        pq = np.array(pq, dtype=int)
        p_gen_bus = np.bincount(gen_bus, weights=pg, minlength=n)
        s_spec = (p_gen_bus - pd + 1j * (fixed_q - qd)) / base
        v0 = vm0.astype(complex)
        v, it, norm = _newton(ybus, v0, s_spec, pvpq, pq, tol, max_iter)
        total_iter += it
        sol = _finish(sys, ybus, v, pd, qd, pg, gen_bus, slack, total_iter, norm)
        if not sol.q_violations:
            return sol
        if enforce_q_limits:
            converted = False
            for gi in sol.q_violations:
                i = gen_bus[gi]
                if kinds[i] != PV:
                    continue
                g = sys.generators[gi]
                q_at_bus = g.qmax if sol.qg[gi] > g.qmax else g.qmin
                kinds[i] = PQ
                fixed_q[i] = q_at_bus
                converted = True
            if converted:
                continue
            return sol
        if strict_q_limits:
            raise QLimitViolation(f"generators {sol.q_violations} outside reactive limits")
        return sol


def _finish(sys, ybus, v, pd, qd, pg, gen_bus, slack, iterations, norm) -> PowerFlowSolution:
    base = sys.base_mva
    s_inj = v * np.conj(ybus @ v) * base
    pg = pg.copy()
    slack_gens = np.flatnonzero(gen_bus == slack)
    # generators at the slack bus share its injection evenly
    pg[slack_gens] = (s_inj[slack].real + pd[slack]) / len(slack_gens)
    qg = np.zeros(len(pg))
    for i in np.unique(gen_bus):
        gens = np.flatnonzero(gen_bus == i)
        qg[gens] = (s_inj[i].imag + qd[i]) / len(gens)
    violations = []
    for gi, g in enumerate(sys.generators):
        hi = g.qmax if g.qmax is not None else math.inf
        lo = g.qmin if g.qmin is not None else -math.inf
        # only PV units can be held at a limit; the slack is left unchecked
        if sys.buses[gen_bus[gi]].kind == PV and not lo - 1e-9 <= qg[gi] <= hi + 1e-9:
            violations.append(gi)
    vm = np.abs(v)
    # net injections sum to branch losses plus shunt conductance consumption
    losses = float(np.sum(s_inj.real) - np.sum([b.gs for b in sys.buses] * vm**2))
    return PowerFlowSolution(
        vm=np.abs(v),
        va=np.angle(v) - np.angle(v[slack]),
        pg=pg,
        qg=qg,
        p_injection=s_inj.real,
        q_injection=s_inj.imag,
        iterations=iterations,
        mismatch=float(norm),
        q_violations=violations,
        losses_mw=losses,
    )


def branch_flows(sys: PowerSystem, sol: PowerFlowSolution) -> tuple[np.ndarray, np.ndarray]:
    """Complex power (MVA) entering each branch at its from- and to-end."""
    v = sol.vm * np.exp(1j * sol.va)
    s_from = np.zeros(len(sys.branches), dtype=complex)
    s_to = np.zeros(len(sys.branches), dtype=complex)
    for n, br in enumerate(sys.branches):
        ys = 1.0 / complex(br.r, br.x)
        tap = (br.tap or 1.0) * np.exp(1j * math.radians(br.shift_deg))
        ytt = ys + 0.5j * br.b
        f, t = sys.index(br.f), sys.index(br.t)
        i_f = ytt / (tap * np.conj(tap)) * v[f] - ys / np.conj(tap) * v[t]
        i_t = -ys / tap * v[f] + ytt * v[t]
        s_from[n] = v[f] * np.conj(i_f) * sys.base_mva
        s_to[n] = v[t] * np.conj(i_t) * sys.base_mva
    return s_from, s_to


def branch_losses(sys: PowerSystem, sol: PowerFlowSolution) -> float:
    """Active losses in MW summed over branches."""
    s_from, s_to = branch_flows(sys, sol)
    return float(np.sum((s_from + s_to).real))


def ev_reactive(p_mw, power_factor: float = 0.98):
    if not 0 < power_factor <= 1:
        raise DomainError("power factor must lie in (0, 1]")
    return np.asarray(p_mw, dtype=float) * math.tan(math.acos(power_factor))


def dispatch_with_ev(
    sys: PowerSystem,
    ev_load,
    power_factor: float = 0.98,
    base: PowerFlowSolution | None = None,
    **solver_kw,
) -> tuple[PowerFlowSolution, PowerFlowSolution]:
    """Solve the base case and the case with EV charging load superposed.

    The EV active-power total is shared among generators by participation
    factor before solving; the slack bus picks up its own share plus the
    change in losses. ``base`` may be passed to reuse an earlier base solve.
    """
    ev_p = _as_bus_vector(sys, ev_load)
    if np.any(ev_p < 0):
        raise DomainError("EV load must be non-negative")
    for i in np.flatnonzero(ev_p):
        if sys.buses[i].kind != PQ:
            raise DomainError(f"EV load placed at non-PQ bus {sys.buses[i].id}")
    if base is None:
        base = solve_power_flow(sys, **solver_kw)
    if not np.any(ev_p):
        return base, base
    pg = np.array([g.pg for g in sys.generators], dtype=float) + sys.participation() * ev_p.sum()
    ev = solve_power_flow(sys, ev_p, ev_reactive(ev_p, power_factor), pg=pg, **solver_kw)
    return base, ev


def impact_metric(base, ev, per_unit: bool = False, base_mva: float = 100.0) -> ImpactResult:
    """Squared 2-norm change of generator P and Q between two dispatches.

    Accepts :class:`PowerFlowSolution` objects or ``(pg, qg)`` array pairs.
    Raw units are MW^2 + MVAr^2; ``per_unit`` divides by the MVA base first.
    """
    pg_b, qg_b = _pq(base)
    pg_e, qg_e = _pq(ev)
    if pg_b.shape != pg_e.shape or qg_b.shape != qg_e.shape or pg_b.shape != qg_b.shape:
        raise DimensionMismatch("generator sets of base and EV dispatch differ")
    scale = 1.0 / base_mva if per_unit else 1.0
    dp = (pg_b - pg_e) * scale
    dq = (qg_b - qg_e) * scale
    value = float(dp @ dp + dq @ dq)
    return ImpactResult(pg_b, pg_e, qg_b, qg_e, value)


def _pq(sol):
    if isinstance(sol, PowerFlowSolution):
        return np.asarray(sol.pg, dtype=float), np.asarray(sol.qg, dtype=float)
    pg, qg = sol
    return np.atleast_1d(np.asarray(pg, dtype=float)), np.atleast_1d(np.asarray(qg, dtype=float))


def system_from_dict(raw: dict) -> PowerSystem:
    try:
        buses = [
            Bus(int(b["id"]), b["kind"], float(b.get("pd", 0)), float(b.get("qd", 0)),
                float(b.get("gs", 0)), float(b.get("bs", 0)), float(b.get("vm", 1.0)))
            for b in raw["buses"]
        ]
        branches = [
            Branch(int(r["from"]), int(r["to"]), float(r["r"]), float(r["x"]), float(r.get("b", 0)),
                   float(r.get("tap", 1.0) or 1.0), float(r.get("shift_deg", 0.0)))
            for r in raw["branches"]
        ]
        gens = [
            Generator(int(g["bus"]), float(g.get("pg", 0)), float(g.get("qg", 0)), float(g.get("vg", 1.0)),
                      g.get("qmax"), g.get("qmin"), g.get("participation"))
            for g in raw["generators"]
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed grid case: {exc}") from exc
    return PowerSystem(buses, branches, gens, float(raw.get("base_mva", 100.0)), raw.get("name", ""))


BUNDLED_CASES = ("ieee14", "ieee118")


def load_case(name_or_path: str | Path) -> PowerSystem:
    """Load a bundled case (``"ieee14"``, ``"ieee118"``) or a JSON case file."""
    if str(name_or_path) in BUNDLED_CASES:
        text = resources.files("chargesite.data").joinpath(f"{name_or_path}.json").read_text()
    else:
        try:
            text = Path(name_or_path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read grid case {name_or_path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except ValueError as exc:
        raise ConfigError(f"grid case is not valid JSON: {exc}") from exc
    return system_from_dict(raw)


def with_participation(sys: PowerSystem, factors: Sequence[float]) -> PowerSystem:
    gens = [replace(g, participation=float(a)) for g, a in zip(sys.generators, factors, strict=True)]
    return PowerSystem(sys.buses, sys.branches, gens, sys.base_mva, sys.name)
