"""Model assembly: turns a grid case plus runtime state into embedding systems.

The same device equations are emitted in three flavors:

* time-embedded dynamic segments (machines, AVRs, governors, AGC, motors),
* time-embedded QSS segments (machines collapsed to PV buses with droop and
  AGC dispatch integrators, motor slip algebraic),
* alpha-embedded algebraic problems (initial power flow and the switch
  kinds), where differential states are frozen across the instant.

Everything is rectangular: a complex network quantity is a pair of real
unknowns, conjugation is a sign flip, and the reciprocal voltage W carries
its own defining equations V*W = 1 wherever constant-power or
constant-current injections need it.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .engine import (
    ALPHA_ADD,
    ALPHA_CUT,
    ALPHA_PARAM,
    ALPHA_POWERFLOW,
    SystemBuilder,
    solve_alpha_problem,
)
from .errors import (
    DimensionMismatch,
    IslandWithoutGeneration,
    NoConvergenceAtAlpha1,
    PowerFlowInfeasible,
    ZeroBoundaryVoltage,
)
from .grid import (
    DYN4,
    SOURCE,
    GenSpec,
    GridCase,
    LoadSpec,
    build_admittance,
    machine_injection,
    motor_circuit,
    motor_equilibrium_slip,
)

DYNAMIC = "dynamic"
QSS = "qss"

MOTOR_START_SLIP = 0.98   # anchor slip for a freshly added (starting) motor
DEAD_VOLTAGE = 1e-6       # below this a boundary bus counts as de-energized


# --------------------------------------------------------------------------
# runtime state
# --------------------------------------------------------------------------


@dataclass
class MachineState:
    delta: float = 0.0
    omega: float = 0.0
    eps_q: float = 1.0
    eps_d: float = 0.0
    avr: float = 1.0      # exciter output E_fd
    gov: float = 0.0      # governor lag state
    agc: float = 0.0      # AGC correction to the dispatch reference
    v_ref: float = 1.0
    p_disp: float = 0.0   # dispatch reference base (ramps add on top)
    # QSS-side quantities (valid while the machine is represented as PV)
    q_g: float = 0.0
    v_set: float = 1.0
    q_fixed: Optional[float] = None


@dataclass
class Ramp:
    target: str          # "load:<id>" or "gen:<id>"
    rate: float
    t_start: float


@dataclass
class Island:
    index: int
    buses: list
    sources: list        # online source gens
    machines: list       # online dyn4 gens
    ref_gen: Optional[str]

    @property
    def energized(self) -> bool:
        return bool(self.sources or self.machines)


@dataclass
class SystemState:
    case: GridCase
    t: float = 0.0
    mode: str = DYNAMIC
    v: np.ndarray = None
    energized: np.ndarray = None
    branch_online: set = field(default_factory=set)
    gen_online: set = field(default_factory=set)
    load_online: set = field(default_factory=set)
    mach: dict = field(default_factory=dict)          # gen_id -> MachineState
    slip: dict = field(default_factory=dict)          # load_id -> float
    df: dict = field(default_factory=dict)            # island idx -> Hz
    load_scale: dict = field(default_factory=dict)    # load_id -> base scale
    ramps: list = field(default_factory=list)
    extra_shunts: dict = field(default_factory=dict)  # bus -> admittance
    branch_overrides: dict = field(default_factory=dict)  # id -> (r, x, b)
    islands: list = field(default_factory=list)
    island_of: dict = field(default_factory=dict)
    epoch: int = 0
    last_dyn_entry: float = 0.0

    def bump(self) -> None:
        self.epoch += 1

    def scale_now(self, load_id: str, t: Optional[float] = None) -> float:
        t = self.t if t is None else t
        s = self.load_scale[load_id]
        for r in self.ramps:
            if r.target == f"load:{load_id}":
                s += r.rate * (t - r.t_start)
        return s

    def scale_rate(self, load_id: str) -> float:
        return sum(r.rate for r in self.ramps if r.target == f"load:{load_id}")

    def pdisp_now(self, gen_id: str, t: Optional[float] = None) -> float:
        t = self.t if t is None else t
        p = self.mach[gen_id].p_disp
        for r in self.ramps:
            if r.target == f"gen:{gen_id}":
                p += r.rate * (t - r.t_start)
        return p

    def pdisp_rate(self, gen_id: str) -> float:
        return sum(r.rate for r in self.ramps if r.target == f"gen:{gen_id}")


def fresh_state(case: GridCase) -> SystemState:
    st = SystemState(case)
    st.v = np.array([b.v_init * cmath.exp(1j * b.angle_init)
                     for b in case.buses], dtype=complex)
    st.energized = np.ones(case.n_bus, dtype=bool)
    st.branch_online = {b.branch_id for b in case.branches if b.status}
    st.gen_online = {g.gen_id for g in case.gens if g.status}
    st.load_online = {l.load_id for l in case.loads if l.status}
    st.load_scale = {l.load_id: l.scale for l in case.loads}
    for l in case.loads:
        if l.motor is not None and l.load_id in st.load_online:
            st.slip[l.load_id] = 0.02
    return st


def refresh_islands(case: GridCase, state: SystemState) -> list:
    """Recompute connected components; collapse islands without sources.

    Returns a log of collapsed element ids.
    """
    import scipy.sparse as sp
    from scipy.sparse.csgraph import connected_components

    n = case.n_bus
    rows, cols = [], []
    for br in case.branches:
        if br.branch_id in state.branch_online:
            i, j = case.bus_index[br.from_bus], case.bus_index[br.to_bus]
            rows += [i, j]
            cols += [j, i]
    adj = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    n_comp, labels = connected_components(adj, directed=False)

    collapsed: list = []
    islands: list = []
    island_of: dict = {}
    for c in range(n_comp):
        buses = sorted(case.buses[i].bus for i in range(n) if labels[i] == c)
        sources = [g.gen_id for g in case.gens
                   if g.bus in buses and g.kind == SOURCE
                   and g.gen_id in state.gen_online]
        machines = [g.gen_id for g in case.gens
                    if g.bus in buses and g.kind == DYN4
                    and g.gen_id in state.gen_online]
        online = sorted(sources + machines,
                        key=lambda gid: (case.gen_by_id[gid].bus, gid))
        isl = Island(index=len(islands), buses=buses, sources=sources,
                     machines=machines, ref_gen=online[0] if online else None)
        if not isl.energized:
            for bus in buses:
                bi = case.bus_index[bus]
                if state.energized[bi]:
                    collapsed.append(f"bus:{bus}")
                state.energized[bi] = False
                state.v[bi] = 0.0
            for g in case.gens:
                if g.bus in buses and g.gen_id in state.gen_online:
                    state.gen_online.discard(g.gen_id)
                    state.mach.pop(g.gen_id, None)
                    collapsed.append(f"gen:{g.gen_id}")
            for l in case.loads:
                if l.bus in buses and l.load_id in state.load_online:
                    state.load_online.discard(l.load_id)
                    state.slip.pop(l.load_id, None)
                    collapsed.append(f"load:{l.load_id}")
        for bus in buses:
            island_of[bus] = isl.index
        islands.append(isl)
    state.islands = islands
    state.island_of = island_of
    state.df = {i: state.df.get(i, 0.0) for i in range(len(islands))}
    return collapsed


def coi_speed(case: GridCase, state: SystemState, island: Island) -> float:
    """Inertia-weighted mean speed deviation (pu) of an island's machines."""
    num = den = 0.0
    for gid in island.machines:
        g = case.gen_by_id[gid]
        num += g.h * state.mach[gid].omega
        den += g.h
    return num / den if den > 0 else 0.0


def island_slack(case: GridCase, isl: Island) -> Optional[GenSpec]:
    if isl.sources:
        return case.gen_by_id[isl.sources[0]]
    if isl.ref_gen is not None:
        return case.gen_by_id[isl.ref_gen]
    return None


def island_flat_voltage(case: GridCase, isl: Island) -> complex:
    g = island_slack(case, isl)
    if g is None:
        raise IslandWithoutGeneration(f"island {isl.index} has no generation")
    sb = case.buses[case.bus_index[g.bus]]
    return g.v_set * cmath.exp(1j * sb.angle_init)


# --------------------------------------------------------------------------
# complex-equation helpers over the term builder
# --------------------------------------------------------------------------


def _clin(b, eqx, eqy, k: complex, xr: int, xi: int,
          conj: bool = False, extra: Optional[int] = None) -> None:
    """Add k*X (or k*conj(X)) to the complex equation (eqx, eqy)."""
    s = -1.0 if conj else 1.0
    for eq, c, f in ((eqx, k.real, xr), (eqx, -k.imag * s, xi),
                     (eqy, k.imag, xr), (eqy, k.real * s, xi)):
        if extra is None:
            b.term(eq, c, f)
        else:
            b.term(eq, c, f, extra)


# --------------------------------------------------------------------------
# build product
# --------------------------------------------------------------------------


@dataclass
class AlphaMods:
    """What the alpha continuation scales, relative to the base system."""
    kind: str = ALPHA_PARAM
    powerflow: bool = False                          # scale everything from no load
    scale_devices: set = field(default_factory=set)  # freshly added devices
    ramp_down_devices: set = field(default_factory=set)  # cut fallback
    cut_equiv: list = field(default_factory=list)    # (bus, y_inj)
    delta_y: list = field(default_factory=list)
    # delta_y entries: ("shunt", bus, y) or ("branch", i, j, y, b_i, b_j)


@dataclass
class Built:
    system: object
    mode: str
    alpha: bool
    anchor_getters: list
    known_specs: list
    islands: list
    monitored_plain: list = field(default_factory=list)
    monitored_angles: dict = field(default_factory=dict)  # gen -> var name
    angle_ref: dict = field(default_factory=dict)         # island -> var name
    bus_v_names: dict = field(default_factory=dict)

    def anchors(self, state: SystemState) -> np.ndarray:
        return np.array([g(state) for g in self.anchor_getters])

    def knowns(self, state: SystemState, t0: float, width: int) -> np.ndarray:
        out = np.zeros((len(self.known_specs), max(width, 1)))
        for i, (_, provider) in enumerate(self.known_specs):
            coeffs = provider(state, t0)
            m = min(width, len(coeffs))
            out[i, :m] = coeffs[:m]
        return out


def _known_alpha(state, t0):
    return np.array([0.0, 1.0])


def _known_one_minus_alpha(state, t0):
    return np.array([1.0, -1.0])


class _Assembler:
    """One build pass; entry point is build_system below."""

    def __init__(self, case, state, mode, mods):
        self.case = case
        self.state = state
        self.mode = mode
        self.mods = mods
        self.alpha = mods is not None
        self.pf = self.alpha and mods.powerflow
        self.b = SystemBuilder()
        self.anchor_getters: list = []
        self.known_specs: list = []
        self.slots: dict = {}
        self.balance: dict = {}

    # -- registration helpers ---------------------------------------------------

    def var(self, name, kind, getter) -> int:
        slot = self.b.alg(name) if kind == "alg" else self.b.state(name)
        self.slots[name] = slot
        self.anchor_getters.append(getter)
        return slot

    def known(self, name, provider) -> int:
        slot = self.b.known(name)
        self.known_specs.append((name, provider))
        return slot

    def needs(self, bus: int):
        """(need_w, need_vm, need_u) for a bus in the current flavor."""
        case, state = self.case, self.state
        need_w = need_vm = need_u = False
        for l in case.loads_at(bus):
            if l.load_id not in state.load_online:
                continue
            if l.f_p > 0 or l.f_i > 0:
                need_w = True
            if l.f_i > 0:
                need_vm = need_u = True
        for g in case.gens_at(bus):
            if g.gen_id not in state.gen_online or g.kind != DYN4:
                continue
            if self.mode == QSS or self.pf:
                need_w = True
            if self.mode == DYNAMIC and not self.pf and not self.alpha:
                need_vm = True  # AVR input; frozen across switch instants
        return need_w, need_vm, need_u

    def flat_or_state_v(self, bus: int, state_obj=None) -> complex:
        st = state_obj if state_obj is not None else self.state
        if self.pf:
            isl = st.islands[st.island_of[bus]]
            return island_flat_voltage(self.case, isl)
        return st.v[self.case.bus_index[bus]]

    # -- the build -----------------------------------------------------------------

    def run(self) -> Built:
        case, state, mods = self.case, self.state, self.mods
        pf = self.pf
        ebuses = [b.bus for b in case.buses
                  if state.energized[case.bus_index[b.bus]]]
        islands = [isl for isl in state.islands if isl.energized]

        alpha_slot = self.known("alpha", _known_alpha) if self.alpha else None
        omalpha_slot = None
        if self.alpha and (mods.cut_equiv or mods.ramp_down_devices):
            omalpha_slot = self.known("one_minus_alpha", _known_one_minus_alpha)
        self.alpha_slot = alpha_slot
        self.omalpha_slot = omalpha_slot

        # slack selection: sources always pin their bus; the powerflow also
        # promotes the reference machine to slack in source-less islands
        slack_gen: dict = {}
        for isl in islands:
            if isl.sources:
                slack_gen[isl.index] = isl.sources[0]
            elif pf:
                if isl.ref_gen is None:
                    raise IslandWithoutGeneration(
                        f"island {isl.index} has no generation")
                slack_gen[isl.index] = isl.ref_gen
        pinned_buses = {case.gen_by_id[g].bus for g in slack_gen.values()}
        for isl in islands:
            for g in isl.sources:
                pinned_buses.add(case.gen_by_id[g].bus)

        # ---- per-bus unknowns ----
        vslots, wslots, vmslots, uslots = {}, {}, {}, {}

        def getter_v(bus, im):
            def get(st, bus=bus, im=im):
                v = self.flat_or_state_v(bus, st)
                return v.imag if im else v.real
            return get

        def getter_w(bus, im):
            def get(st, bus=bus, im=im):
                w = 1.0 / self.flat_or_state_v(bus, st)
                return w.imag if im else w.real
            return get

        def getter_u(bus, im):
            def get(st, bus=bus, im=im):
                v = self.flat_or_state_v(bus, st)
                u = v.conjugate() / abs(v)  # |V| * W
                return u.imag if im else u.real
            return get

        for bus in ebuses:
            vslots[bus] = (self.var(f"vx:{bus}", "alg", getter_v(bus, False)),
                           self.var(f"vy:{bus}", "alg", getter_v(bus, True)))
            need_w, need_vm, need_u = self.needs(bus)
            if need_w:
                wslots[bus] = (self.var(f"wx:{bus}", "alg", getter_w(bus, False)),
                               self.var(f"wy:{bus}", "alg", getter_w(bus, True)))
            if need_vm:
                vmslots[bus] = self.var(
                    f"vm:{bus}", "alg",
                    lambda st, bus=bus: abs(self.flat_or_state_v(bus, st)))
            if need_u:
                uslots[bus] = (self.var(f"ux:{bus}", "alg", getter_u(bus, False)),
                               self.var(f"uy:{bus}", "alg", getter_u(bus, True)))
        self.vslots, self.wslots = vslots, wslots
        self.vmslots, self.uslots = vmslots, uslots

        # ---- balance equations or source pins ----
        for bus in ebuses:
            if bus in pinned_buses:
                g = next(g for g in case.gens_at(bus)
                         if g.gen_id in state.gen_online)
                sb = case.buses[case.bus_index[bus]]
                e = g.v_set * cmath.exp(1j * sb.angle_init)
                eqx = self.b.alg_eq(f"pinx:{bus}")
                eqy = self.b.alg_eq(f"piny:{bus}")
                self.b.term(eqx, 1.0, vslots[bus][0])
                self.b.term(eqx, -e.real)
                self.b.term(eqy, 1.0, vslots[bus][1])
                self.b.term(eqy, -e.imag)
            else:
                self.balance[bus] = (self.b.alg_eq(f"balx:{bus}"),
                                     self.b.alg_eq(f"baly:{bus}"))

        # ---- network terms ----
        ys, ysh = build_admittance(case, state.branch_online,
                                   state.branch_overrides)
        for bus in ebuses:
            if bus not in self.balance:
                continue
            eqx, eqy = self.balance[bus]
            i = case.bus_index[bus]
            for other in ebuses:
                j = case.bus_index[other]
                if ys[i, j] != 0:
                    _clin(self.b, eqx, eqy, -ys[i, j], *vslots[other])
            y0 = ysh[i] + state.extra_shunts.get(bus, 0.0)
            if y0 != 0:
                # charging and shunts scale with alpha in the powerflow so
                # the no-load anchor is the exact flat profile
                _clin(self.b, eqx, eqy, -y0, *vslots[bus],
                      extra=alpha_slot if pf else None)

        if self.alpha:
            for entry in mods.delta_y:
                if entry[0] == "shunt":
                    _, bus, y = entry
                    if bus in self.balance:
                        _clin(self.b, *self.balance[bus], -y, *vslots[bus],
                              extra=alpha_slot)
                else:
                    _, bi_, bj_, y, chg_i, chg_j = entry
                    for a, other, chg in ((bi_, bj_, chg_i), (bj_, bi_, chg_j)):
                        if a not in self.balance:
                            continue
                        eqx, eqy = self.balance[a]
                        _clin(self.b, eqx, eqy, -(y + 0.5j * chg),
                              *vslots[a], extra=alpha_slot)
                        if other in vslots:
                            _clin(self.b, eqx, eqy, y, *vslots[other],
                                  extra=alpha_slot)
            for bus, y_inj in mods.cut_equiv:
                if bus in self.balance:
                    _clin(self.b, *self.balance[bus], y_inj, *vslots[bus],
                          extra=omalpha_slot)

        # ---- W / Vmag / U defining equations ----
        for bus, (wx, wy) in wslots.items():
            vx, vy = vslots[bus]
            ex = self.b.alg_eq(f"wdefx:{bus}")
            ey = self.b.alg_eq(f"wdefy:{bus}")
            self.b.term(ex, 1.0, vx, wx)
            self.b.term(ex, -1.0, vy, wy)
            self.b.term(ex, -1.0)
            self.b.term(ey, 1.0, vx, wy)
            self.b.term(ey, 1.0, vy, wx)
        for bus, vm in vmslots.items():
            vx, vy = vslots[bus]
            eq = self.b.alg_eq(f"vmdef:{bus}")
            self.b.term(eq, 1.0, vm, vm)
            self.b.term(eq, -1.0, vx, vx)
            self.b.term(eq, -1.0, vy, vy)
        for bus, (ux, uy) in uslots.items():
            vm = vmslots[bus]
            wx, wy = wslots[bus]
            ex = self.b.alg_eq(f"udefx:{bus}")
            ey = self.b.alg_eq(f"udefy:{bus}")
            self.b.term(ex, 1.0, ux)
            self.b.term(ex, -1.0, vm, wx)
            self.b.term(ey, 1.0, uy)
            self.b.term(ey, -1.0, vm, wy)

        # ---- loads ----
        for l in case.loads:
            if (l.load_id not in state.load_online
                    or not state.energized[case.bus_index[l.bus]]
                    or l.bus not in self.balance):
                continue
            self._emit_static_load(l)
            if l.motor is not None:
                self._emit_motor(l)

        # ---- generators ----
        monitored_plain: list = []
        monitored_angles: dict = {}
        angle_ref: dict = {}
        mach_emitted: list = []
        for isl in islands:
            for gid in isl.machines:
                if gid == slack_gen.get(isl.index):
                    continue
                g = case.gen_by_id[gid]
                if g.bus not in self.balance:
                    continue
                if pf:
                    self._emit_pv_gen(g, isl)
                elif self.mode == QSS:
                    self._emit_qss_gen(g, isl)
                else:
                    self._emit_machine_vars(g)
                    mach_emitted.append((g, isl))
            if self.mode == DYNAMIC and not self.alpha and isl.machines:
                ref = isl.ref_gen if isl.ref_gen in isl.machines \
                    else isl.machines[0]
                angle_ref[isl.index] = f"delta:{ref}"

        # dynamic machine equations emitted after all slots exist, because
        # the AGC integrator couples to peer machine speeds
        for g, isl in mach_emitted:
            names = self._emit_machine_eqs(g, isl)
            if names is not None:
                monitored_plain += names["plain"]
                monitored_angles[g.gen_id] = names["angle"]

        # ---- QSS island closure ----
        if self.mode == QSS and not pf:
            for isl in islands:
                self._emit_island_frequency(isl, slack_gen)

        sysm = self.b.compile()
        return Built(
            system=sysm, mode=self.mode, alpha=self.alpha,
            anchor_getters=self.anchor_getters, known_specs=self.known_specs,
            islands=islands, monitored_plain=monitored_plain,
            monitored_angles=monitored_angles, angle_ref=angle_ref,
            bus_v_names={bus: (f"vx:{bus}", f"vy:{bus}") for bus in ebuses},
        )

    # -- device emitters ---------------------------------------------------------

    def _load_scale_factor(self, l: LoadSpec):
        """(known slot or None, folded constant) for the static load scale."""
        key = f"load:{l.load_id}"
        if self.alpha:
            lam = self.state.scale_now(l.load_id)
            if key in self.mods.scale_devices or self.pf:
                return self.alpha_slot, lam
            if key in self.mods.ramp_down_devices:
                return self.omalpha_slot, lam
            return None, lam

        def provider(st, t0, lid=l.load_id):
            return np.array([st.scale_now(lid, t0), st.scale_rate(lid)])

        return self.known(f"scale:{l.load_id}", provider), 1.0

    def _emit_static_load(self, l: LoadSpec) -> None:
        eqx, eqy = self.balance[l.bus]
        slot, lam = self._load_scale_factor(l)
        s = complex(l.p, l.q)
        if l.f_z > 0:
            # constant-impedance part: admittance P - jQ at nominal voltage
            _clin(self.b, eqx, eqy, -lam * (s * l.f_z).conjugate(),
                  *self.vslots[l.bus], extra=slot)
        if l.f_p > 0:
            _clin(self.b, eqx, eqy, -lam * (s * l.f_p).conjugate(),
                  *self.wslots[l.bus], conj=True, extra=slot)
        if l.f_i > 0:
            _clin(self.b, eqx, eqy, -lam * (s * l.f_i).conjugate(),
                  *self.uslots[l.bus], conj=True, extra=slot)

    def _emit_motor(self, l: LoadSpec) -> None:
        m = l.motor
        lid = l.load_id
        b = self.b
        key = f"load:{lid}"
        pf = self.pf
        slip0 = self.state.slip.get(lid, 0.02)

        def circuit_anchor(which, im):
            def get(st, which=which, im=im):
                vterm = self.flat_or_state_v(l.bus, st)
                e, i_s, i_r = motor_circuit(m, vterm, st.slip.get(lid, 0.02))
                z = {"e": e, "is": i_s, "ir": i_r}[which]
                return z.imag if im else z.real
            return get

        ex = self.var(f"mex:{lid}", "alg", circuit_anchor("e", False))
        ey = self.var(f"mey:{lid}", "alg", circuit_anchor("e", True))
        isx = self.var(f"misx:{lid}", "alg", circuit_anchor("is", False))
        isy = self.var(f"misy:{lid}", "alg", circuit_anchor("is", True))
        irx = self.var(f"mirx:{lid}", "alg", circuit_anchor("ir", False))
        iry = self.var(f"miry:{lid}", "alg", circuit_anchor("ir", True))

        if self.alpha and not pf:
            slip = None          # frozen across the instant
        elif self.mode == QSS or pf:
            slip = self.var(f"slip:{lid}", "alg",
                            lambda st, lid=lid: st.slip.get(lid, 0.02))
            slip_alg = True
        else:
            slip = self.var(f"slip:{lid}", "state",
                            lambda st, lid=lid: st.slip.get(lid, 0.02))
            slip_alg = False

        vx, vy = self.vslots[l.bus]
        e1x = b.alg_eq(f"mstx:{lid}")
        e1y = b.alg_eq(f"msty:{lid}")
        b.term(e1x, 1.0, vx)
        b.term(e1y, 1.0, vy)
        b.term(e1x, -1.0, ex)
        b.term(e1y, -1.0, ey)
        _clin(b, e1x, e1y, -complex(m.r1, m.x1), isx, isy)

        e2x = b.alg_eq(f"mmagx:{lid}")
        e2y = b.alg_eq(f"mmagy:{lid}")
        b.term(e2x, 1.0, ex)
        b.term(e2y, 1.0, ey)
        _clin(b, e2x, e2y, -1j * m.xm, isx, isy)
        _clin(b, e2x, e2y, 1j * m.xm, irx, iry)

        e3x = b.alg_eq(f"mrotx:{lid}")
        e3y = b.alg_eq(f"mroty:{lid}")
        if slip is None:
            b.term(e3x, slip0, ex)
            b.term(e3y, slip0, ey)
            b.term(e3x, slip0 * m.x2, iry)
            b.term(e3y, -slip0 * m.x2, irx)
        else:
            b.term(e3x, 1.0, slip, ex)
            b.term(e3y, 1.0, slip, ey)
            b.term(e3x, m.x2, slip, iry)
            b.term(e3y, -m.x2, slip, irx)
        b.term(e3x, -m.r2, irx)
        b.term(e3y, -m.r2, iry)

        if slip is not None and slip_alg:
            eq = b.alg_eq(f"mtorq:{lid}")
            b.term(eq, m.torque)
            b.term(eq, -1.0, ex, irx)
            b.term(eq, -1.0, ey, iry)
        elif slip is not None:
            b.rhs_term(slip, m.torque / (2 * m.h))
            b.rhs_term(slip, -1.0 / (2 * m.h), ex, irx)
            b.rhs_term(slip, -1.0 / (2 * m.h), ey, iry)

        eqx, eqy = self.balance[l.bus]
        if self.alpha and (key in self.mods.scale_devices or pf):
            _clin(b, eqx, eqy, -1.0, isx, isy, extra=self.alpha_slot)
        elif self.alpha and key in self.mods.ramp_down_devices:
            _clin(b, eqx, eqy, -1.0, isx, isy, extra=self.omalpha_slot)
        else:
            _clin(b, eqx, eqy, -1.0, isx, isy)

    def _emit_pv_gen(self, g: GenSpec, isl: Island) -> None:
        """Powerflow representation: alpha-scaled P, series reactive unknown,
        PV magnitude blended from the flat profile to the setpoint."""
        b = self.b
        eqx, eqy = self.balance[g.bus]
        wx, wy = self.wslots[g.bus]
        q = self.var(f"qpv:{g.gen_id}", "alg", lambda st: 0.0)
        p = (self.state.pdisp_now(g.gen_id) + self.state.mach[g.gen_id].agc
             if g.gen_id in self.state.mach else g.p_set)
        b.term(eqx, p, self.alpha_slot, wx)
        b.term(eqy, -p, self.alpha_slot, wy)
        b.term(eqx, -1.0, q, wy)
        b.term(eqy, -1.0, q, wx)
        vx, vy = self.vslots[g.bus]
        vsl = abs(island_flat_voltage(self.case, isl))
        eq = b.alg_eq(f"pv:{g.gen_id}")
        b.term(eq, 1.0, vx, vx)
        b.term(eq, 1.0, vy, vy)
        b.term(eq, -vsl * vsl)
        b.term(eq, -(g.v_set ** 2 - vsl * vsl), self.alpha_slot)

    def _emit_machine_vars(self, g: GenSpec) -> None:
        gid = g.gen_id
        bus = g.bus
        case = self.case

        def idq_anchor(im):
            def get(st, im=im):
                m2 = st.mach[gid]
                v = st.v[case.bus_index[bus]]
                s, c = math.sin(m2.delta), math.cos(m2.delta)
                vd = v.real * s - v.imag * c
                vq = v.real * c + v.imag * s
                yg = np.array([[g.ra, -g.xq_t], [g.xd_t, g.ra]])
                idq = np.linalg.solve(yg, [m2.eps_d - vd, m2.eps_q - vq])
                return idq[1] if im else idq[0]
            return get

        if self.alpha:
            self.var(f"id:{gid}", "alg", idq_anchor(False))
            self.var(f"iq:{gid}", "alg", idq_anchor(True))
            return

        mget = lambda attr: (lambda st, a=attr: getattr(st.mach[gid], a))
        self.var(f"delta:{gid}", "state", mget("delta"))
        self.var(f"omega:{gid}", "state", mget("omega"))
        self.var(f"epsq:{gid}", "state", mget("eps_q"))
        self.var(f"epsd:{gid}", "state", mget("eps_d"))
        self.var(f"sind:{gid}", "state",
                 lambda st, gid=gid: math.sin(st.mach[gid].delta))
        self.var(f"cosd:{gid}", "state",
                 lambda st, gid=gid: math.cos(st.mach[gid].delta))
        self.var(f"avr:{gid}", "state", mget("avr"))
        self.var(f"gov:{gid}", "state", mget("gov"))
        self.var(f"agc:{gid}", "state", mget("agc"))
        self.var(f"id:{gid}", "alg", idq_anchor(False))
        self.var(f"iq:{gid}", "alg", idq_anchor(True))

    def _emit_machine_eqs(self, g: GenSpec, isl: Island):
        b = self.b
        gid = g.gen_id
        s_ = self.slots
        eqx, eqy = self.balance[g.bus]
        vx, vy = self.vslots[g.bus]
        i_d, i_q = s_[f"id:{gid}"], s_[f"iq:{gid}"]

        if self.alpha:
            ms = self.state.mach[gid]
            s0, c0 = math.sin(ms.delta), math.cos(ms.delta)
            ed = b.alg_eq(f"statord:{gid}")
            eq_ = b.alg_eq(f"statorq:{gid}")
            b.term(ed, g.ra, i_d)
            b.term(ed, -g.xq_t, i_q)
            b.term(ed, -ms.eps_d)
            b.term(ed, s0, vx)
            b.term(ed, -c0, vy)
            b.term(eq_, g.xd_t, i_d)
            b.term(eq_, g.ra, i_q)
            b.term(eq_, -ms.eps_q)
            b.term(eq_, c0, vx)
            b.term(eq_, s0, vy)
            scale = (self.alpha_slot
                     if f"gen:{gid}" in self.mods.scale_devices else None)
            for eq, (cd, cq) in ((eqx, (s0, c0)), (eqy, (-c0, s0))):
                if scale is None:
                    b.term(eq, cd, i_d)
                    b.term(eq, cq, i_q)
                else:
                    b.term(eq, cd, scale, i_d)
                    b.term(eq, cq, scale, i_q)
            return None

        delta, omega = s_[f"delta:{gid}"], s_[f"omega:{gid}"]
        epsq, epsd = s_[f"epsq:{gid}"], s_[f"epsd:{gid}"]
        sind, cosd = s_[f"sind:{gid}"], s_[f"cosd:{gid}"]
        avr, gov, agc = s_[f"avr:{gid}"], s_[f"gov:{gid}"], s_[f"agc:{gid}"]

        pd_slot = self.known(
            f"pdisp:{gid}",
            lambda st, t0, gid=gid: np.array([st.pdisp_now(gid, t0),
                                              st.pdisp_rate(gid)]))

        w_s = self.case.omega_base
        b.rhs_term(delta, w_s, omega)
        b.rhs_term(sind, w_s, omega, cosd)
        b.rhs_term(cosd, -w_s, omega, sind)

        h2 = 2.0 * g.h
        t21 = g.gov_t2 / g.gov_t1
        b.rhs_term(omega, 1.0 / h2, pd_slot)
        b.rhs_term(omega, 1.0 / h2, agc)
        b.rhs_term(omega, -t21 / (g.gov_r * h2), omega)
        b.rhs_term(omega, (1.0 - t21) / h2, gov)
        b.rhs_term(omega, -g.d / h2, omega)
        b.rhs_term(omega, -1.0 / h2, epsd, i_d)
        b.rhs_term(omega, -1.0 / h2, epsq, i_q)
        b.rhs_term(omega, -(g.xq_t - g.xd_t) / h2, i_d, i_q)

        b.rhs_term(epsq, -1.0 / g.td0_t, epsq)
        b.rhs_term(epsq, -(g.xd - g.xd_t) / g.td0_t, i_d)
        b.rhs_term(epsq, 1.0 / g.td0_t, avr)
        b.rhs_term(epsd, -1.0 / g.tq0_t, epsd)
        b.rhs_term(epsd, (g.xq - g.xq_t) / g.tq0_t, i_q)

        ms = self.state.mach[gid]
        b.rhs_term(avr, g.avr_ka * ms.v_ref / g.avr_ta)
        b.rhs_term(avr, -g.avr_ka / g.avr_ta, self.vmslots[g.bus])
        b.rhs_term(avr, -1.0 / g.avr_ta, avr)

        b.rhs_term(gov, -1.0 / (g.gov_r * g.gov_t1), omega)
        b.rhs_term(gov, -1.0 / g.gov_t1, gov)

        if g.agc_tg > 0 and isl.machines:
            h_tot = sum(self.case.gen_by_id[m].h for m in isl.machines)
            for mid in isl.machines:
                gm = self.case.gen_by_id[mid]
                b.rhs_term(agc,
                           -(self.case.f_nominal / g.agc_tg) * gm.h / h_tot,
                           s_[f"omega:{mid}"])

        ed = b.alg_eq(f"statord:{gid}")
        eq_ = b.alg_eq(f"statorq:{gid}")
        b.term(ed, g.ra, i_d)
        b.term(ed, -g.xq_t, i_q)
        b.term(ed, -1.0, epsd)
        b.term(ed, 1.0, vx, sind)
        b.term(ed, -1.0, vy, cosd)
        b.term(eq_, g.xd_t, i_d)
        b.term(eq_, g.ra, i_q)
        b.term(eq_, -1.0, epsq)
        b.term(eq_, 1.0, vx, cosd)
        b.term(eq_, 1.0, vy, sind)

        b.term(eqx, 1.0, i_d, sind)
        b.term(eqx, 1.0, i_q, cosd)
        b.term(eqy, -1.0, i_d, cosd)
        b.term(eqy, 1.0, i_q, sind)

        return {
            "plain": [f"omega:{gid}", f"epsq:{gid}", f"epsd:{gid}",
                      f"avr:{gid}", f"gov:{gid}"],
            "angle": f"delta:{gid}",
        }

    def _emit_qss_gen(self, g: GenSpec, isl: Island) -> None:
        """PV bus with droop frequency response and AGC dispatch integrator."""
        b = self.b
        gid = g.gen_id
        st = self.state
        eqx, eqy = self.balance[g.bus]
        wx, wy = self.wslots[g.bus]
        ms = st.mach[gid]
        kf = g.k_freq / self.case.f_nominal  # pu per Hz

        df_slot = self.slots.get(f"df:{isl.index}")
        if df_slot is None and not isl.sources:
            df_slot = self.var(f"df:{isl.index}", "alg",
                               lambda st_, i=isl.index: st_.df.get(i, 0.0))

        if self.alpha:
            p_now = st.pdisp_now(gid) + ms.agc
            b.term(eqx, p_now, wx)
            b.term(eqy, -p_now, wy)
            pagc = None
        else:
            pagc = self.var(f"pagc:{gid}", "state",
                            lambda st_, gid=gid: st_.mach[gid].agc)
            pd_slot = self.known(
                f"pdisp:{gid}",
                lambda st_, t0, gid=gid: np.array([st_.pdisp_now(gid, t0),
                                                   st_.pdisp_rate(gid)]))
            b.term(eqx, 1.0, pd_slot, wx)
            b.term(eqy, -1.0, pd_slot, wy)
            b.term(eqx, 1.0, pagc, wx)
            b.term(eqy, -1.0, pagc, wy)
        if df_slot is not None:
            b.term(eqx, -kf, df_slot, wx)
            b.term(eqy, kf, df_slot, wy)

        if ms.q_fixed is None:
            qg = self.var(f"qg:{gid}", "alg",
                          lambda st_, gid=gid: st_.mach[gid].q_g)
            b.term(eqx, -1.0, qg, wy)
            b.term(eqy, -1.0, qg, wx)
            vx, vy = self.vslots[g.bus]
            eq = b.alg_eq(f"pv:{gid}")
            b.term(eq, 1.0, vx, vx)
            b.term(eq, 1.0, vy, vy)
            b.term(eq, -ms.v_set ** 2)
        else:
            b.term(eqx, -ms.q_fixed, wy)
            b.term(eqy, -ms.q_fixed, wx)

        if pagc is not None and df_slot is not None and g.agc_tg > 0:
            b.rhs_term(pagc, -1.0 / g.agc_tg, df_slot)

    def _emit_island_frequency(self, isl: Island, slack_gen) -> None:
        """One angle pin per island closes the frequency unknown."""
        if isl.sources or isl.index in slack_gen:
            return  # a source pins both angle and frequency
        if not isl.machines:
            raise IslandWithoutGeneration(
                f"island {isl.index} cannot run in QSS without generation")
        if f"df:{isl.index}" not in self.slots:
            self.var(f"df:{isl.index}", "alg",
                     lambda st, i=isl.index: st.df.get(i, 0.0))
        ref = self.case.gen_by_id[isl.ref_gen]
        bi = self.case.bus_index[ref.bus]
        v0 = self.state.v[bi]
        th0 = cmath.phase(v0) if abs(v0) > 0 else 0.0
        eq = self.b.alg_eq(f"anglepin:{isl.index}")
        vx, vy = self.vslots[ref.bus]
        self.b.term(eq, math.sin(th0), vx)
        self.b.term(eq, -math.cos(th0), vy)


def build_system(case: GridCase, state: SystemState, mode: str,
                 mods: Optional[AlphaMods] = None) -> Built:
    return _Assembler(case, state, mode, mods).run()


# --------------------------------------------------------------------------
# state <-> solution transfer
# --------------------------------------------------------------------------


def write_back(built: Built, values: np.ndarray, case: GridCase,
               state: SystemState) -> None:
    """Copy solved values into the runtime state (fundamental quantities)."""
    vr: dict = {}
    vi: dict = {}
    for name, slot in built.system.index.items():
        kind, _, rest = name.partition(":")
        val = values[slot]
        if kind == "vx":
            vr[int(rest)] = val
        elif kind == "vy":
            vi[int(rest)] = val
        elif kind == "delta":
            state.mach[rest].delta = val
        elif kind == "omega":
            state.mach[rest].omega = val
        elif kind == "epsq":
            state.mach[rest].eps_q = val
        elif kind == "epsd":
            state.mach[rest].eps_d = val
        elif kind == "avr":
            state.mach[rest].avr = val
        elif kind == "gov":
            state.mach[rest].gov = val
        elif kind in ("agc", "pagc"):
            state.mach[rest].agc = val
        elif kind in ("qg", "qpv"):
            state.mach.setdefault(rest, MachineState()).q_g = val
        elif kind == "slip":
            state.slip[rest] = val
        elif kind == "df":
            state.df[int(rest)] = val
    for bus, re_ in vr.items():
        state.v[case.bus_index[bus]] = complex(re_, vi[bus])


def refine_state(built: Built, case: GridCase, state: SystemState,
                 tol: float = 1e-12) -> None:
    """Newton-polish the algebraic variables so the anchor is consistent."""
    if built.system.nv == 0:
        return
    anchors = built.anchors(state)
    kv = built.knowns(state, state.t, 1)[:, 0] if built.known_specs \
        else np.zeros(0)
    refined = built.system.newton_refine(anchors, kv, tol=tol)
    write_back(built, refined, case, state)


# --------------------------------------------------------------------------
# residual wrappers (spec-level API, reused by oracles and tests)
# --------------------------------------------------------------------------


def point_residual(built: Built, case: GridCase, state: SystemState,
                   values: Optional[np.ndarray] = None,
                   dvalues: Optional[np.ndarray] = None) -> np.ndarray:
    sysm = built.system
    if values is None:
        values = built.anchors(state)
    values = np.asarray(values, dtype=float)
    if len(values) != sysm.nv:
        raise DimensionMismatch(f"expected {sysm.nv} values, got {len(values)}")
    if dvalues is None:
        dvalues = np.zeros(sysm.n_state)
    elif len(dvalues) != sysm.n_state:
        raise DimensionMismatch(
            f"expected {sysm.n_state} state derivatives, got {len(dvalues)}")
    kv = built.knowns(state, state.t, 1)[:, 0] if built.known_specs \
        else np.zeros(0)
    return sysm.residual(values, dvalues, kv)


def dynamic_residual(case: GridCase, state: SystemState,
                     values: Optional[np.ndarray] = None,
                     dvalues: Optional[np.ndarray] = None) -> np.ndarray:
    """Stacked machine/controller/motor differential and network algebraic
    residuals of the full dynamic model at the given point."""
    built = build_system(case, state, DYNAMIC)
    return point_residual(built, case, state, values, dvalues)


def qss_residual(case: GridCase, state: SystemState,
                 values: Optional[np.ndarray] = None,
                 dvalues: Optional[np.ndarray] = None) -> np.ndarray:
    built = build_system(case, state, QSS)
    return point_residual(built, case, state, values, dvalues)


# --------------------------------------------------------------------------
# injection bookkeeping
# --------------------------------------------------------------------------


def load_current(l: LoadSpec, v: complex, scale: float,
                 slip: Optional[float]) -> complex:
    """Total current drawn by a load device at terminal voltage v."""
    s = complex(l.p, l.q)
    i = 0.0 + 0.0j
    if scale != 0.0:
        if l.f_z > 0:
            i += scale * (s * l.f_z).conjugate() * v
        if l.f_p > 0:
            i += scale * (s * l.f_p).conjugate() / v.conjugate()
        if l.f_i > 0:
            i += scale * (s * l.f_i).conjugate() * abs(v) / v.conjugate()
    if l.motor is not None and slip is not None:
        _, i_s, _ = motor_circuit(l.motor, v, slip)
        i += i_s
    return i


def required_injection(case: GridCase, state: SystemState, bus: int) -> complex:
    """Current a generator at this bus must inject for the network balance."""
    ys, ysh = build_admittance(case, state.branch_online,
                               state.branch_overrides)
    i = case.bus_index[bus]
    inet = (ys[i] @ state.v) \
        + (ysh[i] + state.extra_shunts.get(bus, 0.0)) * state.v[i]
    for l in case.loads_at(bus):
        if l.load_id in state.load_online:
            inet += load_current(l, state.v[i], state.scale_now(l.load_id),
                                 state.slip.get(l.load_id))
    return inet


# --------------------------------------------------------------------------
# machine (back-)initialization
# --------------------------------------------------------------------------


def machine_init_from_terminal(g: GenSpec, v: complex, s_inj: complex,
                               df_hz: float, pdisp_now: float,
                               f_nominal: float) -> MachineState:
    """Steady machine state consistent with terminal (V, S) and frequency.

    Classic two-axis initialization: the q axis points along
    V + (ra + j xq) I; dq projections give the internal potentials and field
    voltage, and torque balance closes governor and AGC states so the
    dynamic residual vanishes at the instant.
    """
    i = (s_inj / v).conjugate()
    delta = cmath.phase(v + complex(g.ra, g.xq) * i)
    s, c = math.sin(delta), math.cos(delta)
    vd = v.real * s - v.imag * c
    vq = v.real * c + v.imag * s
    id_ = i.real * s - i.imag * c
    iq_ = i.real * c + i.imag * s
    eps_d = vd + g.ra * id_ - g.xq_t * iq_
    eps_q = vq + g.ra * iq_ + g.xd_t * id_
    efd = eps_q + (g.xd - g.xd_t) * id_
    omega = df_hz / f_nominal
    te = eps_d * id_ + eps_q * iq_ + (g.xq_t - g.xd_t) * id_ * iq_
    tm0_total = te + g.d * omega + omega / g.gov_r
    return MachineState(
        delta=delta, omega=omega, eps_q=eps_q, eps_d=eps_d, avr=efd,
        gov=-omega / g.gov_r, agc=tm0_total - pdisp_now,
        v_ref=abs(v) + efd / g.avr_ka, p_disp=pdisp_now,
        q_g=s_inj.imag, v_set=abs(v),
    )


def machine_terminal_power(case: GridCase, state: SystemState,
                           gid: str) -> complex:
    g = case.gen_by_id[gid]
    ms = state.mach[gid]
    v = state.v[case.bus_index[g.bus]]
    i = machine_injection(g, ms.delta, ms.eps_d, ms.eps_q, v)
    return v * i.conjugate()


# --------------------------------------------------------------------------
# power flow and equilibrium initialization
# --------------------------------------------------------------------------


def solve_powerflow(case: GridCase, state: Optional[SystemState] = None,
                    order: int = 30) -> SystemState:
    """Holomorphic-embedding power flow from the no-load flat start.

    Injections, shunts and PV setpoint offsets are scaled with alpha; at
    alpha = 0 the network floats at the slack voltage, at alpha = 1 the
    loaded solution is reached (or NoConvergenceAtAlpha1 if none exists).
    """
    if state is None:
        state = fresh_state(case)
        refresh_islands(case, state)
    if not any(isl.energized for isl in state.islands):
        return state  # everything is dark; nothing to solve
    # equilibrium slip anchors at the flat voltage
    for l in case.loads:
        if l.motor is None or l.load_id not in state.load_online:
            continue
        bi = case.bus_index[l.bus]
        if not state.energized[bi]:
            continue
        isl = state.islands[state.island_of[l.bus]]
        vflat = island_flat_voltage(case, isl)
        state.slip[l.load_id] = motor_equilibrium_slip(l.motor, vflat)
    mods = AlphaMods(kind=ALPHA_POWERFLOW, powerflow=True)
    built = build_system(case, state, state.mode, mods)
    anchors = built.anchors(state)
    kc = built.knowns(state, state.t, order + 11)
    values = solve_alpha_problem(built.system, anchors, kc,
                                 kind=ALPHA_POWERFLOW, order=order)
    write_back(built, values, case, state)
    return state


def init_equilibrium(case: GridCase, mode: str = DYNAMIC) -> SystemState:
    """Power flow, then back-initialization of every dynamic device so the
    chosen mode's residual vanishes at t = 0."""
    state = fresh_state(case)
    refresh_islands(case, state)
    try:
        solve_powerflow(case, state)
    except (NoConvergenceAtAlpha1, IslandWithoutGeneration) as exc:
        raise PowerFlowInfeasible(str(exc)) from exc

    for isl in state.islands:
        if not isl.energized:
            continue
        slack = isl.sources[0] if isl.sources else isl.ref_gen
        for gid in isl.machines:
            g = case.gen_by_id[gid]
            v = state.v[case.bus_index[g.bus]]
            if gid == slack:
                i_inj = required_injection(case, state, g.bus)
                s_inj = v * i_inj.conjugate()
            else:
                q = state.mach[gid].q_g if gid in state.mach else 0.0
                s_inj = complex(g.p_set, q)
            state.mach[gid] = machine_init_from_terminal(
                g, v, s_inj, 0.0, s_inj.real, case.f_nominal)

    state.mode = mode
    if mode == QSS:
        for isl in state.islands:
            for gid in isl.machines:
                ms = state.mach[gid]
                ms.v_set = abs(state.v[case.bus_index[
                    case.gen_by_id[gid].bus]])
                # QSS dispatch convention: pagc tops up the terminal output,
                # so it is zero at the solved power flow
                ms.agc = 0.0
        state.df = {isl.index: 0.0 for isl in state.islands}
    built = build_system(case, state, mode)
    refine_state(built, case, state)
    return state


# --------------------------------------------------------------------------
# switch operations (alpha-embedded instant events)
# --------------------------------------------------------------------------


def _alpha_solve(case: GridCase, state: SystemState, mods: AlphaMods,
                 order: int = 30) -> None:
    built = build_system(case, state, state.mode, mods)
    anchors = built.anchors(state)
    kc = built.knowns(state, state.t, order + 11)
    values = solve_alpha_problem(built.system, anchors, kc,
                                 kind=mods.kind, order=order)
    write_back(built, values, case, state)


def apply_add_shunt(case: GridCase, state: SystemState, bus: int,
                    y: complex, _depth: int = 0) -> None:
    """Connect a shunt admittance (also how faults are applied).

    Violent changes (a bolted fault drives a voltage-magnitude auxiliary
    toward its branch point) are continued in halved stages.
    """
    try:
        _alpha_solve(case, state,
                     AlphaMods(kind=ALPHA_PARAM, delta_y=[("shunt", bus, y)]))
    except NoConvergenceAtAlpha1:
        if _depth >= 8:
            raise
        apply_add_shunt(case, state, bus, y / 2, _depth + 1)
        apply_add_shunt(case, state, bus, y / 2, _depth + 1)
        return
    state.extra_shunts[bus] = state.extra_shunts.get(bus, 0.0) + y
    if abs(state.extra_shunts[bus]) < 1e-14:
        del state.extra_shunts[bus]
    state.bump()


def apply_branch_param(case: GridCase, state: SystemState, branch_id: str,
                       r: float, x: float, b_sh: float,
                       _depth: int = 0) -> None:
    """Instant change of a branch's parameters (alpha-blended, staged when
    the single-sweep continuation fails)."""
    br = case.branch_by_id[branch_id]
    r0, x0, b0 = state.branch_overrides.get(branch_id, (br.r, br.x, br.b_sh))
    if branch_id in state.branch_online:
        dy = 1.0 / complex(r, x) - 1.0 / complex(r0, x0)
        db = b_sh - b0
        try:
            _alpha_solve(case, state, AlphaMods(
                kind=ALPHA_PARAM,
                delta_y=[("branch", br.from_bus, br.to_bus, dy, db, db)]))
        except NoConvergenceAtAlpha1:
            if _depth >= 8:
                raise
            z_mid = 2.0 / (1.0 / complex(r0, x0) + 1.0 / complex(r, x))
            apply_branch_param(case, state, branch_id, z_mid.real, z_mid.imag,
                               0.5 * (b0 + b_sh), _depth + 1)
            apply_branch_param(case, state, branch_id, r, x, b_sh, _depth + 1)
            return
    state.branch_overrides[branch_id] = (r, x, b_sh)
    state.bump()


def _branch_params(case: GridCase, state: SystemState, branch_id: str):
    br = case.branch_by_id[branch_id]
    r, x, b = state.branch_overrides.get(branch_id, (br.r, br.x, br.b_sh))
    return br, 1.0 / complex(r, x), b


def _energize_through(case: GridCase, state: SystemState, branch_id: str,
                      live_bus: int, dead_bus: int) -> None:
    """Close a line into a de-energized component.

    The dead side reduces to a driving-point admittance at the live end
    (Schur complement of its passive network); that shunt is alpha-embedded,
    then the dead-side voltages follow from the passive solve.
    """
    br, y, b = _branch_params(case, state, branch_id)
    # gather the dead component reachable from dead_bus over online branches
    comp = {dead_bus}
    frontier = [dead_bus]
    while frontier:
        nxt = []
        for other in case.branches:
            if other.branch_id not in state.branch_online:
                continue
            f, t = other.from_bus, other.to_bus
            for a, bb in ((f, t), (t, f)):
                if a in comp and bb not in comp \
                        and not state.energized[case.bus_index[bb]]:
                    comp.add(bb)
                    nxt.append(bb)
        frontier = nxt
    comp = sorted(comp)
    pos = {bus: k for k, bus in enumerate(comp)}
    m = len(comp)
    ydd = np.zeros((m, m), dtype=complex)
    for other in case.branches:
        if other.branch_id not in state.branch_online:
            continue
        if other.from_bus in pos and other.to_bus in pos:
            _, yo, bo = _branch_params(case, state, other.branch_id)
            a, bb = pos[other.from_bus], pos[other.to_bus]
            ydd[a, a] += yo + 0.5j * bo
            ydd[bb, bb] += yo + 0.5j * bo
            ydd[a, bb] -= yo
            ydd[bb, a] -= yo
    for bus in comp:
        ydd[pos[bus], pos[bus]] += state.extra_shunts.get(bus, 0.0)
    d0 = pos[dead_bus]
    ydd[d0, d0] += y + 0.5j * b  # the new line seen from the dead end
    try:
        col = np.linalg.solve(ydd, np.eye(m)[:, d0])
    except np.linalg.LinAlgError as exc:
        raise NoConvergenceAtAlpha1(f"dead side of {branch_id}: {exc}") from exc
    y_eq = (y + 0.5j * b) - y * y * col[d0]
    _alpha_solve(case, state, AlphaMods(
        kind=ALPHA_ADD, delta_y=[("shunt", live_bus, y_eq)]))
    v_live = state.v[case.bus_index[live_bus]]
    v_dead = np.linalg.solve(ydd, np.eye(m)[:, d0] * y * v_live)
    for bus in comp:
        state.energized[case.bus_index[bus]] = True
        state.v[case.bus_index[bus]] = v_dead[pos[bus]]
    state.branch_online.add(branch_id)
    refresh_islands(case, state)
    state.bump()


def apply_add_branch(case: GridCase, state: SystemState,
                     branch_id: str) -> None:
    br, y, b = _branch_params(case, state, branch_id)
    fi = case.bus_index[br.from_bus]
    ti = case.bus_index[br.to_bus]
    f_live = state.energized[fi]
    t_live = state.energized[ti]
    if f_live and t_live:
        _alpha_solve(case, state, AlphaMods(
            kind=ALPHA_ADD,
            delta_y=[("branch", br.from_bus, br.to_bus, y, b, b)]))
        state.branch_online.add(branch_id)
        refresh_islands(case, state)
        state.bump()
    elif f_live or t_live:
        live, dead = (br.from_bus, br.to_bus) if f_live \
            else (br.to_bus, br.from_bus)
        _energize_through(case, state, branch_id, live, dead)
    else:
        state.branch_online.add(branch_id)
        refresh_islands(case, state)
        state.bump()


def apply_cut_branch(case: GridCase, state: SystemState,
                     branch_id: str) -> list:
    """Open a branch; source-less fragments collapse with the element.

    Returns the collapse log.
    """
    br, y, b = _branch_params(case, state, branch_id)
    fi, ti = case.bus_index[br.from_bus], case.bus_index[br.to_bus]
    vf, vt = state.v[fi], state.v[ti]
    i_from = y * (vf - vt) + 0.5j * b * vf   # drawn into the element
    i_to = y * (vt - vf) + 0.5j * b * vt
    state.branch_online.discard(branch_id)
    collapsed = refresh_islands(case, state)
    cut_equiv = []
    for bus, v, i_draw in ((br.from_bus, vf, i_from), (br.to_bus, vt, i_to)):
        if not state.energized[case.bus_index[bus]]:
            continue  # that side went down with the element
        if abs(v) < DEAD_VOLTAGE:
            raise ZeroBoundaryVoltage(f"branch {branch_id} at bus {bus}")
        cut_equiv.append((bus, -i_draw / v))
    if cut_equiv:
        _alpha_solve(case, state,
                     AlphaMods(kind=ALPHA_CUT, cut_equiv=cut_equiv))
    state.bump()
    return collapsed


def apply_add_load(case: GridCase, state: SystemState, load_id: str) -> None:
    l = case.load_by_id[load_id]
    if not state.energized[case.bus_index[l.bus]]:
        raise NoConvergenceAtAlpha1(f"bus {l.bus} is de-energized")
    state.load_online.add(load_id)
    if l.motor is not None:
        state.slip[load_id] = MOTOR_START_SLIP
    try:
        _alpha_solve(case, state, AlphaMods(
            kind=ALPHA_ADD, scale_devices={f"load:{load_id}"}))
    except NoConvergenceAtAlpha1:
        state.load_online.discard(load_id)
        state.slip.pop(load_id, None)
        raise
    state.bump()


def apply_cut_load(case: GridCase, state: SystemState, load_id: str) -> None:
    l = case.load_by_id[load_id]
    bi = case.bus_index[l.bus]
    v = state.v[bi]
    if abs(v) < DEAD_VOLTAGE:
        # boundary voltage unusable for an equivalent shunt: fall back to
        # ramping the device's own current down with (1 - alpha)
        _alpha_solve(case, state, AlphaMods(
            kind=ALPHA_CUT, ramp_down_devices={f"load:{load_id}"}))
    else:
        i_draw = load_current(l, v, state.scale_now(load_id),
                              state.slip.get(load_id))
        state.load_online.discard(load_id)
        _alpha_solve(case, state, AlphaMods(
            kind=ALPHA_CUT, cut_equiv=[(l.bus, -i_draw / v)]))
    state.load_online.discard(load_id)
    state.slip.pop(load_id, None)
    state.bump()


def apply_add_gen(case: GridCase, state: SystemState, gen_id: str) -> None:
    """Synchronize a machine at matched voltage (zero-exchange insertion)."""
    g = case.gen_by_id[gen_id]
    bi = case.bus_index[g.bus]
    if not state.energized[bi]:
        # black start: the machine energizes its own island
        state.gen_online.add(gen_id)
        sb = case.buses[bi]
        v = g.v_set * cmath.exp(1j * sb.angle_init)
        state.v[bi] = v
        state.energized[bi] = True
        state.mach[gen_id] = machine_init_from_terminal(
            g, v, 0.0 + 0.0j, 0.0, 0.0, case.f_nominal)
        refresh_islands(case, state)
        state.bump()
        return
    v = state.v[bi]
    state.gen_online.add(gen_id)
    state.mach[gen_id] = machine_init_from_terminal(
        g, v, 0.0 + 0.0j, 0.0, 0.0, case.f_nominal)
    refresh_islands(case, state)
    try:
        _alpha_solve(case, state, AlphaMods(
            kind=ALPHA_ADD, scale_devices={f"gen:{gen_id}"}))
    except NoConvergenceAtAlpha1:
        state.gen_online.discard(gen_id)
        state.mach.pop(gen_id, None)
        refresh_islands(case, state)
        raise
    state.bump()


def apply_cut_gen(case: GridCase, state: SystemState, gen_id: str) -> list:
    g = case.gen_by_id[gen_id]
    bi = case.bus_index[g.bus]
    v = state.v[bi]
    ms = state.mach.get(gen_id)
    i_inj = machine_injection(g, ms.delta, ms.eps_d, ms.eps_q, v) \
        if ms is not None else 0.0 + 0.0j
    state.gen_online.discard(gen_id)
    state.mach.pop(gen_id, None)
    collapsed = refresh_islands(case, state)
    if state.energized[bi]:
        if abs(v) < DEAD_VOLTAGE:
            raise ZeroBoundaryVoltage(f"generator {gen_id} at bus {g.bus}")
        _alpha_solve(case, state, AlphaMods(
            kind=ALPHA_CUT, cut_equiv=[(g.bus, i_inj / v)]))
    state.bump()
    return collapsed
