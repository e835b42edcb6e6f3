"""Event-driven simulation: segments, events, and dynamic/QSS mode switching.

The loop alternates analytic segments with instantaneous events.  Segments
never straddle an event: timed events bound the step, condition-triggered
events are localized on the analytic trajectory by a scan plus bisection and
the segment is truncated there.  After every dynamic segment in hybrid mode
the steady-state criteria run on the segment's coefficients, and a passing
verdict converts the machines to the QSS representation; any switching event
while in QSS converts back first.
"""

from __future__ import annotations

import math
import re
import time as _time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import model as mdl
from .bounds import SteadyStateVerdict, steady_state_check
from .engine import SegmentSolution, solve_segment
from .errors import (
    AnchorInconsistent,
    HesimError,
    NotSteady,
    NoValidRange,
    SegmentFailure,
    SingularJacobian,
)
from .grid import GridCase
from .model import (
    DYNAMIC,
    QSS,
    Built,
    SystemState,
    build_system,
    coi_speed,
    init_equilibrium,
    machine_terminal_power,
    refine_state,
    write_back,
)
from .series import TruncatedSeries, pade_with_fallback

HYBRID = "hybrid"


@dataclass
class RunConfig:
    mode: str = HYBRID            # hybrid | dynamic | qss
    order: int = 15               # series order N (4..40)
    eps_t: float = 1e-3           # steady-state threshold, per-unit/s
    tol_res: float = 1e-6         # residual certificate tolerance
    dt_out: float = 0.1
    t_end: float = 10.0
    event_tol: float = 1e-6       # conditional-event bisection tolerance
    dwell: float = 1.0            # min dynamic time before re-checking steadiness
    max_step_dyn: float = 1.0
    max_step_qss: float = 30.0
    step_safety: float = 0.8
    seed: int = 0                 # randomized tests only

    def __post_init__(self):
        if self.mode not in (HYBRID, DYNAMIC, QSS):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.order < 4 or self.order > 40:
            raise ValueError("series order must be in 4..40")
        if self.eps_t <= 0:
            raise ValueError("eps_t must be positive")


# --------------------------------------------------------------------------
# events
# --------------------------------------------------------------------------

SWITCH_KINDS = {"add_branch", "cut_branch", "add_load", "cut_load",
                "add_gen", "cut_gen", "add_shunt", "param_branch"}
RAMP_KINDS = {"ramp_load", "ramp_stop_load", "ramp_gen", "ramp_stop_gen"}


@dataclass
class SimEvent:
    kind: str
    t_due: Optional[float] = None         # timed events
    condition: Optional["Condition"] = None   # condition-triggered events
    payload: dict = field(default_factory=dict)
    label: str = ""

    def __post_init__(self):
        if (self.t_due is None) == (self.condition is None):
            raise ValueError("event needs exactly one of time or condition")
        if self.t_due is not None and not math.isfinite(self.t_due):
            raise ValueError("timed events need a finite due time")


@dataclass
class EventRecord:
    t: float
    kind: str
    label: str
    info: dict = field(default_factory=dict)


_COND_RE = re.compile(
    r"^\s*(?P<chan>[A-Za-z]+)\s*(\(\s*(?P<args>[-\w\s,\.]*)\s*\))?\s*"
    r"(?P<op>[<>]=?)\s*(?P<rhs>[-+0-9eE\.]+)\s*$")


@dataclass
class Condition:
    """Trigger h(x(t), y(t), p(t)) >= 0 built from a comparison expression.

    Channels: V(bus), I(from,to), f, t, omega(gen).  The trigger fires when
    the comparison becomes true, so h = lhs - rhs for '>' and rhs - lhs
    for '<'.
    """
    text: str
    channel: str
    args: tuple
    op: str
    rhs: float

    @classmethod
    def parse(cls, text: str) -> "Condition":
        m = _COND_RE.match(text)
        if m is None:
            raise ValueError(f"cannot parse condition {text!r}")
        chan = m.group("chan")
        raw = m.group("args")
        args: tuple = ()
        if raw:
            args = tuple(a.strip() for a in raw.split(",") if a.strip())
        return cls(text=text, channel=chan, args=args, op=m.group("op"),
                   rhs=float(m.group("rhs")))

    def h(self, rec: "SegmentRecord", tau):
        lhs = rec.channel(self.channel, self.args, tau)
        return lhs - self.rhs if self.op.startswith(">") else self.rhs - lhs


# --------------------------------------------------------------------------
# trajectory
# --------------------------------------------------------------------------


@dataclass
class SegmentRecord:
    t0: float
    step: float
    mode: str
    sol: SegmentSolution
    built: Built
    case: GridCase
    branch_params: dict          # branch_id -> (y_series, b_sh) online snapshot

    @property
    def t1(self) -> float:
        return self.t0 + self.step

    def _val(self, name: str, tau):
        idx = self.built.system.index
        if name in idx:
            return self.sol.value(name, tau)
        return np.full_like(np.atleast_1d(np.asarray(tau, float)), np.nan) \
            if np.ndim(tau) else math.nan

    def channel(self, chan: str, args: tuple, tau):
        """Evaluate an output channel at segment-local time(s)."""
        case = self.case
        idx = self.built.system.index
        if chan == "t":
            return self.t0 + np.asarray(tau, float)
        if chan == "V":
            bus = int(args[0])
            if f"vx:{bus}" not in idx:
                return np.zeros_like(np.asarray(tau, float))
            vx = self.sol.value(f"vx:{bus}", tau)
            vy = self.sol.value(f"vy:{bus}", tau)
            return np.hypot(vx, vy)
        if chan == "I":
            f_bus, t_bus = int(args[0]), int(args[1])
            for bid, (y, b) in self.branch_params.items():
                br = case.branch_by_id[bid]
                if {br.from_bus, br.to_bus} == {f_bus, t_bus}:
                    vxf = self.sol.value(f"vx:{f_bus}", tau)
                    vyf = self.sol.value(f"vy:{f_bus}", tau)
                    vxt = self.sol.value(f"vx:{t_bus}", tau)
                    vyt = self.sol.value(f"vy:{t_bus}", tau)
                    vf = vxf + 1j * vyf
                    vt = vxt + 1j * vyt
                    return np.abs(y * (vf - vt) + 0.5j * b * vf)
            raise KeyError(f"no online branch between {f_bus} and {t_bus}")
        if chan == "f":
            return self._frequency(tau)
        if chan == "omega":
            gid = args[0]
            if self.mode == QSS:
                isl = self._island_of_gen(gid)
                name = f"df:{isl.index}" if isl is not None else None
                if name and name in idx:
                    return self.sol.value(name, tau) / case.f_nominal
                return np.zeros_like(np.asarray(tau, float))
            return self._val(f"omega:{gid}", tau)
        if chan == "delta":
            return self._val(f"delta:{args[0]}", tau)
        if chan == "pg":
            return self._gen_power(args[0], tau)
        raise KeyError(f"unknown channel {chan!r}")

    def _island_of_gen(self, gid: str):
        for isl in self.built.islands:
            if gid in isl.machines or gid in isl.sources:
                return isl
        return None

    def _main_island(self):
        best = None
        for isl in self.built.islands:
            key = min([self.case.gen_by_id[g].bus
                       for g in isl.machines + isl.sources], default=10 ** 9)
            if best is None or key < best[0]:
                best = (key, isl)
        return best[1] if best else None

    def _frequency(self, tau):
        case = self.case
        isl = self._main_island()
        shape = np.zeros_like(np.asarray(tau, float))
        if isl is None:
            return shape + case.f_nominal
        if self.mode == QSS:
            name = f"df:{isl.index}"
            if name in self.built.system.index:
                return case.f_nominal + self.sol.value(name, tau)
            return shape + case.f_nominal
        if not isl.machines:
            return shape + case.f_nominal
        h_tot = sum(case.gen_by_id[g].h for g in isl.machines)
        acc = shape.copy()
        for gid in isl.machines:
            acc = acc + (case.gen_by_id[gid].h / h_tot) \
                * self.sol.value(f"omega:{gid}", tau)
        return case.f_nominal * (1.0 + acc)

    def _gen_power(self, gid: str, tau):
        case = self.case
        idx = self.built.system.index
        if self.mode == QSS:
            if f"pagc:{gid}" not in idx:
                return np.full_like(np.asarray(tau, float), np.nan)
            pagc = self.sol.value(f"pagc:{gid}", tau)
            kpos = dict((n, i) for i, (n, _) in
                        enumerate(self.built.known_specs))
            pd = 0.0
            if f"pdisp:{gid}" in kpos:
                krow = self.sol.kcoeffs[kpos[f"pdisp:{gid}"]]
                pd = np.polynomial.polynomial.polyval(
                    np.asarray(tau, float), krow)
            g = case.gen_by_id[gid]
            isl = self._island_of_gen(gid)
            dfv = 0.0
            if isl is not None and f"df:{isl.index}" in idx:
                dfv = self.sol.value(f"df:{isl.index}", tau)
            return pd + pagc - (g.k_freq / case.f_nominal) * dfv
        if f"id:{gid}" not in idx:
            return np.full_like(np.asarray(tau, float), np.nan)
        g = case.gen_by_id[gid]
        i_d = self.sol.value(f"id:{gid}", tau)
        i_q = self.sol.value(f"iq:{gid}", tau)
        s = self.sol.value(f"sind:{gid}", tau)
        c = self.sol.value(f"cosd:{gid}", tau)
        vx = self.sol.value(f"vx:{g.bus}", tau)
        vy = self.sol.value(f"vy:{g.bus}", tau)
        ix = i_d * s + i_q * c
        iy = -i_d * c + i_q * s
        return vx * ix + vy * iy


@dataclass
class Trajectory:
    case: GridCase
    segments: list = field(default_factory=list)
    events: list = field(default_factory=list)
    failure: Optional[str] = None
    wall_time: float = 0.0

    @property
    def t_end(self) -> float:
        return self.segments[-1].t1 if self.segments else 0.0

    def qss_time(self) -> float:
        return sum(s.step for s in self.segments if s.mode == QSS)

    def qss_fraction(self) -> float:
        total = sum(s.step for s in self.segments)
        return self.qss_time() / total if total > 0 else 0.0

    def segment_counts(self) -> dict:
        out: dict = {}
        for s in self.segments:
            out[s.mode] = out.get(s.mode, 0) + 1
        return out

    def record_for(self, t: float) -> SegmentRecord:
        lo, hi = 0, len(self.segments) - 1
        while lo < hi:
            mid = (lo + hi) // 2
            if self.segments[mid].t1 < t - 1e-12:
                lo = mid + 1
            else:
                hi = mid
        return self.segments[lo]

    def channel(self, chan: str, args: tuple, ts) -> np.ndarray:
        ts = np.atleast_1d(np.asarray(ts, dtype=float))
        out = np.empty_like(ts)
        for i, t in enumerate(ts):
            rec = self.record_for(t)
            tau = min(max(t - rec.t0, 0.0), rec.step)
            out[i] = np.atleast_1d(rec.channel(chan, args, tau))[0]
        return out

    def sample_times(self, dt: float) -> np.ndarray:
        n = int(math.floor(self.t_end / dt + 1e-9))
        ts = np.arange(n + 1) * dt
        if ts[-1] < self.t_end - 1e-9:
            ts = np.append(ts, self.t_end)
        return ts


# --------------------------------------------------------------------------
# conditional-event localization
# --------------------------------------------------------------------------


def locate_conditional_event(rec: SegmentRecord, cond: Condition,
                             window: float, tol: float = 1e-6):
    """Earliest root of the trigger on [0, window], or None.

    A scan over 64 subintervals brackets the first sign change, then
    bisection refines it on the analytic trajectory.
    """
    from scipy.optimize import brentq

    taus = np.linspace(0.0, window, 65)
    hs = np.asarray(cond.h(rec, taus), dtype=float)
    if hs[0] >= 0.0:
        return 0.0
    for k in range(64):
        a, b = hs[k], hs[k + 1]
        if b == a:
            continue
        if a < 0.0 <= b or a > 0.0 >= b:
            f = lambda tau: float(np.atleast_1d(cond.h(rec, tau))[0])
            return float(brentq(f, taus[k], taus[k + 1], xtol=tol))
    return None


# --------------------------------------------------------------------------
# mode switching
# --------------------------------------------------------------------------


def steadiness_verdict(case: GridCase, state: SystemState, built: Built,
                       seg: SegmentSolution, eps_t: float) -> SteadyStateVerdict:
    """Assemble the monitored-variable set and run the rate criteria.

    Monitored: machine speeds, relative rotor angles, internal potentials,
    AVR and governor states, and squared bus-voltage magnitudes.
    """
    per: dict = {}
    steady_all = True
    order = seg.C.shape[1] - 1
    half = order // 2
    idx = built.system.index

    def reps(name):
        return seg.series(name), seg.pade(name)

    for isl in built.islands:
        variables: dict = {}
        for name in built.monitored_plain:
            gid = name.split(":")[1]
            if gid in isl.machines:
                variables[name] = reps(name)
        angle_vars = []
        for gid, name in built.monitored_angles.items():
            if gid in isl.machines:
                variables[name] = reps(name)
                angle_vars.append(name)
        for bus in isl.buses:
            vn = f"vx:{bus}"
            if vn not in idx:
                continue
            vx = seg.C[idx[f"vx:{bus}"]]
            vy = seg.C[idx[f"vy:{bus}"]]
            vsq = (np.convolve(vx, vx) + np.convolve(vy, vy))[: order + 1]
            s = TruncatedSeries(vsq)
            variables[f"vsq:{bus}"] = (s, pade_with_fallback(s, half, half))
        if not variables:
            continue
        ref = built.angle_ref.get(isl.index)
        verdict = steady_state_check(
            variables, seg.t_e, eps_t,
            angle_reference=ref if angle_vars else None,
            angle_vars=tuple(angle_vars))
        per.update(verdict.per_variable)
        steady_all = steady_all and verdict.system_steady
    return SteadyStateVerdict(per, steady_all, eps_t)


def mode_switch(case: GridCase, state: SystemState, direction: str,
                verdict: Optional[SteadyStateVerdict] = None) -> None:
    """Convert machines to PV/QSS form (dyn->qss) or back (qss->dyn).

    dyn->qss demands a passing steady-state verdict; the reverse direction
    back-initializes every machine from its PV operating point so the
    dynamic residual vanishes at the instant.
    """
    if direction == "dyn->qss":
        if state.mode != DYNAMIC:
            raise HesimError("not in dynamic mode")
        if verdict is None or not verdict.system_steady:
            raise NotSteady("dynamic-to-QSS switch without a steady verdict")
        for isl in state.islands:
            if not isl.energized:
                continue
            df = 0.0 if isl.sources else case.f_nominal * coi_speed(
                case, state, isl)
            state.df[isl.index] = df
            for gid in isl.machines:
                g = case.gen_by_id[gid]
                ms = state.mach[gid]
                s_term = machine_terminal_power(case, state, gid)
                ms.v_set = abs(state.v[case.bus_index[g.bus]])
                ms.q_g = s_term.imag
                ms.agc = (s_term.real + (g.k_freq / case.f_nominal) * df
                          - state.pdisp_now(gid))
                ms.q_fixed = None
        state.mode = QSS
        state.bump()
        built = build_system(case, state, QSS)
        refine_state(built, case, state)
    elif direction == "qss->dyn":
        if state.mode != QSS:
            raise HesimError("not in QSS mode")
        for isl in state.islands:
            if not isl.energized:
                continue
            df = 0.0 if isl.sources else state.df.get(isl.index, 0.0)
            for gid in isl.machines:
                g = case.gen_by_id[gid]
                ms = state.mach[gid]
                ms.q_fixed = None  # the AVR takes over again
                v = state.v[case.bus_index[g.bus]]
                p_inj = (state.pdisp_now(gid) + ms.agc
                         - (g.k_freq / case.f_nominal) * df)
                s_inj = complex(p_inj, ms.q_g)
                base = ms.p_disp
                new = mdl.machine_init_from_terminal(
                    g, v, s_inj, df, state.pdisp_now(gid), case.f_nominal)
                new.p_disp = base
                new.v_set = ms.v_set
                state.mach[gid] = new
        state.mode = DYNAMIC
        state.last_dyn_entry = state.t
        state.bump()
        built = build_system(case, state, DYNAMIC)
        refine_state(built, case, state)
    else:
        raise ValueError(f"unknown direction {direction!r}")


# --------------------------------------------------------------------------
# the simulation driver
# --------------------------------------------------------------------------


def _execute_event(case, state, ev: SimEvent, t: float,
                   traj: Trajectory, config: RunConfig) -> bool:
    """Run one event at time t. Returns False when the run must stop."""
    info: dict = {}
    if ev.kind in SWITCH_KINDS and state.mode == QSS:
        mode_switch(case, state, "qss->dyn")
        traj.events.append(EventRecord(t, "mode_switch", "qss->dyn",
                                       {"cause": ev.kind}))
    p = ev.payload
    if ev.kind == "stop":
        traj.events.append(EventRecord(t, ev.kind, ev.label, info))
        return False
    if ev.kind == "record":
        pass
    elif ev.kind == "add_branch":
        mdl.apply_add_branch(case, state, p["branch"])
    elif ev.kind == "cut_branch":
        info["collapsed"] = mdl.apply_cut_branch(case, state, p["branch"])
    elif ev.kind == "add_load":
        mdl.apply_add_load(case, state, p["load"])
    elif ev.kind == "cut_load":
        mdl.apply_cut_load(case, state, p["load"])
    elif ev.kind == "add_gen":
        mdl.apply_add_gen(case, state, p["gen"])
    elif ev.kind == "cut_gen":
        info["collapsed"] = mdl.apply_cut_gen(case, state, p["gen"])
    elif ev.kind == "add_shunt":
        mdl.apply_add_shunt(case, state, int(p["bus"]),
                            complex(p["g"], p["b"]))
    elif ev.kind == "param_branch":
        mdl.apply_branch_param(case, state, p["branch"], p["r"], p["x"],
                             p.get("b", 0.0))
    elif ev.kind == "ramp_load":
        state.ramps.append(mdl.Ramp(f"load:{p['load']}", p["rate"], t))
    elif ev.kind == "ramp_stop_load":
        lid = p["load"]
        for r in list(state.ramps):
            if r.target == f"load:{lid}":
                state.load_scale[lid] += r.rate * (t - r.t_start)
                state.ramps.remove(r)
    elif ev.kind == "ramp_gen":
        state.ramps.append(mdl.Ramp(f"gen:{p['gen']}", p["rate"], t))
    elif ev.kind == "ramp_stop_gen":
        gid = p["gen"]
        for r in list(state.ramps):
            if r.target == f"gen:{gid}":
                state.mach[gid].p_disp += r.rate * (t - r.t_start)
                state.ramps.remove(r)
    else:
        raise ValueError(f"unknown event kind {ev.kind!r}")
    if ev.kind in SWITCH_KINDS:
        state.last_dyn_entry = t
    traj.events.append(EventRecord(t, ev.kind, ev.label, info))
    return True


def _solve_with_ladder(built, state, t, order, kind, tol_res, t_max):
    """Retry ladder: higher order, then two step halvings."""
    attempts = ((order, t_max), (order + 10, t_max),
                (order + 10, t_max / 2), (order + 10, t_max / 4))
    last = None
    for n, tm in attempts:
        try:
            return solve_segment(built.system, built.anchors(state),
                                 built.knowns(state, t, n + 1), n, kind,
                                 tol_res, tm)
        except (NoValidRange, SingularJacobian, AnchorInconsistent) as exc:
            last = exc
    raise SegmentFailure(f"segment at t={t:.6f}: {last}", time=t)


def run_simulation(case: GridCase, script: list, config: RunConfig,
                   state: Optional[SystemState] = None) -> Trajectory:
    """Event-driven extended-term simulation; returns the piecewise
    trajectory (partial, with a failure record, if a segment fails)."""
    wall0 = _time.perf_counter()
    traj = Trajectory(case)
    if state is None:
        start_mode = QSS if config.mode == QSS else DYNAMIC
        state = init_equilibrium(case, mode=start_mode)
    timed = sorted([e for e in script if e.t_due is not None],
                   key=lambda e: e.t_due)
    conditional = [e for e in script if e.condition is not None]
    built_cache: dict = {}

    def built_for(mode):
        key = (mode, state.epoch)
        if key not in built_cache:
            built_cache.clear()
            built_cache[key] = build_system(case, state, mode)
        return built_cache[key]

    t = 0.0
    state.t = 0.0
    running = True
    try:
        while running and t < config.t_end - 1e-9:
            while timed and timed[0].t_due <= t + 1e-9:
                ev = timed.pop(0)
                running = _execute_event(case, state, ev, t, traj, config)
                if not running:
                    break
            if not running:
                break
            t_next = min(config.t_end,
                         timed[0].t_due if timed else config.t_end)
            gap = t_next - t
            if gap <= 1e-9:
                continue
            mode = state.mode
            cap = config.max_step_dyn if mode == DYNAMIC else config.max_step_qss
            built = built_for(mode)
            seg = _solve_with_ladder(built, state, t, config.order,
                                     "TIME_DYNAMIC" if mode == DYNAMIC
                                     else "TIME_QSS", config.tol_res,
                                     min(gap, cap))
            step = gap if seg.t_e >= gap - 1e-12 else config.step_safety * seg.t_e
            step = min(step, gap)

            rec = SegmentRecord(
                t0=t, step=step, mode=mode, sol=seg, built=built, case=case,
                branch_params={
                    bid: (1.0 / complex(*state.branch_overrides.get(
                        bid, (case.branch_by_id[bid].r,
                              case.branch_by_id[bid].x,
                              case.branch_by_id[bid].b_sh))[:2]),
                        state.branch_overrides.get(
                            bid, (0, 0, case.branch_by_id[bid].b_sh))[2])
                    for bid in state.branch_online},
            )

            fired = None
            for ev in conditional:
                hit = locate_conditional_event(rec, ev.condition, step,
                                               config.event_tol)
                if hit is not None and (fired is None or hit < fired[1]):
                    fired = (ev, hit)
            if fired is not None:
                ev, tau_hit = fired
                step = tau_hit
                rec.step = step

            traj.segments.append(rec)
            values = seg.values_at(step)
            write_back(built, values, case, state)
            t = t + step
            state.t = t
            try:
                refine_state(built, case, state)
            except (AnchorInconsistent, SingularJacobian) as exc:
                raise SegmentFailure(
                    f"state refinement at t={t:.6f}: {exc}", time=t) from exc

            if mode == QSS:
                # reactive limits are enforced by PV->PQ switching between
                # segments only, never inside one
                for isl in built.islands:
                    for gid in isl.machines:
                        g = case.gen_by_id[gid]
                        ms = state.mach[gid]
                        if ms.q_fixed is None and not \
                                (g.q_min <= ms.q_g <= g.q_max):
                            ms.q_fixed = min(max(ms.q_g, g.q_min), g.q_max)
                            state.bump()
                            traj.events.append(EventRecord(
                                t, "q_limit", gid, {"q": ms.q_fixed}))

            if fired is not None:
                conditional.remove(fired[0])
                traj.events.append(EventRecord(
                    t, "conditional", fired[0].condition.text,
                    {"resolved_t": t}))
                running = _execute_event(case, state, fired[0], t, traj,
                                         config)
                continue

            if (config.mode == HYBRID and mode == DYNAMIC
                    and t - state.last_dyn_entry >= config.dwell - 1e-9
                    and any(isl.machines for isl in built.islands)):
                verdict = steadiness_verdict(case, state, built, seg,
                                             config.eps_t)
                if verdict.system_steady:
                    mode_switch(case, state, "dyn->qss", verdict)
                    traj.events.append(EventRecord(
                        t, "mode_switch", "dyn->qss",
                        {"verdict": verdict}))
    except SegmentFailure as exc:
        traj.failure = str(exc)
        traj.events.append(EventRecord(t, "failure", str(exc), {}))
    traj.wall_time = _time.perf_counter() - wall0
    return traj
