"""Command-line front end: run simulations and compare solver configurations.

Exit codes: 0 success, 1 solve failure, 2 usage error.  Verbosity comes from
the HESIM_LOG environment variable (debug|info|warning).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import caseio
from .errors import HesimError
from .scheduler import HYBRID, RunConfig, run_simulation

log = logging.getLogger("hesim")


def _setup_logging() -> None:
    level = os.environ.get("HESIM_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("case", help="case file path, or builtin:<name>")
    p.add_argument("--mode", default=HYBRID,
                   choices=["hybrid", "dynamic", "qss"])
    p.add_argument("--order", type=int, default=15,
                   help="series order N (4..40)")
    p.add_argument("--eps-t", type=float, default=1e-3,
                   help="steady-state threshold, per-unit/s")
    p.add_argument("--tol", type=float, default=1e-6,
                   help="segment residual tolerance")
    p.add_argument("--dt-out", type=float, default=0.1,
                   help="output sampling interval, s")
    p.add_argument("--t-end", type=float, default=None,
                   help="override the case's stop time")
    p.add_argument("--out", default=None, help="trajectory file path")
    p.add_argument("--summary", default=None,
                   help="machine-readable key=value summary path")
    p.add_argument("--seed", type=int, default=0)


def _load(case_arg: str):
    if case_arg.startswith("builtin:"):
        return caseio.builtin_case(case_arg.split(":", 1)[1])
    return caseio.load_case(case_arg)


def _config(args, script) -> RunConfig:
    t_end = args.t_end
    if t_end is None:
        stops = [e.t_due for e in script if e.kind == "stop"]
        t_end = min(stops) if stops else 10.0
    return RunConfig(mode=args.mode, order=args.order, eps_t=args.eps_t,
                     tol_res=args.tol, dt_out=args.dt_out, t_end=t_end,
                     seed=args.seed)


def _summary_pairs(traj, config: RunConfig) -> list:
    counts = traj.segment_counts()
    total = sum(s.step for s in traj.segments)
    return [
        ("case", traj.case.name),
        ("mode", config.mode),
        ("order", config.order),
        ("eps_t", config.eps_t),
        ("t_end", total),
        ("qss_time", traj.qss_time()),
        ("qss_fraction", traj.qss_fraction()),
        ("event_count", len(traj.events)),
        ("segments_dynamic", counts.get("dynamic", 0)),
        ("segments_qss", counts.get("qss", 0)),
        ("failure", traj.failure or ""),
        ("wall_time_s", round(traj.wall_time, 3)),
    ]


def cmd_simulate(args) -> int:
    try:
        case, script = _load(args.case)
    except (OSError, HesimError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    config = _config(args, script)
    traj = run_simulation(case, script, config)

    if args.out and traj.segments:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(caseio.write_trajectory(traj, config.dt_out))
    pairs = _summary_pairs(traj, config)
    for k, v in pairs:
        print(f"{k}={v}")
    if args.summary:
        with open(args.summary, "w", encoding="utf-8") as fh:
            fh.write("".join(f"{k}={v}\n" for k, v in pairs))
    if traj.failure:
        print(f"error: {traj.failure}", file=sys.stderr)
        return 1
    return 0


def _method_event_times(case, script, methods, config):
    """Conditional-event times from fixed-step baseline integrations.

    Only scripts made of ramps (no instant switches) can be replayed this
    way; the 2-bus ramping study is the intended use.
    """
    import copy

    from . import model as mdl
    from .errors import HesimError as _He
    from .reference import DaeModel, integrate_reference, linear_crossing
    from .scheduler import SWITCH_KINDS

    if any(e.kind in SWITCH_KINDS for e in script):
        raise _He("--methods supports ramp-only scripts")
    conds = [e for e in script if e.condition is not None]
    if not conds:
        return []
    st = mdl.init_equilibrium(case, mode=config.mode
                              if config.mode != "hybrid" else "dynamic")
    for ev in script:
        if ev.kind == "ramp_load":
            st.ramps.append(mdl.Ramp(f"load:{ev.payload['load']}",
                                     ev.payload["rate"], ev.t_due))
        elif ev.kind == "ramp_gen":
            st.ramps.append(mdl.Ramp(f"gen:{ev.payload['gen']}",
                                     ev.payload["rate"], ev.t_due))
    built = mdl.build_system(case, st, st.mode)
    mdl.refine_state(built, case, st)
    name = {"me": "modified-euler", "trap": "trapezoidal",
            "adaptive": "adaptive-high-order"}
    rows = []
    for m in methods:
        model = DaeModel(built, copy.deepcopy(st))
        out = integrate_reference(model, (0.0, config.t_end), name[m],
                                  h=0.01)
        for ev in conds:
            c = ev.condition
            # rebuild the channel from the sampled variables
            rec = _SampledChannel(case, built, out)
            hs = np.asarray([rec.value(c, k) for k in range(len(out.ts))])
            t_hit = linear_crossing(out.ts, hs)
            if t_hit is not None:
                rows.append((m, c.text, t_hit))
    return rows


class _SampledChannel:
    def __init__(self, case, built, out):
        self.case = case
        self.built = built
        self.out = out

    def value(self, cond, k):
        chan, cargs = cond.channel, cond.args
        out = self.out
        if chan == "t":
            lhs = out.ts[k]
        elif chan == "V":
            bus = int(cargs[0])
            lhs = abs(complex(out.col(f"vx:{bus}")[k],
                              out.col(f"vy:{bus}")[k]))
        elif chan == "I":
            f_bus, t_bus = int(cargs[0]), int(cargs[1])
            br = next(b for b in self.case.branches
                      if {b.from_bus, b.to_bus} == {f_bus, t_bus})
            vf = complex(out.col(f"vx:{f_bus}")[k], out.col(f"vy:{f_bus}")[k])
            vt = complex(out.col(f"vx:{t_bus}")[k], out.col(f"vy:{t_bus}")[k])
            lhs = abs(br.y_series * (vf - vt) + 0.5j * br.b_sh * vf)
        else:
            raise KeyError(f"channel {chan!r} unsupported for --methods")
        return lhs - cond.rhs if cond.op.startswith(">") else cond.rhs - lhs


def cmd_compare(args) -> int:
    try:
        case, script = _load(args.case)
    except (OSError, HesimError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    runs = [m.strip() for m in args.runs.split(",") if m.strip()]
    methods = [m.strip() for m in (args.methods or "").split(",") if m.strip()]
    if len(runs) + len(methods) < 2:
        print("error: compare needs at least two configurations",
              file=sys.stderr)
        return 2

    trajs = {}
    for mode in runs:
        ns = argparse.Namespace(**vars(args))
        ns.mode = mode
        config = _config(ns, script)
        trajs[mode] = run_simulation(case, script, config)
        if trajs[mode].failure:
            print(f"error: {mode}: {trajs[mode].failure}", file=sys.stderr)
            return 1

    base = runs[0]
    t_end = min(t.t_end for t in trajs.values())
    ts = np.arange(0.0, t_end + 1e-9, args.dt_out)
    chans = [("f", ())] + [("V", (str(b.bus),)) for b in case.buses]
    lines = []
    for mode in runs[1:]:
        for chan, cargs in chans:
            a = trajs[base].channel(chan, cargs, ts)
            b = trajs[mode].channel(chan, cargs, ts)
            d = np.abs(a - b)
            name = chan if not cargs else f"{chan}:{','.join(cargs)}"
            lines.append((f"{base}|{mode}", name, float(np.max(d)),
                          float(np.mean(d))))
    print(f"# compare {args.case}: baseline={base}, dt={args.dt_out}")
    print("pair,channel,max_abs_diff,mean_abs_diff")
    for pair, name, mx, mn in lines:
        print(f"{pair},{name},{mx!r},{mn!r}")

    # event-time table for condition-triggered events; fixed-step reference
    # methods resolve them by linear interpolation of the sampled channel
    cond_rows = []
    for mode in runs:
        for ev in trajs[mode].events:
            if ev.kind == "conditional":
                cond_rows.append((mode, ev.label, ev.t))
    if methods:
        try:
            cond_rows += _method_event_times(case, script, methods,
                                             _config(args, script))
        except HesimError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    if cond_rows:
        base_times = {label: t for mode, label, t in cond_rows
                      if mode == base}
        print("run,condition,t_resolved,abs_diff_vs_baseline")
        for mode, label, t in cond_rows:
            d = abs(t - base_times[label]) if label in base_times else float("nan")
            print(f"{mode},{label},{t!r},{d!r}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("pair,channel,max_abs_diff,mean_abs_diff\n")
            for pair, name, mx, mn in lines:
                fh.write(f"{pair},{name},{mx!r},{mn!r}\n")
            for mode, label, t in cond_rows:
                fh.write(f"event,{mode},{label},{t!r}\n")
    return 0


def main(argv=None) -> int:
    _setup_logging()
    parser = argparse.ArgumentParser(
        prog="hesim",
        description="Extended-term hybrid QSS/dynamic grid simulation on "
                    "holomorphic-embedding series.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_sim = sub.add_parser("simulate", help="run one simulation")
    _add_run_flags(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_cmp = sub.add_parser("compare", help="run and diff configurations")
    _add_run_flags(p_cmp)
    p_cmp.add_argument("--runs", default="hybrid,dynamic",
                       help="comma-separated mode list, first is baseline")
    p_cmp.add_argument("--methods", default="",
                       help="also resolve conditional events with fixed-step "
                            "baselines: me, trap (ramp-only scripts)")
    p_cmp.set_defaults(func=cmd_compare)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except HesimError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
