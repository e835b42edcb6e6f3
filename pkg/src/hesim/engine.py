"""Holomorphic-embedding solver core.

A simulation segment (time embedding) or a switching problem (alpha
embedding) is described as a system of *polynomial* equations over a set of
unknown series: algebraic equations ``g = 0`` and differential relations
``dx/dt = f`` whose right-hand sides are sums of terms, each term being a
constant times at most two factors (an unknown series or a known input
series).  Substituting series and matching powers of the embedding variable
turns the system into one explicit update per state plus one linear solve
per order, with a constant matrix: the order-0 Jacobian of the algebraic
block, factorized once per segment and reused for every order.

Anything quadratic-and-above in the physics (products of voltages, rotor
trigonometry, motor slip couplings) is expressed at build time with at most
bilinear terms by introducing auxiliary unknowns, so this module never needs
higher arities.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    AnchorInconsistent,
    NoConvergenceAtAlpha1,
    NoValidRange,
    SingularJacobian,
)
from .series import (
    PadeApproximant,
    TruncatedSeries,
    _taylor_of_pade,
    chebyshev_probes,
    diagonal_orders,
    pade_with_fallback,
    shrink_refine_range,
)

ALG = "alg"
STATE = "state"

# embedding kinds, recorded on problems/solutions for bookkeeping
TIME_DYNAMIC = "TIME_DYNAMIC"
TIME_QSS = "TIME_QSS"
ALPHA_POWERFLOW = "ALPHA_POWERFLOW"
ALPHA_ADD = "ALPHA_ADD"
ALPHA_CUT = "ALPHA_CUT"
ALPHA_PARAM = "ALPHA_PARAM"

ALPHA_CHECKPOINTS = (0.25, 0.5, 0.75, 1.0)

_ABSENT = -1  # encoding for a missing second factor


class SystemBuilder:
    """Collects unknowns, known inputs and polynomial terms, then compiles."""

    def __init__(self):
        self.var_names: list[str] = []
        self.var_kinds: list[str] = []
        self.known_names: list[str] = []
        self.eq_names: list[str] = []
        # raw terms: (is_state_row, row, coeff, enc1, enc2)
        self._terms: list[tuple[bool, int, float, int, int]] = []
        self._state_row_of_var: dict[int, int] = {}

    # -- registration --------------------------------------------------------

    def alg(self, name: str) -> int:
        self.var_names.append(name)
        self.var_kinds.append(ALG)
        return len(self.var_names) - 1

    def state(self, name: str) -> int:
        self.var_names.append(name)
        self.var_kinds.append(STATE)
        slot = len(self.var_names) - 1
        self._state_row_of_var[slot] = len(self._state_row_of_var)
        return slot

    def known(self, name: str) -> int:
        """Known input series; the returned id is usable as a term factor."""
        self.known_names.append(name)
        return -(len(self.known_names) + 1)  # -2, -3, ... (-1 means absent)

    def alg_eq(self, name: str) -> int:
        self.eq_names.append(name)
        return len(self.eq_names) - 1

    def term(self, eq: int, coeff: float, *factors: int) -> None:
        if len(factors) > 2:
            raise ValueError("terms must have arity <= 2")
        if coeff == 0.0:
            return
        f = list(factors) + [_ABSENT] * (2 - len(factors))
        self._terms.append((False, eq, float(coeff), f[0], f[1]))

    def rhs_term(self, state_slot: int, coeff: float, *factors: int) -> None:
        if self.var_kinds[state_slot] != STATE:
            raise ValueError("rhs_term target must be a state")
        if len(factors) > 2:
            raise ValueError("terms must have arity <= 2")
        if coeff == 0.0:
            return
        row = self._state_row_of_var[state_slot]
        f = list(factors) + [_ABSENT] * (2 - len(factors))
        self._terms.append((True, row, float(coeff), f[0], f[1]))

    # -- compilation -----------------------------------------------------------

    def compile(self) -> "CompiledSystem":
        nv = len(self.var_names)
        alg_slots = np.array(
            [i for i, k in enumerate(self.var_kinds) if k == ALG], dtype=int)
        state_slots = np.array(
            [i for i, k in enumerate(self.var_kinds) if k == STATE], dtype=int)
        if len(alg_slots) != len(self.eq_names):
            raise ValueError(
                f"{len(alg_slots)} algebraic unknowns vs "
                f"{len(self.eq_names)} algebraic equations")

        def resolve(f: int) -> int:
            if f == _ABSENT:
                return _ABSENT
            if f < _ABSENT:
                return nv + (-f - 2)  # known slot
            return f

        groups: dict[tuple[bool, int], list[list[float]]] = {}
        for is_state, row, coeff, f1, f2 in self._terms:
            a, b = resolve(f1), resolve(f2)
            if a == _ABSENT and b != _ABSENT:
                a, b = b, a
            arity = int(a != _ABSENT) + int(b != _ABSENT)
            groups.setdefault((is_state, arity), []).append([row, coeff, a, b])

        def pack(key):
            rows = groups.get(key, [])
            if not rows:
                return (np.zeros(0, int), np.zeros(0), np.zeros(0, int),
                        np.zeros(0, int))
            m = np.array(rows, dtype=float)
            return (m[:, 0].astype(int), m[:, 1].copy(),
                    m[:, 2].astype(int), m[:, 3].astype(int))

        return CompiledSystem(
            var_names=list(self.var_names),
            known_names=list(self.known_names),
            eq_names=list(self.eq_names),
            alg_slots=alg_slots,
            state_slots=state_slots,
            terms={
                "alg0": pack((False, 0)),
                "alg1": pack((False, 1)),
                "alg2": pack((False, 2)),
                "rhs0": pack((True, 0)),
                "rhs1": pack((True, 1)),
                "rhs2": pack((True, 2)),
            },
        )


@dataclass
class CompiledSystem:
    """Solvable polynomial DAE/algebraic system (see module docstring)."""

    var_names: list[str]
    known_names: list[str]
    eq_names: list[str]
    alg_slots: np.ndarray
    state_slots: np.ndarray
    terms: dict[str, tuple]

    def __post_init__(self):
        self.nv = len(self.var_names)
        self.nk = len(self.known_names)
        self.n_alg = len(self.alg_slots)
        self.n_state = len(self.state_slots)
        self._alg_local = np.full(self.nv, -1, dtype=int)
        self._alg_local[self.alg_slots] = np.arange(self.n_alg)
        self.index = {n: i for i, n in enumerate(self.var_names)}
        self._jac_struct = self._build_jac_struct()

    # -- term evaluation over the coefficient table -----------------------------

    def _coeff_of(self, kind: str, C: np.ndarray, k: int, n_rows: int) -> np.ndarray:
        """k-th embedding coefficient of every equation/rhs row."""
        out = np.zeros(n_rows)
        r0, c0, _, _ = self.terms[kind + "0"]
        if k == 0 and len(r0):
            out += np.bincount(r0, weights=c0, minlength=n_rows)
        r1, c1, f1, _ = self.terms[kind + "1"]
        if len(r1):
            out += np.bincount(r1, weights=c1 * C[f1, k], minlength=n_rows)
        r2, c2, g1, g2 = self.terms[kind + "2"]
        if len(r2):
            A = C[g1, : k + 1]
            B = C[g2, k::-1]
            vals = np.einsum("ij,ij->i", A, B)
            out += np.bincount(r2, weights=c2 * vals, minlength=n_rows)
        return out

    def _table(self, anchors: np.ndarray, kcoeffs: np.ndarray, order: int) -> np.ndarray:
        C = np.zeros((self.nv + self.nk, order + 1))
        C[: self.nv, 0] = anchors
        if self.nk:
            m = min(order + 1, kcoeffs.shape[1])
            C[self.nv:, :m] = kcoeffs[:, :m]
        return C

    # -- Jacobian of the algebraic block -----------------------------------------

    def _build_jac_struct(self):
        rows, cols, coefs, others = [], [], [], []
        r1, c1, f1, _ = self.terms["alg1"]
        for r, c, f in zip(r1, c1, f1):
            if f < self.nv and self._alg_local[f] >= 0:
                rows.append(r); cols.append(self._alg_local[f])
                coefs.append(c); others.append(-1)
        r2, c2, g1, g2 = self.terms["alg2"]
        for r, c, a, b in zip(r2, c2, g1, g2):
            if a < self.nv and self._alg_local[a] >= 0:
                rows.append(r); cols.append(self._alg_local[a])
                coefs.append(c); others.append(b)
            if b < self.nv and self._alg_local[b] >= 0:
                rows.append(r); cols.append(self._alg_local[b])
                coefs.append(c); others.append(a)
        return (np.array(rows, int), np.array(cols, int),
                np.array(coefs, float), np.array(others, int))

    def alg_jacobian(self, values: np.ndarray, kvalues: np.ndarray) -> sp.csc_matrix:
        """d(algebraic residual)/d(algebraic unknowns) at point values."""
        rows, cols, coefs, others = self._jac_struct
        ext = np.concatenate([values, kvalues]) if self.nk else np.asarray(values)
        data = coefs.copy()
        mask = others >= 0
        data[mask] *= ext[others[mask]]
        return sp.coo_matrix(
            (data, (rows, cols)), shape=(self.n_alg, self.n_alg)).tocsc()

    # -- point evaluation ---------------------------------------------------------

    def _rows_at_point(self, kind: str, ext: np.ndarray, n_rows: int) -> np.ndarray:
        out = np.zeros(n_rows)
        r0, c0, _, _ = self.terms[kind + "0"]
        if len(r0):
            out += np.bincount(r0, weights=c0, minlength=n_rows)
        r1, c1, f1, _ = self.terms[kind + "1"]
        if len(r1):
            out += np.bincount(r1, weights=c1 * ext[f1], minlength=n_rows)
        r2, c2, g1, g2 = self.terms[kind + "2"]
        if len(r2):
            out += np.bincount(r2, weights=c2 * ext[g1] * ext[g2],
                               minlength=n_rows)
        return out

    def _ext(self, values, kvalues) -> np.ndarray:
        if self.nk:
            return np.concatenate([np.asarray(values, float),
                                   np.asarray(kvalues, float)])
        return np.asarray(values, float)

    def alg_residual(self, values: np.ndarray, kvalues: np.ndarray) -> np.ndarray:
        return self._rows_at_point("alg", self._ext(values, kvalues), self.n_alg)

    def state_rhs(self, values: np.ndarray, kvalues: np.ndarray) -> np.ndarray:
        return self._rows_at_point("rhs", self._ext(values, kvalues), self.n_state)

    def residual(self, values: np.ndarray, dvalues: np.ndarray,
                 kvalues: np.ndarray) -> np.ndarray:
        """Stacked [dx/dt - f ; g] residual at point values."""
        parts = []
        if self.n_state:
            parts.append(np.asarray(dvalues) - self.state_rhs(values, kvalues))
        if self.n_alg:
            parts.append(self.alg_residual(values, kvalues))
        return np.concatenate(parts) if parts else np.zeros(0)

    def full_jacobian(self, values: np.ndarray, kvalues: np.ndarray):
        """(df/dvars, dg/dvars) dense, for the implicit reference solvers."""
        ext = self._ext(values, kvalues)

        def jac(kind, n_rows):
            J = np.zeros((n_rows, self.nv))
            r1, c1, f1, _ = self.terms[kind + "1"]
            if len(r1):
                m = f1 < self.nv
                np.add.at(J, (r1[m], f1[m]), c1[m])
            r2, c2, g1, g2 = self.terms[kind + "2"]
            if len(r2):
                m = g1 < self.nv
                np.add.at(J, (r2[m], g1[m]), c2[m] * ext[g2[m]])
                m = g2 < self.nv
                np.add.at(J, (r2[m], g2[m]), c2[m] * ext[g1[m]])
            return J

        return jac("rhs", self.n_state), jac("alg", self.n_alg)

    def newton_refine(self, values: np.ndarray, kvalues: np.ndarray,
                      tol: float = 1e-12, maxiter: int = 12) -> np.ndarray:
        """Polish the algebraic unknowns so g = 0 holds at the anchor."""
        v = np.array(values, dtype=float)
        if not self.n_alg:
            return v
        for _ in range(maxiter):
            r = self.alg_residual(v, kvalues)
            if np.max(np.abs(r)) <= tol:
                return v
            J = self.alg_jacobian(v, kvalues)
            try:
                delta = spla.spsolve(J, -r)
            except Exception as exc:  # singular factorization
                raise SingularJacobian(str(exc)) from exc
            if not np.all(np.isfinite(delta)):
                raise SingularJacobian("non-finite Newton step")
            v[self.alg_slots] += delta
        r = np.max(np.abs(self.alg_residual(v, kvalues)))
        if r > max(tol, 1e-7):
            raise AnchorInconsistent(f"Newton refinement stalled at {r:.3e}")
        return v

    # -- the order-by-order solve ---------------------------------------------------

    def solve_series(self, anchors: np.ndarray, kcoeffs: np.ndarray, order: int,
                     anchor_tol: float = 1e-6) -> np.ndarray:
        """Coefficient table (vars+knowns x order+1); one linear solve per order.

        States update explicitly from k * x[k] = (k-1)-th coefficient of f;
        the algebraic block solves J y[k] = -rhs with the anchor-point
        Jacobian factorized once.
        """
        C = self._table(anchors, kcoeffs, order)
        if self.n_alg:
            res0 = self._coeff_of("alg", C, 0, self.n_alg)
            if np.max(np.abs(res0)) > anchor_tol:
                worst = int(np.argmax(np.abs(res0)))
                raise AnchorInconsistent(
                    f"anchor residual {np.max(np.abs(res0)):.3e} "
                    f"(worst: {self.eq_names[worst]})")
        lu = None
        if self.n_alg:
            kv = C[self.nv:, 0] if self.nk else np.zeros(0)
            J = self.alg_jacobian(C[: self.nv, 0], kv)
            try:
                lu = spla.splu(J)
            except Exception as exc:
                raise SingularJacobian(str(exc)) from exc
        for k in range(1, order + 1):
            if self.n_state:
                fk = self._coeff_of("rhs", C, k - 1, self.n_state)
                C[self.state_slots, k] = fk / k
            if self.n_alg:
                rhs = self._coeff_of("alg", C, k, self.n_alg)
                sol = lu.solve(-rhs)
                if not np.all(np.isfinite(sol)):
                    raise SingularJacobian(f"non-finite coefficients at order {k}")
                C[self.alg_slots, k] = sol
        return C


# --- segment solutions ------------------------------------------------------------


def batch_pade(C: np.ndarray, n_num: int, n_den: int):
    """Diagonal Pade for every row of a coefficient table.

    Rows whose Toeplitz system misbehaves fall down the usual ladder
    individually (a row that ends at denominator order 0 keeps its full
    series as the numerator).  Arrays are zero-padded to a common shape.
    """
    nv, width = C.shape
    L, M = n_num, n_den
    num_w = max(L + 1, width)
    nums = np.zeros((nv, num_w))
    dens = np.zeros((nv, M + 1))
    dens[:, 0] = 1.0
    if M == 0 or width < L + M + 1:
        nums[:, :width] = C
        return nums, dens

    scale = np.maximum(1.0, np.max(np.abs(C), axis=1))
    tails = np.max(np.abs(C[:, 1:]), axis=1)
    poly_rows = tails <= 1e-14 * scale  # constants: series is its own Pade
    nums[poly_rows, 0] = C[poly_rows, 0]

    todo = np.where(~poly_rows)[0]
    if len(todo):
        T = np.empty((len(todo), M, M))
        rhs = np.empty((len(todo), M))
        for i in range(M):
            rhs[:, i] = -C[todo, L + 1 + i]
            for j in range(M):
                idx = L + i - j
                T[:, i, j] = C[todo, idx] if idx >= 0 else 0.0
        try:
            b = np.linalg.solve(T, rhs[:, :, None])[:, :, 0]
            ok = np.all(np.isfinite(b), axis=1)
        except np.linalg.LinAlgError:
            b = np.zeros((len(todo), M))
            ok = np.zeros(len(todo), dtype=bool)
        for pos, row in enumerate(todo):
            accepted = False
            if ok[pos]:
                den = np.concatenate(([1.0], b[pos]))
                num = np.array([
                    sum(den[j] * (C[row, i - j] if i - j >= 0 else 0.0)
                        for j in range(min(i, M) + 1))
                    for i in range(L + 1)
                ])
                re = _taylor_of_pade(num, den, L + M)
                if np.max(np.abs(re - C[row, : L + M + 1])) <= 1e-8 * scale[row]:
                    nums[row, : L + 1] = num
                    nums[row, L + 1:] = 0.0
                    dens[row, 0] = 1.0
                    dens[row, 1:] = b[pos]
                    accepted = True
            if not accepted:
                p = pade_with_fallback(TruncatedSeries(C[row]), L, M)
                nums[row] = 0.0
                nums[row, : len(p.num)] = p.num.real
                dens[row] = 0.0
                dens[row, : len(p.den)] = p.den.real
    return nums, dens


def _polyval_rows(coeffs: np.ndarray, t: float) -> np.ndarray:
    out = coeffs[:, -1].copy()
    for k in range(coeffs.shape[1] - 2, -1, -1):
        out = out * t + coeffs[:, k]
    return out


def min_real_positive_root(nums: np.ndarray, dens: np.ndarray,
                           limit: float) -> float:
    """Smallest *genuine* real pole in (0, limit] over all rows, or inf.

    A real denominator root marks a pole of the rational approximant; the
    certified range of a segment must stay strictly below the first one even
    when the approximant happens to satisfy the residual on both sides (the
    exact solution continued past its own singularity does).  Roots whose
    residue is negligible against the variable's scale are spurious
    zero-pole pairs from fitting float noise and are ignored.
    """
    best = np.inf
    for num, den in zip(nums, dens):
        c = np.trim_zeros(den, "b")
        if len(c) < 2:
            continue
        scale = max(1.0, float(np.max(np.abs(num))))
        dc = c[1:] * np.arange(1, len(c))
        roots = np.polynomial.polynomial.polyroots(c)
        for r in roots:
            if abs(r.imag) > 1e-9 * (1.0 + abs(r.real)):
                continue
            x = r.real
            if not (1e-12 < x <= limit):
                continue
            nv = abs(np.polynomial.polynomial.polyval(x, num))
            dv = abs(np.polynomial.polynomial.polyval(x, dc))
            residue = nv / max(dv, 1e-300)
            if residue > 1e-9 * scale:
                best = min(best, x)
    return best


@dataclass
class SegmentSolution:
    """One analytic segment: series + Pade per unknown, plus its range.

    Times inside the segment are local (0 at the segment anchor); the
    scheduler tracks the absolute start time.
    """

    kind: str
    system: CompiledSystem
    C: np.ndarray              # (nv, order+1) series coefficients
    kcoeffs: np.ndarray        # (nk, order+1) known input coefficients
    pade_num: np.ndarray
    pade_den: np.ndarray
    t_e: float = np.inf
    mode: str = ""

    def names(self) -> list[str]:
        return self.system.var_names

    def series(self, name: str) -> TruncatedSeries:
        return TruncatedSeries(self.C[self.system.index[name]])

    def pade(self, name: str) -> PadeApproximant:
        i = self.system.index[name]
        den = np.trim_zeros(self.pade_den[i], "b")
        return PadeApproximant(self.pade_num[i], den if len(den) else [1.0])

    def values_at(self, t: float, use_pade: bool = True) -> np.ndarray:
        if use_pade:
            den = _polyval_rows(self.pade_den, t)
            den = np.where(np.abs(den) < 1e-12, np.nan, den)
            return _polyval_rows(self.pade_num, t) / den
        return _polyval_rows(self.C, t)

    def derivs_at(self, t: float) -> np.ndarray:
        n, d = self.pade_num, self.pade_den
        dn = n[:, 1:] * np.arange(1, n.shape[1]) if n.shape[1] > 1 else None
        dd = d[:, 1:] * np.arange(1, d.shape[1]) if d.shape[1] > 1 else None
        nv_ = _polyval_rows(n, t)
        dv_ = _polyval_rows(d, t)
        dnv = _polyval_rows(dn, t) if dn is not None else np.zeros(n.shape[0])
        ddv = _polyval_rows(dd, t) if dd is not None else np.zeros(d.shape[0])
        return (dnv * dv_ - nv_ * ddv) / (dv_ * dv_)

    def known_values_at(self, t: float) -> np.ndarray:
        if self.kcoeffs.size == 0:
            return np.zeros(0)
        return _polyval_rows(self.kcoeffs, t)

    def value(self, name: str, t):
        i = self.system.index[name]
        tt = np.atleast_1d(np.asarray(t, dtype=float))
        num = np.polynomial.polynomial.polyval(tt, self.pade_num[i])
        den = np.polynomial.polynomial.polyval(tt, self.pade_den[i])
        out = num / den
        return out if np.ndim(t) else float(out[0])

    def residual_max_at(self, t: float) -> float:
        vals = self.values_at(t)
        if not np.all(np.isfinite(vals)):
            return np.inf
        kv = self.known_values_at(t)
        dvals = (self.derivs_at(t)[self.system.state_slots]
                 if self.system.n_state else np.zeros(0))
        r = self.system.residual(vals, dvals, kv)
        return float(np.max(np.abs(r))) if r.size else 0.0


@dataclass
class HeProblem:
    """One embedding problem: what to solve and how far to trust it."""

    kind: str                  # TIME_* or ALPHA_*
    system: CompiledSystem
    anchors: np.ndarray        # order-0 values (the embedding's anchor)
    knowns: np.ndarray         # (nk, width) input series coefficients
    order: int = 15
    tol_res: float = 1e-6
    t_max: float = 1.0


def solve_coefficients(problem: HeProblem) -> SegmentSolution:
    """Solve an embedding problem order-by-order into an analytic segment.

    Alpha problems get their range certified on [0, 1]; time problems up to
    the requested horizon.
    """
    t_max = 1.0 if problem.kind.startswith("ALPHA") else problem.t_max
    return solve_segment(problem.system, problem.anchors, problem.knowns,
                         problem.order, problem.kind, problem.tol_res, t_max)


def solve_segment(system: CompiledSystem, anchors: np.ndarray,
                  kcoeffs: np.ndarray, order: int, kind: str,
                  tol_res: float, t_max: float,
                  anchor_tol: float = 1e-6, n_probe: int = 8) -> SegmentSolution:
    """Solve a time-embedded segment and certify its effective range."""
    C = system.solve_series(anchors, kcoeffs, order, anchor_tol=anchor_tol)
    # a variable whose entire tail sits at float noise is a constant; keeping
    # the noise would wreck the range estimate at large t (noise * t^N)
    tail = np.max(np.abs(C[: system.nv, 1:]), axis=1)
    scale = np.maximum(1.0, np.abs(C[: system.nv, 0]))
    C[: system.nv][tail <= 1e-12 * scale, 1:] = 0.0
    L, M = diagonal_orders(order)
    nums, dens = batch_pade(C[: system.nv], L, M)
    seg = SegmentSolution(kind=kind, system=system, C=C[: system.nv],
                          kcoeffs=kcoeffs, pade_num=nums, pade_den=dens)

    pole = min_real_positive_root(nums, dens, t_max)
    t_cap = min(t_max, 0.995 * pole)
    if t_cap <= 0:
        raise NoValidRange("rational approximant has a pole at the anchor")

    def worst_residual(t_end: float) -> float:
        return max(seg.residual_max_at(t) for t in chebyshev_probes(t_end, n_probe))

    seg.t_e = shrink_refine_range(worst_residual, tol_res, t_cap)
    return seg


def solve_alpha_problem(system: CompiledSystem, anchors: np.ndarray,
                        kcoeffs: np.ndarray, kind: str, order: int = 30,
                        path_tol: float = 1e-3, predictor_tol: float = 1e-2,
                        anchor_tol: float = 1e-6) -> np.ndarray:
    """Continuation from alpha=0 (pre-switch) to the alpha=1 state.

    The Pade continuation is validated along the path (alpha = 0.25, 0.5,
    0.75) and acts as a predictor at alpha = 1, where a Newton corrector
    lands on the exact post-switch state; the correction must stay small so
    a branch jump cannot masquerade as convergence.  Failure after one order
    increase means the switch target does not exist (e.g. energizing into an
    infeasible condition).
    """
    last_err = None
    for n in (order, order + 10):
        C = system.solve_series(anchors, kcoeffs, n, anchor_tol=anchor_tol)
        L, M = diagonal_orders(n)
        nums, dens = batch_pade(C[: system.nv], L, M)
        seg = SegmentSolution(kind=kind, system=system, C=C[: system.nv],
                              kcoeffs=kcoeffs, pade_num=nums, pade_den=dens)
        ok = True
        for a in ALPHA_CHECKPOINTS:
            r = seg.residual_max_at(a)
            limit = predictor_tol if a == 1.0 else path_tol
            if not np.isfinite(r) or r > limit:
                ok = False
                last_err = f"residual {r:.3e} at alpha={a}"
                break
        if not ok:
            continue
        values = seg.values_at(1.0)
        try:
            polished = system.newton_refine(values, seg.known_values_at(1.0),
                                            tol=1e-12)
        except (AnchorInconsistent, SingularJacobian) as exc:
            last_err = str(exc)
            continue
        if np.max(np.abs(polished - values)) > 0.1:
            last_err = "corrector moved off the continuation branch"
            continue
        return polished
    raise NoConvergenceAtAlpha1(f"{kind}: {last_err}")
