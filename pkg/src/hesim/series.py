"""Truncated power-series arithmetic, Pade conversion and effective ranges.

Every analytic segment produced by the embedding engine is represented per
variable either as a truncated power series ``x(t) = sum x[k] t^k`` or as the
rational (Pade) approximant built from those coefficients.  All operations
here are pure and the value types are immutable, so solutions can be shared
freely between threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import (
    DenominatorZero,
    NoValidRange,
    SingularPade,
    ZeroLeadingCoefficient,
)

_RANGE_FLOOR_FACTOR = 2.0 ** -20  # smallest probed fraction of t_max


def _as_coeffs(values) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(values))
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("coefficient array must be non-empty and 1-D")
    if not np.issubdtype(arr.dtype, np.number):
        raise ValueError("coefficients must be numeric")
    arr = arr.astype(complex) if np.iscomplexobj(arr) else arr.astype(float)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class TruncatedSeries:
    """Coefficients x[0..N] of a power series in the embedding variable."""

    coeffs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "coeffs", _as_coeffs(self.coeffs))

    @property
    def order(self) -> int:
        return len(self.coeffs) - 1

    def eval(self, t):
        """Horner evaluation; exact constant term at t=0."""
        c = self.coeffs
        out = np.full_like(np.asarray(t, dtype=float), c[-1], dtype=c.dtype)
        for k in range(len(c) - 2, -1, -1):
            out = out * t + c[k]
        return out if np.ndim(t) else out[()]

    def deriv(self) -> "TruncatedSeries":
        c = self.coeffs
        if len(c) == 1:
            return TruncatedSeries(np.zeros(1, dtype=c.dtype))
        return TruncatedSeries(c[1:] * np.arange(1, len(c)))


@dataclass(frozen=True, eq=False)
class PadeApproximant:
    """Rational approximant num/den with the normalization den[0] = 1."""

    num: np.ndarray
    den: np.ndarray

    def __post_init__(self):
        num = _as_coeffs(self.num)
        den = _as_coeffs(self.den)
        if abs(den[0]) < 1e-300:
            raise ValueError("Pade denominator must have nonzero constant term")
        if den[0] != 1.0:
            num = _as_coeffs(num / den[0])
            den = _as_coeffs(den / den[0])
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)

    def eval(self, t):
        n = TruncatedSeries(self.num).eval(t)
        d = TruncatedSeries(self.den).eval(t)
        if np.min(np.abs(d)) < 1e-12:
            raise DenominatorZero(f"Pade denominator ~0 at t={t}")
        return n / d

    def deriv_eval(self, t):
        """(num/den)' evaluated at t."""
        n = TruncatedSeries(self.num)
        d = TruncatedSeries(self.den)
        dv = d.eval(t)
        if np.min(np.abs(dv)) < 1e-12:
            raise DenominatorZero(f"Pade denominator ~0 at t={t}")
        return (n.deriv().eval(t) * dv - n.eval(t) * d.deriv().eval(t)) / (dv * dv)


def evaluate(rep, t):
    """Evaluate either representation at t (Pade = num(t)/den(t))."""
    return rep.eval(t)


def series_mul(a: TruncatedSeries, b: TruncatedSeries, n: int) -> TruncatedSeries:
    """Convolution product truncated at order n (n <= a.order + b.order)."""
    if n > a.order + b.order:
        raise ValueError("requested order exceeds available information")
    full = np.convolve(a.coeffs, b.coeffs)
    return TruncatedSeries(full[: n + 1])


def series_add(a: TruncatedSeries, b: TruncatedSeries) -> TruncatedSeries:
    n = max(a.order, b.order)
    out = np.zeros(n + 1, dtype=np.result_type(a.coeffs, b.coeffs))
    out[: len(a.coeffs)] += a.coeffs
    out[: len(b.coeffs)] += b.coeffs
    return TruncatedSeries(out)


def series_sub(a: TruncatedSeries, b: TruncatedSeries) -> TruncatedSeries:
    return series_add(a, TruncatedSeries(-b.coeffs))


def series_reciprocal(a: TruncatedSeries, n: int, tol: float = 1e-9) -> TruncatedSeries:
    """Order-by-order solve of a * result = 1.

    Raises ZeroLeadingCoefficient when |a[0]| < tol, which in network terms
    signals a collapsed (zero-voltage) bus.
    """
    a0 = a.coeffs[0]
    if abs(a0) < tol:
        raise ZeroLeadingCoefficient(f"|a[0]|={abs(a0):.3e} below {tol:.1e}")
    out = np.zeros(n + 1, dtype=np.result_type(a.coeffs, float))
    out[0] = 1.0 / a0
    ac = a.coeffs
    for k in range(1, n + 1):
        jmax = min(k, len(ac) - 1)
        acc = 0.0
        for j in range(1, jmax + 1):
            acc = acc + ac[j] * out[k - j]
        out[k] = -acc / a0
    return TruncatedSeries(out)


def _taylor_of_pade(num: np.ndarray, den: np.ndarray, n: int) -> np.ndarray:
    recip = series_reciprocal(TruncatedSeries(den), n, tol=1e-300)
    return series_mul(TruncatedSeries(np.pad(num, (0, max(0, n + 1 - len(num))))),
                      recip, n).coeffs


def pade_from_series(a: TruncatedSeries, n_num: int, n_den: int) -> PadeApproximant:
    """Build the (n_num, n_den) Pade approximant of a truncated series.

    The denominator coefficients solve the usual Toeplitz system (least
    squares, which also resolves degenerate cases such as polynomial input);
    the result is accepted only if its Taylor re-expansion reproduces the
    input through order n_num + n_den. Otherwise SingularPade is raised and
    the caller is expected to retry at lower denominator order.
    """
    if n_num < 0 or n_den < 0:
        raise ValueError("orders must be nonnegative")
    if n_num + n_den > a.order:
        raise ValueError("n_num + n_den must not exceed the series order")
    c = a.coeffs
    scale = max(1.0, float(np.max(np.abs(c))))
    L, M = n_num, n_den

    def coef(i):
        return c[i] if 0 <= i < len(c) else 0.0

    if M == 0:
        num = np.array([coef(i) for i in range(L + 1)])
        den = np.ones(1)
    else:
        C = np.empty((M, M), dtype=c.dtype)
        rhs = np.empty(M, dtype=c.dtype)
        for i in range(M):
            rhs[i] = -coef(L + 1 + i)
            for j in range(M):
                C[i, j] = coef(L + i - j)
        b, *_ = np.linalg.lstsq(C, rhs, rcond=None)
        den = np.concatenate(([1.0], b))
        num = np.array([
            sum(den[j] * coef(i - j) for j in range(min(i, M) + 1))
            for i in range(L + 1)
        ])

    re = _taylor_of_pade(num, den, L + M)
    if np.max(np.abs(re - c[: L + M + 1])) > 1e-8 * scale:
        raise SingularPade(f"({L},{M}) approximant fails re-expansion check")

    # canonical trimming: a denominator that reduces to [1] means the input
    # was (numerically) a polynomial, so drop its trailing zeros too
    while len(den) > 1 and den[-1] == 0.0:
        den = den[:-1]
    if len(den) == 1:
        while len(num) > 1 and num[-1] == 0.0:
            num = num[:-1]
    return PadeApproximant(num, den)


def pade_with_fallback(a: TruncatedSeries, n_num: int, n_den: int) -> PadeApproximant:
    """SingularPade fallback ladder: lower the denominator order until it
    works; at order 0 the 'Pade' equals the truncated series."""
    m = n_den
    while m > 0:
        try:
            return pade_from_series(a, n_num, m)
        except SingularPade:
            m -= 1
    return PadeApproximant(a.coeffs.copy(), np.ones(1))


def diagonal_orders(order: int) -> tuple[int, int]:
    """Default Pade orders: diagonal with n_num = n_den = floor(N/2)."""
    half = order // 2
    return half, half


def chebyshev_probes(t_end: float, n: int = 8) -> np.ndarray:
    """n Chebyshev-spaced probe points inside (0, t_end]."""
    i = np.arange(1, n + 1)
    x = np.cos((2 * i - 1) * np.pi / (2 * n))  # in (-1, 1)
    return t_end * (1.0 + x) / 2.0


def shrink_refine_range(residual_at, tol_res: float, t_max: float) -> float:
    """Shared search used by every effective-range estimate.

    Geometric shrink from t_max by factor 0.5 until the residual passes,
    then one refinement pass by factor 1.25 capped at the last failing
    value. ``residual_at(T)`` returns the max-norm residual over the probe
    points of (0, T].
    """
    if tol_res <= 0:
        raise ValueError("tol_res must be positive")
    if t_max <= 0:
        raise ValueError("t_max must be positive")
    t = t_max
    last_fail = None
    floor = t_max * _RANGE_FLOOR_FACTOR
    while residual_at(t) > tol_res:
        last_fail = t
        t *= 0.5
        if t < floor:
            raise NoValidRange(
                f"residual above {tol_res:.2e} even at t={t:.3e}"
            )
    if last_fail is None:
        return t_max
    cand = min(t * 1.25, last_fail, t_max)
    if cand > t and residual_at(cand) <= tol_res:
        return cand
    return t


def estimate_effective_range(solution, residual_fn, tol_res: float, t_max: float,
                             n_probe: int = 8) -> float:
    """Largest tested T_e <= t_max with residual <= tol_res on (0, T_e].

    ``solution`` maps variable names to series/Pade representations.  At each
    probe point the representations are evaluated and passed to
    ``residual_fn(values, t)`` as a dict; for every variable the dict also
    carries the time derivative of its representation under the key
    ``"<name>.dot"`` so differential residuals can be formed.
    """

    def residual_at(t_end: float) -> float:
        worst = 0.0
        for t in chebyshev_probes(t_end, n_probe):
            values = {}
            try:
                for name, rep in solution.items():
                    values[name] = rep.eval(t)
                    if isinstance(rep, PadeApproximant):
                        values[name + ".dot"] = rep.deriv_eval(t)
                    else:
                        values[name + ".dot"] = rep.deriv().eval(t)
            except DenominatorZero:
                return np.inf
            r = np.max(np.abs(np.atleast_1d(residual_fn(values, t))))
            if not np.isfinite(r):
                return np.inf
            worst = max(worst, r)
        return worst

    return shrink_refine_range(residual_at, tol_res, t_max)
