"""Embedding engine: order recursion, segments, alpha continuation."""

import math

import numpy as np
import pytest

from hesim.engine import (
    SystemBuilder,
    batch_pade,
    solve_alpha_problem,
    solve_segment,
)
from hesim.errors import AnchorInconsistent, NoConvergenceAtAlpha1


def test_exponential_decay_coefficients():
    # x' = -x, x(0) = 1  ->  x[k] = (-1)^k / k!
    b = SystemBuilder()
    x = b.state("x")
    b.rhs_term(x, -1.0, x)
    sys = b.compile()
    C = sys.solve_series(np.array([1.0]), np.zeros((0, 0)), 10)
    expect = [(-1.0) ** k / math.factorial(k) for k in range(11)]
    assert np.allclose(C[0], expect, atol=1e-14)


def test_riccati_geometric_coefficients():
    # x' = x^2, x(0) = 1  ->  x(t) = 1/(1-t), x[k] = 1
    b = SystemBuilder()
    x = b.state("x")
    b.rhs_term(x, 1.0, x, x)
    sys = b.compile()
    C = sys.solve_series(np.array([1.0]), np.zeros((0, 0)), 12)
    assert np.allclose(C[0], np.ones(13), atol=1e-12)


def test_known_input_forcing():
    # x' = p(t) with p = 2t  ->  x = x0 + t^2
    b = SystemBuilder()
    x = b.state("x")
    p = b.known("p")
    b.rhs_term(x, 1.0, p)
    sys = b.compile()
    C = sys.solve_series(np.array([0.5]), np.array([[0.0, 2.0]]), 4)
    assert np.allclose(C[0], [0.5, 0.0, 1.0, 0.0, 0.0])


def test_algebraic_block_with_state_coupling():
    # x' = -y,  0 = y - x  ->  x = exp(-t)
    b = SystemBuilder()
    x = b.state("x")
    y = b.alg("y")
    eq = b.alg_eq("link")
    b.term(eq, 1.0, y)
    b.term(eq, -1.0, x)
    b.rhs_term(x, -1.0, y)
    sys = b.compile()
    C = sys.solve_series(np.array([1.0, 1.0]), np.zeros((0, 0)), 8)
    expect = [(-1.0) ** k / math.factorial(k) for k in range(9)]
    assert np.allclose(C[0], expect, atol=1e-12)
    assert np.allclose(C[1], expect, atol=1e-12)


def test_anchor_inconsistent_raises():
    b = SystemBuilder()
    y = b.alg("y")
    eq = b.alg_eq("pin")
    b.term(eq, 1.0, y)
    b.term(eq, -2.0)
    sys = b.compile()
    with pytest.raises(AnchorInconsistent):
        sys.solve_series(np.array([0.0]), np.zeros((0, 0)), 3)


def test_segment_effective_range_and_eval():
    # pole of 1/(1-t): series certifies less than 1, Pade extends accuracy
    b = SystemBuilder()
    x = b.state("x")
    b.rhs_term(x, 1.0, x, x)
    sys = b.compile()
    seg = solve_segment(sys, np.array([1.0]), np.zeros((0, 0)), order=15,
                        kind="TIME_DYNAMIC", tol_res=1e-6, t_max=2.0)
    assert seg.t_e < 1.0
    t = 0.4
    assert seg.value("x", t) == pytest.approx(1.0 / (1.0 - t), abs=1e-9)


def test_segment_flat_at_equilibrium():
    b = SystemBuilder()
    x = b.state("x")
    b.rhs_term(x, -1.0, x)
    b.rhs_term(x, 1.0)  # x' = 1 - x, equilibrium at 1
    sys = b.compile()
    seg = solve_segment(sys, np.array([1.0]), np.zeros((0, 0)), order=10,
                        kind="TIME_DYNAMIC", tol_res=1e-8, t_max=5.0)
    assert seg.t_e == 5.0
    assert np.allclose(seg.C[0][1:], 0.0, atol=1e-14)


def test_newton_refine_polishes_algebraic():
    b = SystemBuilder()
    y = b.alg("y")
    eq = b.alg_eq("quad")
    b.term(eq, 1.0, y, y)
    b.term(eq, -4.0)
    sys = b.compile()
    out = sys.newton_refine(np.array([1.8]), np.zeros(0))
    assert out[0] == pytest.approx(2.0, abs=1e-12)


def test_alpha_continuation_quadratic():
    # 0 = y^2 - (1 + 3 alpha): y(0)=1, y(1)=2
    b = SystemBuilder()
    y = b.alg("y")
    alpha = b.known("alpha")
    eq = b.alg_eq("emb")
    b.term(eq, 1.0, y, y)
    b.term(eq, -1.0)
    b.term(eq, -3.0, alpha)
    sys = b.compile()
    out = solve_alpha_problem(sys, np.array([1.0]),
                              np.array([[0.0, 1.0]]), kind="ALPHA_PARAM")
    assert out[0] == pytest.approx(2.0, abs=1e-10)


def test_alpha_continuation_infeasible():
    # 0 = y^2 + alpha - 0.5: real solution ceases to exist past alpha = 0.5
    b = SystemBuilder()
    y = b.alg("y")
    alpha = b.known("alpha")
    eq = b.alg_eq("emb")
    b.term(eq, 1.0, y, y)
    b.term(eq, 1.0, alpha)
    b.term(eq, -0.5)
    sys = b.compile()
    with pytest.raises(NoConvergenceAtAlpha1):
        solve_alpha_problem(sys, np.array([math.sqrt(0.5)]),
                            np.array([[0.0, 1.0]]), kind="ALPHA_PARAM")


def test_alpha_result_independent_of_order():
    b = SystemBuilder()
    y = b.alg("y")
    alpha = b.known("alpha")
    eq = b.alg_eq("emb")
    b.term(eq, 1.0, y, y)
    b.term(eq, -1.0)
    b.term(eq, -0.8, alpha)
    sys = b.compile()
    outs = [solve_alpha_problem(sys, np.array([1.0]), np.array([[0.0, 1.0]]),
                                kind="ALPHA_PARAM", order=n)[0]
            for n in (10, 16, 30)]
    assert np.ptp(outs) < 1e-8


def test_batch_pade_handles_constants_and_poles():
    C = np.vstack([
        np.ones(11),                      # 1/(1-t)
        np.r_[2.5, np.zeros(10)],         # constant
        [1 / math.factorial(k) for k in range(11)],  # exp
    ])
    nums, dens = batch_pade(C, 5, 5)
    t = 0.6
    def val(i):
        return (np.polynomial.polynomial.polyval(t, nums[i])
                / np.polynomial.polynomial.polyval(t, dens[i]))
    assert val(0) == pytest.approx(1.0 / (1.0 - t), abs=1e-10)
    assert val(1) == pytest.approx(2.5, abs=1e-14)
    assert val(2) == pytest.approx(math.exp(t), abs=1e-10)


def test_segment_chaining_state_is_exact():
    # evaluate at the step and restart: the state anchor is the evaluated value
    b = SystemBuilder()
    x = b.state("x")
    b.rhs_term(x, -0.7, x)
    sys = b.compile()
    seg = solve_segment(sys, np.array([1.0]), np.zeros((0, 0)), 15,
                        "TIME_DYNAMIC", 1e-8, 1.0)
    step = 0.8 * seg.t_e
    x1 = seg.values_at(step)[0]
    seg2 = solve_segment(sys, np.array([x1]), np.zeros((0, 0)), 15,
                         "TIME_DYNAMIC", 1e-8, 1.0)
    assert seg2.C[0, 0] == x1
    assert seg2.value("x", 0.0) == pytest.approx(x1, abs=1e-15)


def test_he_problem_wrapper():
    from hesim.engine import HeProblem, solve_coefficients

    b = SystemBuilder()
    x = b.state("x")
    b.rhs_term(x, -2.0, x)
    sys = b.compile()
    prob = HeProblem(kind="TIME_DYNAMIC", system=sys,
                     anchors=np.array([1.0]), knowns=np.zeros((0, 0)),
                     order=12, tol_res=1e-8, t_max=3.0)
    seg = solve_coefficients(prob)
    assert seg.kind == "TIME_DYNAMIC"
    assert seg.value("x", 1.0) == pytest.approx(math.exp(-2.0), abs=1e-9)

    # alpha problems certify their range on [0, 1]
    b2 = SystemBuilder()
    y = b2.alg("y")
    al = b2.known("alpha")
    eq = b2.alg_eq("emb")
    b2.term(eq, 1.0, y)
    b2.term(eq, -1.0)
    b2.term(eq, -1.0, al)
    sys2 = b2.compile()
    prob2 = HeProblem(kind="ALPHA_PARAM", system=sys2,
                      anchors=np.array([1.0]),
                      knowns=np.array([[0.0, 1.0]]), order=10)
    seg2 = solve_coefficients(prob2)
    assert seg2.t_e == 1.0
    assert seg2.value("y", 1.0) == pytest.approx(2.0, abs=1e-12)
