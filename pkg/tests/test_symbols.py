import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfq.fock import PhasePoint
from cfq.symbols import (
    ActionAngle,
    ConstraintSet,
    DegreeOverflowError,
    DomainError,
    FlowBlowUp,
    PolySymbol,
    angular_momentum,
    classify_constraints,
    constrained_flow,
    gauge_flow,
    oscillator,
    poisson_bracket,
)


def p(j=0, n=1):
    return PolySymbol.p(j, n)


def q(j=0, n=1):
    return PolySymbol.q(j, n)


@st.composite
def symbols(draw, dof=2, max_deg=3):
    n_terms = draw(st.integers(1, 5))
    terms = {}
    for _ in range(n_terms):
        key = tuple(draw(st.integers(0, max_deg)) for _ in range(2 * dof))
        if sum(key) > max_deg:
            continue
        terms[key] = draw(st.floats(-3, 3, allow_nan=False).filter(lambda v: abs(v) > 1e-3))
    return PolySymbol(dof, terms)


def test_canonical_pair():
    assert poisson_bracket(q(), p()).max_abs_diff(PolySymbol.constant(1, 1.0)) == 0
    assert poisson_bracket(p(), q()).max_abs_diff(PolySymbol.constant(1, -1.0)) == 0


def test_rotation_symmetry_of_isotropic_oscillator():
    assert poisson_bracket(angular_momentum(), oscillator(2)).is_zero()


def test_no_zero_terms_and_degree_cap():
    s = p() * q() - q() * p()
    assert s.terms == {}
    with pytest.raises(DegreeOverflowError):
        _ = q() ** 9


def test_evaluate_matches_call():
    s = 2.0 * p(0, 2) ** 2 * q(1, 2) - q(0, 2) + 0.5
    x = np.array([0.3, -1.1, 0.7, 2.0])
    assert s.evaluate(x) == pytest.approx(2 * 0.09 * 2.0 - 0.7 + 0.5)
    assert s([0.3, -1.1], [0.7, 2.0]) == pytest.approx(s.evaluate(x))


def test_terms_roundtrip():
    s = 1.5 * p(0, 2) * q(1, 2) + q(0, 2) ** 3
    assert PolySymbol.from_terms(2, s.to_terms()).max_abs_diff(s) == 0


@settings(max_examples=40, deadline=None)
@given(symbols(), symbols())
def test_antisymmetry(f, g):
    assert poisson_bracket(f, g).max_abs_diff(-poisson_bracket(g, f)) <= 1e-10
    assert poisson_bracket(f, f).is_zero(1e-10)


@settings(max_examples=40, deadline=None)
@given(symbols(), symbols(), symbols(), st.floats(-2, 2))
def test_bilinear(f, g, k, c):
    lhs = poisson_bracket(f, g + c * k)
    rhs = poisson_bracket(f, g) + c * poisson_bracket(f, k)
    assert lhs.max_abs_diff(rhs) <= 1e-10 * (1 + abs(c))


@settings(max_examples=30, deadline=None)
@given(symbols(max_deg=2), symbols(max_deg=2), symbols(max_deg=2))
def test_leibniz(f, g, k):
    lhs = poisson_bracket(f, g * k)
    rhs = poisson_bracket(f, g) * k + g * poisson_bracket(f, k)
    assert lhs.max_abs_diff(rhs) <= 1e-10


@settings(max_examples=30, deadline=None)
@given(symbols(), symbols(), symbols())
def test_jacobi(f, g, k):
    j = poisson_bracket(f, poisson_bracket(g, k)) + poisson_bracket(g, poisson_bracket(k, f)) + poisson_bracket(k, poisson_bracket(f, g))
    assert j.is_zero(1e-9)


def test_classify_rotation_first_class():
    rep = classify_constraints(ConstraintSet.rotation(), oscillator(2))
    assert rep.status == "FIRST_CLASS"
    assert not np.any(rep.structure) and not np.any(rep.hamiltonian)


def test_classify_canonical_pair_second_class():
    rep = classify_constraints(ConstraintSet([q(0, 1), p(0, 1)]))
    assert rep.status == "SECOND_CLASS"
    assert rep.offending


def test_classify_euclidean_group():
    # translations p_1, p_2 and a rotation in the (1, 2) plane, dof 3
    A = np.zeros((3, 3, 3))
    A[2, 0, 1], A[2, 1, 0] = 1.0, -1.0
    cs = ConstraintSet.yang_mills(A)
    rep = classify_constraints(cs)
    assert rep.status == "FIRST_CLASS"
    # bracket oracle: {phi_a, phi_b} evaluated directly
    for a in range(3):
        for b in range(3):
            br = poisson_bracket(cs.constraints[a], cs.constraints[b])
            rebuilt = sum((rep.structure[a, b, c] * cs.constraints[c] for c in range(3)), PolySymbol(3))
            assert br.max_abs_diff(rebuilt) <= 1e-12
    assert rep.structure[0, 2, 1] == pytest.approx(-1.0)
    assert rep.structure[1, 2, 0] == pytest.approx(1.0)


def test_constraint_set_validation():
    with pytest.raises(ValueError):
        ConstraintSet.yang_mills(np.ones((1, 2, 2)))
    with pytest.raises(ValueError):
        ConstraintSet([q(0, 1), p(0, 1), q(0, 1)])


def test_free_oscillator_circle():
    x0 = PhasePoint([0.3], [1.2])
    cs = ConstraintSet([PolySymbol(1)])
    tr = constrained_flow(oscillator(1), cs, None, x0, 2.0, 1e-3)
    t = tr.t[-1]
    # qdot = p, pdot = -q
    q_ex = 1.2 * np.cos(t) + 0.3 * np.sin(t)
    p_ex = 0.3 * np.cos(t) - 1.2 * np.sin(t)
    assert np.allclose(tr.x[-1], [p_ex, q_ex], atol=1e-11)
    h = oscillator(1).evaluate(tr.x)
    assert np.ptp(h) < 1e-12


def test_energy_error_fourth_order():
    cs = ConstraintSet([PolySymbol(1)])
    h = oscillator(1) + 0.25 * q() ** 4
    x0 = PhasePoint([0.5], [1.0])
    errs = []
    for dt in (0.04, 0.02):
        tr = constrained_flow(h, cs, None, x0, 2.0, dt)
        errs.append(np.max(np.abs(h.evaluate(tr.x) - h.evaluate(tr.x[0]))))
    assert errs[0] / errs[1] > 12


def _piecewise(rng, T, K=1, pieces=10):
    vals = rng.uniform(-1, 1, size=(pieces, K))
    return lambda t: vals[min(int(t / T * pieces), pieces - 1)]


def test_first_class_preserved_and_gauge_equivalence():
    cs = ConstraintSet.rotation()
    h = oscillator(2)
    x0 = PhasePoint([0.55, 0.2], [1.1, 0.4])
    assert abs(cs.values(x0.as_vector())[0]) < 1e-15
    rng = np.random.default_rng(2)
    obs = p(0, 2) ** 2 + p(1, 2) ** 2 + q(0, 2) ** 2 + q(1, 2) ** 2
    obs2 = q(0, 2) ** 2 + q(1, 2) ** 2
    finals = []
    for _ in range(3):
        tr = constrained_flow(h, cs, _piecewise(rng, 10.0), x0, 10.0, 1e-3)
        assert np.max(np.abs(tr.phi)) <= 1e-8
        finals.append((obs.evaluate(tr.x[-1]), obs2.evaluate(tr.x[-1])))
    finals = np.array(finals)
    assert np.all(np.ptp(finals, axis=0) <= 1e-6)
    # a non-invariant coordinate does depend on the schedule
    assert np.ptp([constrained_flow(h, cs, _piecewise(rng, 10.0), x0, 10.0, 1e-2).x[-1, 2] for _ in range(2)]) > 1e-3


def test_blowup_detected():
    cs = ConstraintSet([PolySymbol(1)])
    h = p() * q() ** 2  # qdot = q^2 escapes at t = 1/q0
    with pytest.raises(FlowBlowUp):
        constrained_flow(h, cs, None, PhasePoint([0.0], [2.0]), 5.0, 1e-2)


def test_gauge_flow_rotation_quarter_turn():
    x = PhasePoint([1.0, -0.4], [0.3, 2.0])
    y = gauge_flow(ConstraintSet.rotation(), [np.pi / 2], x)
    p1, p2 = x.p
    q1, q2 = x.q
    assert np.allclose(y.p, [p2, -p1], atol=1e-12)
    assert np.allclose(y.q, [q2, -q1], atol=1e-12)


def test_gauge_flow_identity_and_composition():
    cs = ConstraintSet.rotation()
    x = PhasePoint([0.2, 0.9], [-1.0, 0.5])
    assert gauge_flow(cs, [0.0], x).as_vector().tolist() == x.as_vector().tolist()
    a = gauge_flow(cs, [0.4], gauge_flow(cs, [1.3], x))
    b = gauge_flow(cs, [1.7], x)
    assert np.allclose(a.as_vector(), b.as_vector(), atol=1e-10)


def test_gauge_flow_shift():
    # phi = p_1 translates q^1
    cs = ConstraintSet.yang_mills(np.zeros((1, 1, 1)))
    y = gauge_flow(cs, [0.7], PhasePoint([0.1], [0.2]))
    assert np.allclose(y.as_vector(), [0.1, 0.2 - 0.7], atol=1e-14)


def test_gauge_flow_is_canonical():
    cs = ConstraintSet.rotation()
    x0 = np.array([0.3, -0.5, 1.2, 0.4])
    om, h = 0.9, 1e-6
    J = np.zeros((4, 4))
    for k in range(4):
        e = np.zeros(4)
        e[k] = h
        J[:, k] = (gauge_flow(cs, [om], PhasePoint.from_vector(x0 + e)).as_vector() - gauge_flow(cs, [om], PhasePoint.from_vector(x0 - e)).as_vector()) / (2 * h)
    # symplectic form in (p, q) ordering
    Om = np.block([[np.zeros((2, 2)), -np.eye(2)], [np.eye(2), np.zeros((2, 2))]])
    assert np.allclose(J.T @ Om @ J, Om, atol=1e-6)


def test_gauge_flow_rejects_non_linear():
    with pytest.raises(ValueError):
        gauge_flow(ConstraintSet([q(0, 1)]), [1.0], PhasePoint([0.0], [0.0]))


def test_action_angle_values():
    aa = ActionAngle()
    r, s = aa.forward(1.0, 0.0)
    assert (r, s) == (0.5, 0.0)
    assert aa.G(2.0, np.pi / 4) == pytest.approx(1.0)
    with pytest.raises(DomainError):
        aa.s(0.0, 0.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5))
def test_action_angle_roundtrip(pv, qv):
    if np.hypot(pv, qv) < 1e-3:
        return
    aa = ActionAngle()
    r, s = aa.forward(pv, qv)
    assert np.allclose(aa.inverse(r, s), (pv, qv), atol=1e-12)
    assert -np.pi < s <= np.pi


def test_trajectory_csv(tmp_path):
    tr = constrained_flow(oscillator(2), ConstraintSet.rotation(), None, PhasePoint([0.0, 0.0], [1.0, 0.0]), 0.01, 1e-3)
    tr.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "t,p1,p2,q1,q2,phi1,lambda1"
    assert len(lines) == 12
