import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfq.fock import FockOperator, PhasePoint, build_space, canonical_ops, coherent_state, overlap
from cfq.quantizer import (
    action_angle_operator,
    action_angle_quadrature,
    anti_wick,
    hermite_quadrature,
    lower_symbol,
    polar_quadrature,
    resolution_check,
    transformed_state,
)
from cfq.symbols import ActionAngle, PolySymbol, oscillator

BACKENDS = ["combinatorial", "quadrature"]


def low(m, space):
    idx = space.low_block
    return m[np.ix_(idx, idx)]


def number_form(space):
    m = 0.5 * space.dof * np.eye(space.dim, dtype=complex)
    for Q, P in canonical_ops(space):
        m = m + 0.5 * (P @ P + Q @ Q).dense()
    return m


@pytest.mark.parametrize("backend", BACKENDS)
def test_linear_symbols(backend):
    sp = build_space(24)
    (Q, P), = canonical_ops(sp)
    assert np.max(np.abs(anti_wick(sp, PolySymbol.q(0, 1), backend).low() - Q.low())) < 1e-10
    assert np.max(np.abs(anti_wick(sp, PolySymbol.p(0, 1), backend).low() - P.low())) < 1e-10


@pytest.mark.parametrize("backend", BACKENDS)
def test_constant_is_identity(backend):
    sp = build_space(16)
    A = anti_wick(sp, PolySymbol.constant(1, 1.0), backend)
    assert np.max(np.abs(A.low() - np.eye(len(sp.low_block)))) < 1e-10


@pytest.mark.parametrize("backend", BACKENDS)
def test_oscillator_number_form(backend):
    sp = build_space(64)
    A = anti_wick(sp, oscillator(1), backend)
    assert np.max(np.abs(A.low() - low(number_form(sp), sp))) <= 1e-8


def test_two_mode_oscillator():
    sp = build_space(8, 2)
    A = anti_wick(sp, oscillator(2), "combinatorial")
    assert np.max(np.abs(A.low() - low(number_form(sp), sp))) <= 1e-10


def test_backends_agree_on_monomials():
    sp = build_space(24)
    for a, b in itertools.product(range(5), repeat=2):
        if a + b > 4 or a + b == 0:
            continue
        h = PolySymbol(1, {(a, b): 1.0})
        anti_wick(sp, h, check=True)  # raises on mismatch


def test_quadratic_ordering_against_ladder_oracle():
    # anti-normal ordering of z zbar = (p^2+q^2)/2 is a a^dag = N + 1; of z^2 is a^2
    sp = build_space(30)
    a = np.diag(np.sqrt(np.arange(1, 30)), 1)
    z2 = 0.5 * (PolySymbol.q(0, 1) ** 2 - PolySymbol.p(0, 1) ** 2)  # Re z^2
    A = anti_wick(sp, z2)
    assert np.max(np.abs(A.low() - low(0.5 * (a @ a + a.T @ a.T), sp))) < 1e-10


def test_lower_symbol_values():
    sp = build_space(64)
    A = anti_wick(sp, oscillator(1))
    assert lower_symbol(A, PhasePoint([0.0], [0.0])) == pytest.approx(1.0, abs=1e-12)
    assert lower_symbol(FockOperator(sp, np.eye(64)), PhasePoint([0.3], [0.1])) == pytest.approx(1.0)
    (Q, _), = canonical_ops(sp)
    assert lower_symbol(Q, PhasePoint([0.7], [-1.3])) == pytest.approx(-1.3, abs=1e-8)


def test_lower_symbol_double_smoothing():
    # <x|anti_wick(h)|x> = h + 1 for h = (p^2+q^2)/2
    sp = build_space(64)
    A = anti_wick(sp, oscillator(1))
    x = PhasePoint([1.2], [-0.4])
    assert lower_symbol(A, x).real == pytest.approx(0.5 * (1.44 + 0.16) + 1, abs=1e-10)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.1, 2), st.floats(0.1, 2), st.floats(-0.5, 0.5), st.floats(-1, 1), st.floats(-1, 1))
def test_positivity_and_sandwich(a, c, b, px, qx):
    # positive definite quadratic: a p^2 + 2b p q + c q^2 with b^2 < a c
    if b * b >= 0.9 * a * c:
        b = 0.0
    P, Q = PolySymbol.p(0, 1), PolySymbol.q(0, 1)
    h = a * P * P + 2 * b * P * Q + c * Q * Q
    sp = build_space(40)
    A = anti_wick(sp, h)
    assert np.min(np.linalg.eigvalsh(A.low())) >= -1e-8
    assert lower_symbol(A, PhasePoint([px], [qx])).real >= 0.0


def test_resolution_of_unity():
    sp = build_space(16)
    devs = [resolution_check(sp, polar_quadrature(n, 64)).low_block_deviation for n in (2, 4, 8, 16, 32)]
    assert devs[-1] <= 1e-6
    assert all(b <= a + 1e-13 for a, b in zip(devs, devs[1:]))


def test_quadrature_moments():
    # int e^{-|z|^2} |z|^{2k} dp dq / 2pi = k!
    for quad in (polar_quadrature(16, 32), hermite_quadrature(40, scale=1.0)):
        for k in range(4):
            assert quad.gaussian_moment(k) == pytest.approx(float(np.prod(np.arange(1, k + 1))), rel=1e-10)


def test_transformed_state_phase():
    sp = build_space(40)
    aa = ActionAngle()
    r, s = 0.8, 0.6
    psi = transformed_state(sp, r, s)
    ref = coherent_state(sp, PhasePoint([aa.p(r, s)], [aa.q(r, s)]))
    assert overlap(ref, psi) == pytest.approx(np.exp(-1j * aa.G(r, s)), abs=1e-12)
    assert np.allclose(transformed_state(sp, 0.5, 0.0).amplitudes, coherent_state(sp, PhasePoint([1.0], [0.0])).amplitudes)
    with pytest.raises(ValueError):
        transformed_state(sp, 0.0, 1.0)


def test_action_angle_covariance():
    sp = build_space(32)
    A = action_angle_operator(sp, lambda r, s: r, action_angle_quadrature(32, 64))
    B = anti_wick(sp, oscillator(1))
    assert np.max(np.abs(A.low() - B.low())) <= 1e-6


def test_action_angle_general_symbol():
    # hbar(r, s) = 2 r cos(s)^2 is p^2
    sp = build_space(24)
    A = action_angle_operator(sp, lambda r, s: 2 * r * np.cos(s) ** 2)
    B = anti_wick(sp, PolySymbol.p(0, 1) ** 2)
    assert np.max(np.abs(A.low() - B.low())) <= 1e-8


def test_dof_mismatch():
    with pytest.raises(ValueError):
        anti_wick(build_space(8), oscillator(2))
