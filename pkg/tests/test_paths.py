import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cfq.fock import PhasePoint
from cfq.paths import (
    Transform,
    bridge_quadratic_variation_mean,
    bridge_values,
    chain_rule_residual,
    chain_rule_residuals,
    ito_sum,
    leibniz_defect,
    make_rng,
    quadratic_variation,
    sample_bridge,
    seed_sequence,
    strat_sum,
)
from cfq.symbols import DomainError


def test_bridge_is_pinned():
    a, b = np.array([0.3, -1.0]), np.array([1.5, 2.0])
    v = bridge_values(2.0, 1.0, 16, a, b, make_rng(0), 5)
    assert v.shape == (5, 17, 2)
    assert np.array_equal(v[:, 0], np.broadcast_to(a, (5, 2)))
    assert np.array_equal(v[:, -1], np.broadcast_to(b, (5, 2)))


def test_bridge_midpoint_statistics():
    nu, T = 1.5, 2.0
    a, b = np.array([0.0, 1.0]), np.array([2.0, -1.0])
    v = bridge_values(nu, T, 8, a, b, make_rng(4), 40000)
    mid = v[:, 4]
    # Brownian bridge at t = T/2: mean (a+b)/2, variance nu T/4
    se_mean = np.sqrt(nu * T / 4 / 40000)
    assert np.all(np.abs(mid.mean(axis=0) - 0.5 * (a + b)) < 5 * se_mean)
    assert np.allclose(mid.var(axis=0), nu * T / 4, rtol=0.03)


def test_quadratic_variation_mean_exact():
    nu, T, L = 0.7, 1.0, 10
    a, b = np.array([0.0, 0.0]), np.array([1.0, -2.0])
    v = bridge_values(nu, T, L, a, b, make_rng(1), 50000)
    qv = quadratic_variation(v)
    want = bridge_quadratic_variation_mean(nu, T, L, b - a)
    se = qv.std(axis=0) / np.sqrt(qv.shape[0])
    assert np.all(np.abs(qv.mean(axis=0) - want) < 4 * se)


def test_bridge_validation():
    with pytest.raises(ValueError):
        bridge_values(0.0, 1.0, 4, [0, 0], [1, 1], make_rng(0))
    with pytest.raises(ValueError):
        bridge_values(1.0, 1.0, 4, [0, 0, 0], [1, 1, 1], make_rng(0))
    with pytest.raises(ValueError):
        sample_bridge(1.0, 1.0, 1, PhasePoint([0.0], [0.0]), PhasePoint([1.0], [1.0]), 0)


def test_same_seed_same_path():
    x0, x1 = PhasePoint([0.0], [0.0]), PhasePoint([1.0], [1.0])
    a = sample_bridge(1.0, 1.0, 32, x0, x1, 42)
    b = sample_bridge(1.0, 1.0, 32, x0, x1, 42)
    assert np.array_equal(a.values, b.values)
    assert not np.array_equal(a.values, sample_bridge(1.0, 1.0, 32, x0, x1, 43).values)


def test_seed_sequence_copy_does_not_advance():
    root = np.random.SeedSequence(9)
    c1 = seed_sequence(root).spawn(2)
    c2 = seed_sequence(root).spawn(2)
    assert [c.generate_state(1)[0] for c in c1] == [c.generate_state(1)[0] for c in c2]


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32), st.integers(2, 200), st.floats(0.01, 5.0))
def test_leibniz_telescopes(seed, L, nu):
    v = bridge_values(nu, 1.0, L, [0.5, -0.2, 1.0, 0.0], [-1.0, 0.3, 0.0, 2.0], make_rng(seed), 4)
    assert np.max(np.abs(leibniz_defect(v))) <= 1e-12


def test_ito_minus_strat_is_half_qv_cross():
    v = bridge_values(1.0, 1.0, 50, [0.0, 0.0], [1.0, 1.0], make_rng(3), 3)
    dp, dq = np.diff(v[..., 0], axis=-1), np.diff(v[..., 1], axis=-1)
    assert np.allclose(ito_sum(v) - strat_sum(v), -0.5 * np.sum(dp * dq, axis=-1), atol=1e-13)


def test_ito_strat_mean_zero_for_equal_endpoints():
    v = bridge_values(0.05, 1.0, 256, [2.0, 0.0], [2.0, 0.0], make_rng(8), 10000)
    d = ito_sum(v) - strat_sum(v)
    assert abs(d.mean()) < 4 * d.std(ddof=1) / np.sqrt(d.size)


def test_chain_rule_identity_transforms_are_exact():
    path = sample_bridge(0.3, 1.0, 64, PhasePoint([1.0], [0.5]), PhasePoint([0.2], [-1.0]), 5)
    assert chain_rule_residual(path, Transform.identity()) < 1e-13
    assert chain_rule_residual(path, Transform.shift(3.0)) < 1e-12


def test_chain_rule_residual_halves():
    a, b = np.array([2.0, 0.0]), np.array([0.0, 2.0])
    aa = Transform.action_angle()
    med = []
    for L in (32, 64, 128, 256):
        v = bridge_values(0.05, 1.0, L, a, b, make_rng(L), 100)
        med.append(np.median(chain_rule_residuals(v, aa)))
    ratios = np.array(med[:-1]) / np.array(med[1:])
    assert np.all((ratios > 1.5) & (ratios < 3.0))


def test_chain_rule_single_matches_ensemble():
    v = bridge_values(0.1, 1.0, 40, [1.0, 1.0], [-1.0, 0.5], make_rng(2), 3)
    from cfq.paths import BrownianPath

    single = [chain_rule_residual(BrownianPath(0.1, 1.0, v[i]), Transform.action_angle()) for i in range(3)]
    assert np.allclose(single, chain_rule_residuals(v, Transform.action_angle()), atol=1e-14)


def test_chain_rule_singularity():
    path = sample_bridge(0.1, 1.0, 8, PhasePoint([0.0], [0.0]), PhasePoint([1.0], [1.0]), 0)
    with pytest.raises(DomainError):
        chain_rule_residual(path, Transform.action_angle())


def test_path_csv(tmp_path):
    path = sample_bridge(1.0, 0.5, 4, PhasePoint([0.0, 1.0], [0.0, 0.0]), PhasePoint([1.0, 1.0], [2.0, 0.0]), 1)
    path.to_csv(tmp_path / "b.csv")
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "t,p1,p2,q1,q2"
    assert len(lines) == 6
    assert path.eps == 0.125
