import warnings

import numpy as np
import pytest

from cfq.fock import PhasePoint, build_space, coherent_closed_form, coherent_state, overlap
from cfq.propagator import (
    Grid,
    GridError,
    GridPolicy,
    build_kernel,
    compose,
    compose_with_error,
    exact_propagator,
    free_finite_nu_ratio,
    mc_estimate,
    nu_sweep,
    oracle_value,
    prefactor_value,
)
from cfq.quantizer import anti_wick
from cfq.symbols import PolySymbol, oscillator

XI = PhasePoint([1.0], [0.0])
XF = PhasePoint([0.0], [1.0])


def oscillator_kernel(T, xf, xi):
    # anti-Wick oscillator is N + 1: e^{-iT} <x''| x' rotated by e^{-iT}>, z = (q + ip)/sqrt(2)
    zf = (xf.q[0] + 1j * xf.p[0]) / np.sqrt(2)
    zi = (xi.q[0] + 1j * xi.p[0]) / np.sqrt(2)
    phase = 0.5 * (xf.p[0] * xf.q[0] - xi.p[0] * xi.q[0])
    return np.exp(-1j * T + 1j * phase - 0.5 * abs(zf) ** 2 - 0.5 * abs(zi) ** 2 + np.conj(zf) * zi * np.exp(-1j * T))


@pytest.mark.parametrize("T", [0.2, 0.5, 1.7])
def test_oscillator_oracle_closed_form(T):
    H = anti_wick(build_space(64), oscillator(1))
    xf, xi = PhasePoint([0.3], [-0.8]), PhasePoint([1.1], [0.4])
    assert abs(exact_propagator(H, T, xf, xi) - oscillator_kernel(T, xf, xi)) < 1e-10


def test_oscillator_oracle_from_amplitudes():
    # independent of the evolution routine: sum over number states with e^{-i(n+1)T}
    T, n = 0.5, 120
    cf = coherent_closed_form(n, XF.p, XF.q)
    ci = coherent_closed_form(n, XI.p, XI.q)
    k = np.sum(np.conj(cf) * ci * np.exp(-1j * (np.arange(n) + 1) * T))
    assert abs(k - oracle_value(oscillator(1), T, XF, XI)) < 1e-12


def test_zero_time_is_overlap():
    sp = build_space(64)
    ov = overlap(coherent_state(sp, XF), coherent_state(sp, XI))
    assert oracle_value(oscillator(1), 0.0, XF, XI) == pytest.approx(ov, abs=1e-14)


@pytest.mark.parametrize("nu,T", [(10.0, 0.1), (4.0, 0.25)])
def test_free_lattice_matches_landau_ratio(nu, T):
    L = 64
    eps = T / L
    g = Grid.square(5.9, 96, (0.5, 0.5))
    if g.spacing > np.sqrt(nu * eps):
        g = g.refined(2)
    amp = compose(build_kernel(None, nu, eps, g), L, XF, XI)
    ov = overlap(coherent_state(build_space(64), XF), coherent_state(build_space(64), XI))
    ratio = amp / ov
    assert abs(ratio.imag) < 1e-10
    assert ratio.real == pytest.approx(free_finite_nu_ratio(nu, T, XF, XI), rel=1e-4)


def test_free_kernel_tends_to_overlap_for_large_nu_t():
    assert free_finite_nu_ratio(200.0, 0.5, XF, XI) == pytest.approx(1.0, abs=1e-12)
    assert free_finite_nu_ratio(5.0, 0.5, XI, XI) == pytest.approx(1 / (1 - np.exp(-2.5)))


def test_continuum_prefactor_leaves_step_bias():
    nu, T, L = 10.0, 0.1, 16
    eps = T / L
    k = build_kernel(None, nu, eps, Grid.square(5.0, 81, (0.5, 0.5)))
    lat = compose(k, L, XF, XI, prefactor="lattice")
    cont = compose(k, L, XF, XI, prefactor="continuum")
    # per-step lowest-level eigenvalue of one discrete step is 1/(1 + nu eps/2)
    assert cont / lat == pytest.approx(np.exp(nu * T / 2) / (1 + nu * eps / 2) ** L, rel=1e-12)
    assert abs(lat / free_finite_nu_ratio(nu, T, XF, XI) - overlap(coherent_state(build_space(64), XF), coherent_state(build_space(64), XI))) < 1e-4


def test_prefactor_values():
    assert prefactor_value("none", 1.0, 0.1, 5) == 1.0
    assert prefactor_value("lattice", 2.0, 0.5, 3, dof=2) == pytest.approx((2 * np.pi * 1.5**3) ** 2)
    with pytest.raises(ValueError):
        prefactor_value("bogus", 1.0, 0.1, 5)


def test_grid_guards():
    g = Grid.square(4.0, 9)  # spacing 1
    with pytest.raises(GridError):
        build_kernel(None, 1.0, 0.01, g)
    k = build_kernel(None, 1.0, 0.25, Grid.square(3.0, 25))
    with pytest.raises(GridError):
        compose(k, 4, PhasePoint([2.9], [0.0]), XI)
    with pytest.raises(ValueError):
        build_kernel(oscillator(2), 1.0, 0.25, Grid.square(3.0, 25))


def test_single_step_is_direct_weight():
    k = build_kernel(oscillator(1), 1.0, 0.25, Grid.square(6.0, 49))
    d = XF.as_vector() - XI.as_vector()
    g = np.exp(-np.sum(d**2) / 0.5) / (2 * np.pi * 0.25)
    mid_p, mid_q = 0.5, 0.5
    phase = mid_p * (1.0 - 0.0) - 0.25 * 0.5 * (mid_p**2 + mid_q**2)
    want = g * np.exp(1j * phase) * prefactor_value("lattice", 1.0, 0.25, 1)
    assert compose(k, 1, XF, XI) == pytest.approx(want, rel=1e-12)


def test_grid_error_estimate_is_small():
    nu, T = 10.0, 0.2
    pol = GridPolicy()
    L = pol.steps(nu, T)
    amp, est = compose_with_error(oscillator(1), nu, T / L, pol.grid(nu, T / L, XF, XI), L, XF, XI)
    assert est < 1e-3 * abs(amp)


def test_monte_carlo_agrees_with_lattice():
    nu, T = 10.0, 0.2
    pol = GridPolicy()
    L = pol.steps(nu, T)
    lat = compose(build_kernel(oscillator(1), nu, T / L, pol.grid(nu, T / L, XF, XI)), L, XF, XI)
    res = mc_estimate(oscillator(1), nu, T, L, XF, XI, 20000, 7)
    assert res.reliable
    assert abs(res.mean - lat) < 3 * res.stderr * np.sqrt(2)


def test_monte_carlo_reproducible_across_workers():
    a = mc_estimate(oscillator(1), 5.0, 0.2, 20, XF, XI, 5000, 3, chunk=1000)
    b = mc_estimate(oscillator(1), 5.0, 0.2, 20, XF, XI, 5000, 3, chunk=1000, workers=3)
    assert a.mean == b.mean and a.stderr == b.stderr
    c = mc_estimate(oscillator(1), 5.0, 0.2, 20, XF, XI, 5000, np.random.SeedSequence(3), chunk=1000)
    assert c.mean == a.mean


def test_monte_carlo_flags_noise():
    far = PhasePoint([4.0], [-4.0])
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        res = mc_estimate(oscillator(1), 50.0, 1.0, 200, far, XI, 200, 0)
    assert not res.reliable
    assert any("UNRELIABLE" in str(x.message) for x in w)


def test_nu_sweep_monotone_and_extrapolation():
    tab = nu_sweep(oscillator(1), 0.2, XF, XI, [2, 4, 8])
    assert tab.strictly_decreasing()
    ext = tab.extrapolated()
    assert abs(ext - tab.oracle) < abs(tab.rows[-1].amplitude - tab.oracle)
    with pytest.raises(ValueError):
        nu_sweep(oscillator(1), 0.2, XF, XI, [4, 2])


def test_quartic_sweep_decreases():
    h = oscillator(1) + 0.25 * PolySymbol.q(0, 1) ** 4
    tab = nu_sweep(h, 0.2, XF, XI, [2, 4, 8])
    assert tab.strictly_decreasing()


def test_convergence_table_outputs(tmp_path):
    tab = nu_sweep(oscillator(1), 0.1, XF, XI, [2, 4])
    tab.to_csv(tmp_path / "s.csv", {"config_hash": "abc"})
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0].split(",")[-1] == "config_hash" and len(lines) == 3
    tab.to_json(tmp_path / "s.json", note=1)
    assert (tmp_path / "s.json").read_text().count('"nu"') == 2
