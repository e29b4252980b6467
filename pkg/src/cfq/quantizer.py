"""Anti-Wick (coherent-state) quantization and its checks.

Two routes to ``H = int h(p,q) |p,q><p,q| dmu``:

* ``combinatorial``: rewrite ``h`` in ``z = (q + ip)/sqrt 2`` and place every
  ``a`` to the left of every ``a^dag``; built in an enlarged space and cropped,
  so every matrix element of the returned operator is exact.
* ``quadrature``: sum weighted coherent projectors over a phase-space rule.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from math import comb

import numpy as np
from scipy.special import roots_laguerre

from .fock import (
    FockOperator,
    FockSpace,
    PhasePoint,
    StateVector,
    coherent_amplitudes,
    coherent_state,
    ladder,
    overlap,
)
from .symbols import ActionAngle, PolySymbol

BACKEND_TOL = 1e-8


class QuantizationMismatch(RuntimeError):
    pass


@dataclass(frozen=True)
class PhaseQuadrature:
    """Nodes ``(p..., q...)`` and weights for ``int f dmu_N``, ``dmu_N = prod dp dq / 2pi``.

    Weights include the ``1/2pi`` per degree of freedom, so ``sum(w * f)``
    approximates the normalized integral directly.
    """

    nodes: np.ndarray  # (n, 2N)
    weights: np.ndarray  # (n,)
    scheme: str
    dof: int = 1

    def __len__(self):
        return self.weights.size

    def points(self):
        for x in self.nodes:
            yield PhasePoint.from_vector(x)

    def gaussian_moment(self, k: int) -> float:
        """``sum w e^{-|z|^2} |z|^{2k}``; exact value is ``k!`` for N = 1."""
        z2 = 0.5 * np.sum(self.nodes**2, axis=1)
        return float(np.sum(self.weights * np.exp(-z2) * z2**k))


@lru_cache(maxsize=32)
def _laguerre(order: int):
    u, w = roots_laguerre(order)
    # integrate plain f(u) du; the e^{-u} comes back through the coherent states
    return u, np.exp(np.log(w) + u)


def _product_rule(mode_nodes: np.ndarray, mode_weights: np.ndarray, dof: int):
    if dof == 1:
        return mode_nodes, mode_weights
    idx = np.array(list(itertools.product(range(mode_weights.size), repeat=dof)))
    p = mode_nodes[idx, 0]
    q = mode_nodes[idx, 1]
    return np.hstack([p, q]), np.prod(mode_weights[idx], axis=1)


def polar_quadrature(radial_order: int = 32, angular_points: int = 64, dof: int = 1) -> PhaseQuadrature:
    """Gauss-Laguerre in ``u = |z|^2`` times a trapezoid in the polar angle.

    With ``p = sqrt(2u) cos(theta)``, ``q = sqrt(2u) sin(theta)`` the measure
    ``dp dq / 2pi`` becomes ``du dtheta / 2pi``. Exact for integrands
    ``e^{-u} u^k e^{i m theta}`` with ``k <= 2*radial_order - 1`` and ``|m| < angular_points``.
    """
    u, wu = _laguerre(radial_order)
    theta = 2 * np.pi * np.arange(angular_points) / angular_points
    rho = np.sqrt(2 * u)
    P = np.outer(rho, np.cos(theta)).ravel()
    Q = np.outer(rho, np.sin(theta)).ravel()
    w = np.outer(wu, np.full(angular_points, 1.0 / angular_points)).ravel()
    nodes, weights = _product_rule(np.column_stack([P, Q]), w, dof)
    return PhaseQuadrature(nodes, weights, f"polar(radial={radial_order},angular={angular_points})", dof)


def hermite_quadrature(order: int = 48, scale: float = 1.0, dof: int = 1) -> PhaseQuadrature:
    """Tensor Gauss-Hermite rule in ``(p, q)`` with Gaussian weight ``exp(-(p^2+q^2)/(2 scale^2))`` divided out."""
    x, w = np.polynomial.hermite_e.hermegauss(order)
    x = x * scale
    w = w * scale * np.exp(0.5 * (x / scale) ** 2)
    P, Q = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w) / (2 * np.pi)
    nodes, weights = _product_rule(np.column_stack([P.ravel(), Q.ravel()]), W.ravel(), dof)
    return PhaseQuadrature(nodes, weights, f"hermite(order={order},scale={scale})", dof)


@dataclass(frozen=True)
class ActionAngleQuadrature:
    """Rule over ``(r, s)`` for ``int f dr ds / 2pi``; single degree of freedom."""

    r: np.ndarray
    s: np.ndarray
    weights: np.ndarray
    scheme: str


def action_angle_quadrature(radial_order: int = 32, angular_points: int = 64) -> ActionAngleQuadrature:
    r, wr = _laguerre(radial_order)
    s = -np.pi + 2 * np.pi * (np.arange(angular_points) + 1) / angular_points  # (-pi, pi]
    R, S = np.meshgrid(r, s, indexing="ij")
    W = np.outer(wr, np.full(angular_points, 1.0 / angular_points))
    return ActionAngleQuadrature(R.ravel(), S.ravel(), W.ravel(), f"action-angle(radial={radial_order},angular={angular_points})")


def working_cutoff(cutoff: int, z2_max: float = 0.0, degree: int = 0) -> int:
    """Internal cutoff for coherent amplitudes feeding a cropped ``cutoff``-dimensional result.

    Quadrature weights carry ``e^{+u}``, so every node's amplitudes must be
    accurate, including the far Laguerre nodes; the Poisson occupation
    distribution of the largest label is covered out to about 12 sigma.
    """
    return int(max(2 * cutoff + 2 * degree + 32, np.ceil(z2_max + 12 * np.sqrt(z2_max) + 2 * degree + 24)))


def _mode_amplitudes(space: FockSpace, nodes: np.ndarray, dw: int) -> list[np.ndarray]:
    n = space.dof
    return [coherent_amplitudes(dw, nodes[:, j], nodes[:, n + j])[:, : space.cutoff] for j in range(n)]


def assemble_projectors(space: FockSpace, nodes: np.ndarray, coeffs: np.ndarray, chunk: int = 8192, degree: int = 0) -> np.ndarray:
    """``sum_k coeffs_k |x_k><x_k|`` cropped to ``space``."""
    n = space.dof
    z2 = 0.5 * (nodes[:, :n] ** 2 + nodes[:, n:] ** 2)
    dw = working_cutoff(space.cutoff, float(z2.max(initial=0.0)), degree)
    out = np.zeros((space.dim, space.dim), dtype=complex)
    for start in range(0, len(coeffs), chunk):
        sl = slice(start, start + chunk)
        modes = _mode_amplitudes(space, nodes[sl], dw)
        psi = modes[0]
        for m in modes[1:]:
            psi = np.einsum("ki,kj->kij", psi, m).reshape(psi.shape[0], -1)
        out += psi.T @ (coeffs[sl, None] * psi.conj())
    return out


# ---------------------------------------------------------------------------
# combinatorial antinormal ordering


def _zzbar_coefficients(alpha: int, beta: int) -> dict[tuple[int, int], complex]:
    """Coefficients ``c[m, n]`` of ``p^alpha q^beta = sum c z^m zbar^n``."""
    # p = (z - zbar)/(i sqrt2), q = (z + zbar)/sqrt2
    out: dict[tuple[int, int], complex] = {}
    pre = (1.0 / (1j * np.sqrt(2))) ** alpha * (1.0 / np.sqrt(2)) ** beta
    for i in range(alpha + 1):
        for k in range(beta + 1):
            m = i + k
            n = (alpha - i) + (beta - k)
            c = pre * comb(alpha, i) * (-1) ** (alpha - i) * comb(beta, k)
            out[(m, n)] = out.get((m, n), 0.0) + c
    return out


@lru_cache(maxsize=256)
def _mode_antinormal(alpha: int, beta: int, cutoff: int) -> np.ndarray:
    """Single-mode antinormal-ordered ``p^alpha q^beta``, exact on the ``cutoff`` block."""
    big = cutoff + alpha + beta + 1
    a = ladder(big).astype(complex)
    ad = a.T
    out = np.zeros((big, big), dtype=complex)
    apow = [np.eye(big, dtype=complex)]
    adpow = [np.eye(big, dtype=complex)]
    for _ in range(alpha + beta):
        apow.append(apow[-1] @ a)
        adpow.append(adpow[-1] @ ad)
    for (m, n), c in _zzbar_coefficients(alpha, beta).items():
        out += c * (apow[m] @ adpow[n])
    res = out[:cutoff, :cutoff].copy()
    res.setflags(write=False)
    return res


def _anti_wick_combinatorial(space: FockSpace, h: PolySymbol) -> np.ndarray:
    out = np.zeros((space.dim, space.dim), dtype=complex)
    n = space.dof
    for key, c in h.terms.items():
        op = None
        for j in range(n):
            m = _mode_antinormal(key[j], key[n + j], space.cutoff)
            op = m if op is None else np.kron(op, m)
        out += c * op
    return out


def _anti_wick_quadrature(space: FockSpace, h: PolySymbol, quad: PhaseQuadrature) -> np.ndarray:
    vals = h.evaluate(quad.nodes)
    return assemble_projectors(space, quad.nodes, quad.weights * vals, degree=h.degree)


def default_quadrature(space: FockSpace, degree: int = 0) -> PhaseQuadrature:
    if space.dof == 1:
        radial = max(32, (space.cutoff + degree) // 2 + 8)
        angular = max(64, space.cutoff + degree + 8)
        return polar_quadrature(radial, angular)
    radial = space.cutoff + degree // 2 + 4
    angular = 2 * space.cutoff + degree + 4
    return polar_quadrature(radial, angular, space.dof)


def anti_wick(
    space: FockSpace,
    h: PolySymbol,
    backend: str = "combinatorial",
    quad: PhaseQuadrature | None = None,
    check: bool = False,
    tol: float = BACKEND_TOL,
) -> FockOperator:
    """Anti-Wick operator of the polynomial symbol ``h``.

    ``check=True`` computes both backends and raises
    :class:`QuantizationMismatch` when they differ by more than ``tol`` on the
    low block.
    """
    if h.dof != space.dof:
        raise ValueError(f"symbol has dof {h.dof}, space has {space.dof}")
    if backend not in ("combinatorial", "quadrature"):
        raise ValueError(f"unknown backend {backend!r}")
    comb_m = quad_m = None
    if backend == "combinatorial" or check:
        comb_m = _anti_wick_combinatorial(space, h)
    if backend == "quadrature" or check:
        quad_m = _anti_wick_quadrature(space, h, quad or default_quadrature(space, h.degree))
    if check:
        idx = space.low_block
        dev = float(np.max(np.abs(comb_m[np.ix_(idx, idx)] - quad_m[np.ix_(idx, idx)])))
        if dev > tol:
            raise QuantizationMismatch(f"backends disagree by {dev:.3e} on the low block (tol {tol:g})")
    m = comb_m if backend == "combinatorial" else quad_m
    m = 0.5 * (m + m.conj().T)  # real symbols give Hermitian operators
    return FockOperator(space, m, hermitian=True)


def lower_symbol(A: FockOperator, x: PhasePoint) -> complex:
    """``<x|A|x>``."""
    psi = coherent_state(A.space, x)
    return overlap(psi, A @ psi)


@dataclass
class ResolutionReport:
    low_block_deviation: float
    top_state_deviation: float
    scheme: str
    nodes: int


def resolution_check(space: FockSpace, quad: PhaseQuadrature) -> ResolutionReport:
    """Deviation of ``sum w |x><x|`` from the identity."""
    if quad.dof != space.dof:
        raise ValueError("quadrature and space disagree on dof")
    m = assemble_projectors(space, quad.nodes, quad.weights)
    dev = np.abs(m - np.eye(space.dim))
    idx = space.low_block
    low = float(np.max(dev[np.ix_(idx, idx)]))
    top = float(np.max(dev[-1]))
    return ResolutionReport(low, top, quad.scheme, len(quad))


# ---------------------------------------------------------------------------
# action-angle labels


def transformed_state(space: FockSpace, r: float, s: float) -> StateVector:
    """``|r,s> = e^{-iG(r,s)} |p(r,s), q(r,s)>`` for one degree of freedom."""
    if space.dof != 1:
        raise ValueError("transformed states are defined for one degree of freedom")
    if not r > 0:
        raise ValueError(f"action must be positive, got r = {r}")
    aa = ActionAngle()
    x = PhasePoint([aa.p(r, s)], [aa.q(r, s)])
    return coherent_state(space, x) * np.exp(-1j * aa.G(r, s))


def action_angle_operator(space: FockSpace, symbol, quad: ActionAngleQuadrature | None = None) -> FockOperator:
    """``int hbar(r,s) |r,s><r,s| dr ds / 2pi`` for a callable ``hbar(r, s)``."""
    if space.dof != 1:
        raise ValueError("action-angle construction is one-dimensional")
    quad = quad or action_angle_quadrature()
    aa = ActionAngle()
    p, q = aa.p(quad.r, quad.s), aa.q(quad.r, quad.s)
    dw = working_cutoff(space.cutoff, float(quad.r.max()), 2)
    psi = coherent_amplitudes(dw, p, q)[:, : space.cutoff] * np.exp(-1j * aa.G(quad.r, quad.s))[:, None]
    coeffs = quad.weights * np.asarray(symbol(quad.r, quad.s), dtype=float)
    m = psi.T @ (coeffs[:, None] * psi.conj())
    return FockOperator(space, 0.5 * (m + m.conj().T), hermitian=True)
