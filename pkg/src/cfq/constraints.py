"""Quantum constraints, group-averaged projectors and gauge-averaged propagation.

Only compact abelian groups are handled here: one or more commuting constraint
operators with integer spectrum (U(1) and tori). Projectors are trapezoid
averages of ``exp(i xi . Phi)`` over ``[0, 2 pi)^K``.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import expm_multiply

from .fock import FockOperator, FockSpace, PhasePoint, StateVector, canonical_ops, coherent_state, evolve, overlap
from .paths import RNG_ALGORITHM, seed_sequence
from .symbols import ConstraintSet, classify_constraints, gauge_flow

CLOSURE_TOL = 1e-8
PROJECTOR_TOL = 1e-10
COMMUTE_TOL = 1e-8
INTEGER_TOL = 1e-8


class InsufficientNodes(ValueError):
    """Raised (or reported) when a group quadrature cannot average exactly."""

    def __init__(self, message: str, required: int):
        super().__init__(message)
        self.required = required


class GaugeIncompatible(ValueError):
    pass


def low_norm(A: FockOperator) -> float:
    """Spectral norm of the low-block submatrix."""
    m = A.low()
    return float(np.linalg.norm(m, 2)) if m.size else 0.0


# ---------------------------------------------------------------------------
# constraint operators


@dataclass
class QuantumConstraintSet:
    operators: list[FockOperator]
    source: ConstraintSet
    structure: np.ndarray  # [Phi_a, Phi_b] = i structure[a, b, c] Phi_c
    hamiltonian_structure: np.ndarray | None = None
    closure_residual: float = 0.0
    hamiltonian_residual: float | None = None
    flagged: bool = False

    @property
    def space(self) -> FockSpace:
        return self.operators[0].space

    @property
    def K(self) -> int:
        return len(self.operators)

    def combination(self, xi) -> FockOperator:
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        out = self.operators[0] * float(xi[0])
        for c, op in zip(xi[1:], self.operators[1:]):
            out = out + op * float(c)
        return out

    @property
    def is_abelian(self) -> bool:
        return not np.any(self.structure)


def quantize_constraints(
    space: FockSpace,
    cs: ConstraintSet,
    H: FockOperator | None = None,
    h=None,
    *,
    sparse: bool = False,
    tol: float = CLOSURE_TOL,
) -> QuantumConstraintSet:
    """``Phi_a = shift[a, j] P_j + coupling[a, b, c] (Q^b P_c + P_c Q^b)/2``.

    Closure of the commutator algebra is measured on the low block; a residual
    above ``tol`` sets ``flagged`` (with a warning) instead of raising. Pass
    the classical ``h`` together with ``H`` to check the Hamiltonian closure.
    """
    if not cs.is_yang_mills:
        raise ValueError("only constraints linear in the momenta can be quantized here")
    if cs.dof != space.dof:
        raise ValueError(f"constraints have dof {cs.dof}, space has {space.dof}")
    qp = canonical_ops(space, sparse=sparse)
    ops = []
    for a in range(cs.K):
        m = 0 * qp[0][0].matrix
        for j in range(cs.dof):
            if cs.shift[a, j]:
                m = m + cs.shift[a, j] * qp[j][1].matrix
        for b, c in itertools.product(range(cs.dof), repeat=2):
            if cs.coupling[a, b, c]:
                Qb, Pc = qp[b][0].matrix, qp[c][1].matrix
                m = m + cs.coupling[a, b, c] * 0.5 * (Qb @ Pc + Pc @ Qb)
        m = 0.5 * (m + m.conj().T)
        ops.append(FockOperator(space, m, hermitian=True))

    report = classify_constraints(cs, h)
    struct = report.structure
    resid = 0.0
    for a, b in itertools.product(range(cs.K), repeat=2):
        lhs = ops[a].commutator(ops[b])
        rhs = sum((ops[c] * (1j * struct[a, b, c]) for c in range(cs.K)), ops[0] * 0.0)
        resid = max(resid, low_norm(lhs - rhs))
    h_resid = None
    hstruct = None
    if H is not None:
        hstruct = report.hamiltonian if report.hamiltonian is not None else np.zeros((cs.K, cs.K))
        h_resid = 0.0
        for a in range(cs.K):
            lhs = ops[a].commutator(H)
            rhs = sum((ops[b] * (1j * hstruct[a, b]) for b in range(cs.K)), ops[0] * 0.0)
            h_resid = max(h_resid, low_norm(lhs - rhs))
    flagged = resid > tol or (h_resid is not None and h_resid > tol)
    if flagged:
        warnings.warn(f"constraint algebra closes only to {max(resid, h_resid or 0.0):.3e} on the low block", RuntimeWarning, stacklevel=2)
    return QuantumConstraintSet(ops, cs, struct, hstruct, resid, h_resid, flagged)


# ---------------------------------------------------------------------------
# group averaging


@dataclass(frozen=True)
class GroupQuadrature:
    """Nodes ``xi_k`` (shape ``(n, K)``) and normalized weights."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        nodes = np.atleast_2d(np.asarray(self.nodes, dtype=float))
        w = np.asarray(self.weights, dtype=float)
        if nodes.shape[0] != w.size:
            raise ValueError("one weight per node")
        if np.any(w <= 0):
            raise ValueError("weights must be positive")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"weights must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "weights", w)

    @property
    def points_per_axis(self) -> int:
        return round(len(self.weights) ** (1.0 / self.nodes.shape[1]))

    @classmethod
    def trapezoid(cls, points: int, dim: int = 1) -> "GroupQuadrature":
        """Uniform ``points``-per-axis grid on the torus ``[0, 2 pi)^dim``."""
        if points < 1:
            raise ValueError("need at least one node")
        axis = 2 * np.pi * np.arange(points) / points
        nodes = np.array(list(itertools.product(axis, repeat=dim)))
        return cls(nodes, np.full(len(nodes), 1.0 / len(nodes)))


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray  # eigenvalues with support on the low block, per constraint
    integer: bool
    span: float
    required_nodes: int


def relevant_spectrum(qcs: QuantumConstraintSet, weight_tol: float = 1e-12) -> SpectrumReport:
    """Eigenvalues of each ``Phi_a`` whose eigenvectors touch the low block.

    Truncation produces non-integer eigenvalues on states near the cutoff;
    those never reach the low block for number-conserving constraints and
    are excluded.
    """
    idx = qcs.space.low_block
    vals = []
    for op in qcs.operators:
        w, v = op.eigh()
        touch = np.sum(np.abs(v[idx]) ** 2, axis=0) > weight_tol
        vals.append(w[touch])
    allv = np.concatenate(vals)
    integer = bool(np.all(np.abs(allv - np.round(allv)) <= INTEGER_TOL))
    span = max(float(np.ptp(v)) if v.size else 0.0 for v in vals)
    return SpectrumReport(allv, integer, span, int(math.ceil(span - INTEGER_TOL)) + 1)


def _unitary(qcs: QuantumConstraintSet, xi) -> np.ndarray:
    """Dense ``exp(i xi . Phi)`` for commuting constraints."""
    xi = np.atleast_1d(xi)
    out = np.eye(qcs.space.dim, dtype=complex)
    for c, op in zip(xi, qcs.operators):
        if c:
            w, v = op.eigh()
            out = ((v * np.exp(1j * c * w)) @ v.conj().T) @ out
    return out


def build_projector(
    qcs: QuantumConstraintSet,
    quad: GroupQuadrature,
    *,
    strict: bool = True,
    workers: int = 1,
) -> FockOperator:
    """``E = sum_k w_k exp(i xi_k . Phi)``.

    ``strict`` raises :class:`InsufficientNodes` when the per-axis node count
    is below the span of the relevant integer spectrum plus one.
    """
    if not qcs.is_abelian:
        raise ValueError("group averaging is implemented for commuting constraints")
    if quad.nodes.shape[1] != qcs.K:
        raise ValueError(f"quadrature is {quad.nodes.shape[1]}-dimensional, constraint set has K={qcs.K}")
    spectrum = relevant_spectrum(qcs)
    if strict:
        if not spectrum.integer:
            raise InsufficientNodes("constraint spectrum is not integer on the low block; trapezoid averaging is not exact", spectrum.required_nodes)
        if quad.points_per_axis < spectrum.required_nodes:
            raise InsufficientNodes(f"{quad.points_per_axis} nodes per axis, exact averaging needs K >= {spectrum.required_nodes}", spectrum.required_nodes)
    if qcs.K == 1:
        # one eigendecomposition, averaged phases
        w, v = qcs.operators[0].eigh()
        phases = np.exp(1j * np.outer(quad.nodes[:, 0], w))
        m = (v * (quad.weights @ phases)) @ v.conj().T
    else:
        def term(k):
            return quad.weights[k] * _unitary(qcs, quad.nodes[k])

        with ThreadPoolExecutor(max(1, workers)) as ex:
            m = sum(ex.map(term, range(len(quad.weights))))
    m = 0.5 * (m + m.conj().T)
    return FockOperator(qcs.space, m, hermitian=True)


@dataclass
class ProjectorReport:
    idempotence: float  # low-block ||E^2 - E||
    hermiticity: float  # low-block ||E - E^dag||
    annihilation: float  # low-block ||Phi_a E||, max over a
    oracle: float | None  # low-block ||E - eigenspace projector||
    trace: float
    physical_states: int
    required_nodes: int
    nodes: int

    @property
    def ok(self) -> bool:
        vals = [self.idempotence, self.hermiticity, self.annihilation] + ([self.oracle] if self.oracle is not None else [])
        return max(vals) <= PROJECTOR_TOL

    def to_dict(self) -> dict:
        return {k: (float(v) if isinstance(v, (float, np.floating)) else v) for k, v in self.__dict__.items()}


def eigenspace_projector(qcs: QuantumConstraintSet) -> np.ndarray:
    """Projector onto the joint zero eigenspace, from eigendecompositions."""
    P = np.eye(qcs.space.dim, dtype=complex)
    for op in qcs.operators:
        w, v = op.eigh()
        z = v[:, np.abs(w) < 0.5]
        P = (z @ z.conj().T) @ P
    return P


def projector_report(E: FockOperator, qcs: QuantumConstraintSet, quad: GroupQuadrature | None = None) -> ProjectorReport:
    idx = qcs.space.low_block
    e = E.dense()
    el = e[np.ix_(idx, idx)]
    oracle = eigenspace_projector(qcs)[np.ix_(idx, idx)] if qcs.K == 1 else None
    spectrum = relevant_spectrum(qcs)
    # count from the trace: eigh may mix degenerate shells, so eigenvector counts are basis dependent
    zero = int(round(float(np.real(np.trace(oracle))))) if oracle is not None else -1
    return ProjectorReport(
        idempotence=low_norm((E @ E) - E),
        hermiticity=low_norm(E - E.dagger),
        annihilation=max(low_norm(op @ E) for op in qcs.operators),
        oracle=float(np.linalg.norm(el - oracle, 2)) if oracle is not None else None,
        trace=float(np.real(np.trace(el))),
        physical_states=zero,
        required_nodes=spectrum.required_nodes,
        nodes=quad.points_per_axis if quad is not None else -1,
    )


def group_shift_absorption(E: FockOperator, qcs: QuantumConstraintSet, tau) -> float:
    """Low-block norm of ``exp(i tau . Phi) E - E``."""
    return low_norm(FockOperator(E.space, _unitary(qcs, tau) @ E.dense()) - E)


# ---------------------------------------------------------------------------
# projected propagation


@dataclass
class ProjectedResult:
    value: complex
    commutator: float  # low-block ||[H, E]||
    expression_spread: float  # max low-block difference among the three forms


def projected_propagator(H: FockOperator, E: FockOperator, T: float, x_final: PhasePoint, x_initial: PhasePoint, *, check: bool = True) -> ProjectedResult:
    """``<x''| exp(-iHT) E |x'>``.

    With ``check`` the three forms ``U E``, ``E U E`` and ``E exp(-i EHE T) E``
    are compared on the low block and ``[H, E]`` must vanish there.
    """
    if not H.hermitian:
        raise ValueError("H must be Hermitian")
    comm = low_norm(H.commutator(E))
    if comm > COMMUTE_TOL:
        raise GaugeIncompatible(f"[H, E] = {comm:.3e} on the low block; constraints are not first class with this H")
    spread = 0.0
    if check:
        idx = H.space.low_block
        e = E.dense()
        w, v = H.eigh()
        U = (v * np.exp(-1j * T * w)) @ v.conj().T
        EHE = 0.5 * (e @ H.dense() @ e + (e @ H.dense() @ e).conj().T)
        forms = [U @ e, e @ U @ e, e @ sla.expm(-1j * T * EHE) @ e]
        lows = [f[np.ix_(idx, idx)] for f in forms]
        spread = max(float(np.max(np.abs(a - b))) for a, b in itertools.combinations(lows, 2))
    ket = E @ coherent_state(H.space, x_initial)
    val = overlap(coherent_state(H.space, x_final), evolve(H, T, ket))
    return ProjectedResult(val, comm, spread)


def multiplier_shift_deviation(H: FockOperator, E: FockOperator, qcs: QuantumConstraintSet, T: float, x_final: PhasePoint, x_initial: PhasePoint, taus) -> float:
    """Max over ``taus`` of ``|<x''|U exp(i tau.Phi) E|x'> - <x''|U E|x'>|``."""
    ket = coherent_state(H.space, x_initial)
    bra = coherent_state(H.space, x_final)
    Eket = E @ ket
    base = overlap(bra, evolve(H, T, Eket))
    dev = 0.0
    for tau in taus:
        shifted = StateVector(H.space, _unitary(qcs, tau) @ Eket.amplitudes)
        dev = max(dev, abs(overlap(bra, evolve(H, T, shifted)) - base))
    return dev


# ---------------------------------------------------------------------------
# coherent-state transport


@dataclass
class TransportResult:
    fidelity: float
    overlap: complex
    label: PhasePoint


def coherent_transport_check(qcs: QuantumConstraintSet, omega, x: PhasePoint) -> TransportResult:
    """Compare ``exp(i Omega.Phi)|x>`` with the coherent state at the gauge-flowed label.

    Works with sparse constraint operators through ``expm_multiply``.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    space = qcs.space
    label = gauge_flow(qcs.source, omega, x)
    target = coherent_state(space, label)  # raises when the flowed label leaves the guard
    psi = coherent_state(space, x).amplitudes
    gen = qcs.combination(omega).matrix
    moved = expm_multiply(1j * gen, psi) if np.any(omega) else psi
    ov = complex(np.vdot(target.amplitudes, moved))
    return TransportResult(abs(ov), ov, label)


# ---------------------------------------------------------------------------
# averaged propagation


@dataclass(frozen=True)
class MultiplierMeasure:
    """Brownian motion on the circle for the multiplier angle ``theta(t)``.

    ``lambda = d theta/dt``. The start point is drawn uniformly (neither end
    is pinned), so every ``theta(t)`` is uniform on the circle and the
    measure has unit mass. ``diffusion = 0`` freezes ``theta`` at its start.
    """

    diffusion: float = 1.0
    steps: int = 32

    def __post_init__(self):
        if self.diffusion < 0:
            raise ValueError("diffusion must be non-negative")
        if self.steps < 1:
            raise ValueError("need at least one step")

    def sample(self, rng: np.random.Generator, n: int, T: float, steps: int | None = None) -> np.ndarray:
        """Unwrapped angles ``(n, steps + 1)``; reduce mod ``2 pi`` for points on the circle."""
        L = steps or self.steps
        theta0 = rng.uniform(0.0, 2 * np.pi, size=(n, 1))
        inc = rng.standard_normal((n, L)) * math.sqrt(self.diffusion * T / L)
        return np.concatenate([theta0, theta0 + np.cumsum(inc, axis=1)], axis=1)


@dataclass
class AveragedResult:
    mode: str
    mean: complex
    stderr: float
    n_samples: int
    reliable: bool = True
    trotter_monitor: float | None = None
    rng: str = RNG_ALGORITHM

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "mean_re": self.mean.real,
            "mean_im": self.mean.imag,
            "stderr": self.stderr,
            "n_samples": self.n_samples,
            "reliable": self.reliable,
            "trotter_monitor": self.trotter_monitor,
            "rng": self.rng,
        }


def _mc_result(mode, values, trotter=None) -> AveragedResult:
    n = values.size
    mean = complex(values.mean())
    se = float(np.sqrt(np.sum(np.abs(values - mean) ** 2) / (n * (n - 1)))) if n > 1 else float("inf")
    reliable = se <= 0.5 * abs(mean)
    if not reliable:
        warnings.warn(f"UNRELIABLE: standard error {se:.3e} exceeds half of |mean| = {abs(mean):.3e}", RuntimeWarning, stacklevel=3)
    return AveragedResult(mode, mean, se, n, reliable, trotter)


class _Evolver:
    """Time-ordered ``prod exp(-i(H + lambda_l Phi) eps)`` applied to many states at once.

    Works in the eigenbasis of ``Phi``; each step is a Lie-Trotter pair
    ``exp(-i H eps) exp(-i lambda_l Phi eps)``.
    """

    def __init__(self, H: FockOperator, Phi: FockOperator, T: float, steps: int):
        self.w, self.v = Phi.eigh()
        self.eps = T / steps
        self.steps = steps
        Ht = self.v.conj().T @ H.dense() @ self.v
        Ht = 0.5 * (Ht + Ht.conj().T)
        hw, hv = np.linalg.eigh(Ht)
        self.UH = (hv * np.exp(-1j * self.eps * hw)) @ hv.conj().T

    def run(self, psi0: np.ndarray, theta: np.ndarray) -> np.ndarray:
        """``psi0`` is ``(dim,)``; ``theta`` is ``(n, steps + 1)``. Returns ``(dim, n)`` in the original basis."""
        x = self.v.conj().T @ psi0
        state = np.exp(-1j * np.outer(self.w, theta[:, 0])) * x[:, None]  # label rotated to the start angle
        lam = np.diff(theta, axis=1) / self.eps
        for l in range(self.steps):
            state = self.UH @ (np.exp(-1j * self.eps * np.outer(self.w, lam[:, l])) * state)
        return self.v @ state


def averaged_propagator(
    H: FockOperator,
    qcs: QuantumConstraintSet,
    T: float,
    x_final: PhasePoint,
    x_initial: PhasePoint,
    *,
    mode: str = "quadrature",
    nodes: int = 64,
    measure: MultiplierMeasure | None = None,
    n_samples: int = 10_000,
    seed=0,
    chunk: int = 2000,
    workers: int = 1,
    monitor_samples: int = 64,
) -> AveragedResult:
    """Gauge-averaged propagator for one U(1) constraint.

    ``mode``:

    * ``"quadrature"``: trapezoid average of ``<x''|U|x'^Omega>`` over ``nodes``
      gauge-flowed initial labels (deterministic, stderr 0).
    * ``"labels"``: the same average with uniformly sampled ``Omega``.
    * ``"multiplier"``: sample ``theta(t)`` from ``measure``, rotate the
      initial state to ``theta(0)`` and evolve with ``lambda = d theta/dt``;
      a step-halving estimate of the splitting error is reported on a
      subsample.
    """
    if qcs.K != 1:
        raise ValueError("averaged propagation is implemented for a single U(1) constraint")
    space = H.space
    bra = coherent_state(space, x_final)
    U_bra = evolve(H, -T, bra).amplitudes  # U^dag |x''>

    def label_amp(omega):
        return complex(np.vdot(U_bra, coherent_state(space, gauge_flow(qcs.source, [omega], x_initial)).amplitudes))

    if mode == "quadrature":
        ks = 2 * np.pi * np.arange(nodes) / nodes
        vals = np.array([label_amp(o) for o in ks])
        return AveragedResult("quadrature", complex(vals.mean()), 0.0, nodes)

    seeds = seed_sequence(seed).spawn(max(1, math.ceil(n_samples / chunk)))
    sizes = [min(chunk, n_samples - i * chunk) for i in range(len(seeds))]

    if mode == "labels":
        def run(i):
            rng = np.random.Generator(np.random.PCG64(seeds[i]))
            return np.array([label_amp(o) for o in rng.uniform(0, 2 * np.pi, sizes[i])])

        with ThreadPoolExecutor(max(1, workers)) as ex:
            vals = np.concatenate(list(ex.map(run, range(len(seeds)))))
        return _mc_result("labels", vals)

    if mode != "multiplier":
        raise ValueError(f"unknown averaging mode {mode!r}")
    measure = measure or MultiplierMeasure()
    psi0 = coherent_state(space, x_initial).amplitudes
    Phi = qcs.operators[0]
    evo = _Evolver(H, Phi, T, measure.steps)

    def run(i):
        rng = np.random.Generator(np.random.PCG64(seeds[i]))
        theta = measure.sample(rng, sizes[i], T)
        return bra.amplitudes.conj() @ evo.run(psi0, theta)

    with ThreadPoolExecutor(max(1, workers)) as ex:
        vals = np.concatenate(list(ex.map(run, range(len(seeds)))))

    # splitting error: same paths on a grid twice as fine
    mon_rng = np.random.Generator(np.random.PCG64(seed_sequence(seed).spawn(len(seeds) + 1)[-1]))
    fine = measure.sample(mon_rng, monitor_samples, T, steps=2 * measure.steps)
    evo2 = _Evolver(H, Phi, T, 2 * measure.steps)
    a = bra.amplitudes.conj() @ evo.run(psi0, fine[:, ::2])
    b = bra.amplitudes.conj() @ evo2.run(psi0, fine)
    return _mc_result("multiplier", vals, float(np.max(np.abs(a - b))))


def averaging_json(results: list[AveragedResult], reference: complex, **extra) -> str:
    return json.dumps(
        {
            "reference_re": reference.real,
            "reference_im": reference.imag,
            "estimates": [r.to_dict() for r in results],
            **extra,
        },
        indent=2,
        sort_keys=True,
    )
