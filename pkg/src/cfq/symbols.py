"""Classical phase-space calculus on polynomial symbols.

A :class:`PolySymbol` is a sparse real polynomial in ``(p_1..p_N, q^1..q^N)``.
Exponent keys are tuples of length ``2N``: the first ``N`` entries are powers
of the momenta, the last ``N`` powers of the coordinates.

The Poisson bracket convention is

    {f, g} = sum_j (df/dq^j dg/dp_j - df/dp_j dg/dq^j)

so that ``{q, p} = 1`` and Hamilton's equations read ``xdot = {x, h}``.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np
from scipy.linalg import expm

from .fock import PhasePoint

MAX_DEGREE = 8
ZERO_TOL = 0.0


class DegreeOverflowError(ValueError):
    pass


class DomainError(ValueError):
    pass


class FlowBlowUp(RuntimeError):
    pass


class PolySymbol:
    """Sparse multivariate polynomial over ``(p, q)``."""

    __slots__ = ("dof", "terms", "max_degree")

    def __init__(self, dof: int, terms: Mapping[Sequence[int], float] | None = None, max_degree: int = MAX_DEGREE):
        self.dof = int(dof)
        self.max_degree = max_degree
        clean: dict[tuple[int, ...], float] = {}
        for key, c in (terms or {}).items():
            key = tuple(int(k) for k in key)
            if len(key) != 2 * self.dof or min(key) < 0:
                raise ValueError(f"bad exponent {key} for dof={self.dof}")
            c = float(c)
            if c != 0.0:
                clean[key] = clean.get(key, 0.0) + c
        self.terms = {k: v for k, v in clean.items() if v != 0.0}
        if self.degree > max_degree:
            raise DegreeOverflowError(f"degree {self.degree} exceeds maximum {max_degree}")

    # -- constructors ---------------------------------------------------
    @classmethod
    def constant(cls, dof: int, c: float) -> "PolySymbol":
        return cls(dof, {(0,) * (2 * dof): c})

    @classmethod
    def p(cls, j: int, dof: int) -> "PolySymbol":
        e = [0] * (2 * dof)
        e[j] = 1
        return cls(dof, {tuple(e): 1.0})

    @classmethod
    def q(cls, j: int, dof: int) -> "PolySymbol":
        e = [0] * (2 * dof)
        e[dof + j] = 1
        return cls(dof, {tuple(e): 1.0})

    @classmethod
    def from_terms(cls, dof: int, terms: Iterable) -> "PolySymbol":
        """Build from ``[(coefficient, [exponents...]), ...]`` as used in config files."""
        out: dict[tuple[int, ...], float] = {}
        for coeff, expo in terms:
            key = tuple(int(e) for e in expo)
            out[key] = out.get(key, 0.0) + float(coeff)
        return cls(dof, out)

    def to_terms(self) -> list:
        return [[c, list(k)] for k, c in sorted(self.terms.items())]

    # -- algebra -------------------------------------------------------
    @property
    def degree(self) -> int:
        return max((sum(k) for k in self.terms), default=0)

    def _check(self, other: "PolySymbol") -> None:
        if self.dof != other.dof:
            raise ValueError(f"dof mismatch: {self.dof} vs {other.dof}")

    def _lift(self, other) -> "PolySymbol":
        if isinstance(other, PolySymbol):
            self._check(other)
            return other
        return PolySymbol.constant(self.dof, float(other))

    def __add__(self, other) -> "PolySymbol":
        other = self._lift(other)
        terms = dict(self.terms)
        for k, c in other.terms.items():
            terms[k] = terms.get(k, 0.0) + c
        return PolySymbol(self.dof, terms, self.max_degree)

    __radd__ = __add__

    def __neg__(self) -> "PolySymbol":
        return PolySymbol(self.dof, {k: -c for k, c in self.terms.items()}, self.max_degree)

    def __sub__(self, other) -> "PolySymbol":
        return self + (-self._lift(other))

    def __rsub__(self, other) -> "PolySymbol":
        return self._lift(other) - self

    def __mul__(self, other) -> "PolySymbol":
        if not isinstance(other, PolySymbol):
            return PolySymbol(self.dof, {k: c * float(other) for k, c in self.terms.items()}, self.max_degree)
        self._check(other)
        terms: dict[tuple[int, ...], float] = {}
        for (k1, c1), (k2, c2) in itertools.product(self.terms.items(), other.terms.items()):
            k = tuple(a + b for a, b in zip(k1, k2))
            terms[k] = terms.get(k, 0.0) + c1 * c2
        return PolySymbol(self.dof, terms, self.max_degree)

    __rmul__ = __mul__

    def __pow__(self, n: int) -> "PolySymbol":
        out = PolySymbol.constant(self.dof, 1.0)
        for _ in range(n):
            out = out * self
        return out

    def diff(self, var: int) -> "PolySymbol":
        """Partial derivative with respect to variable ``var`` (0..2N-1, momenta first)."""
        terms = {}
        for k, c in self.terms.items():
            if k[var]:
                kk = list(k)
                kk[var] -= 1
                terms[tuple(kk)] = c * k[var]
        return PolySymbol(self.dof, terms, self.max_degree)

    def dp(self, j: int) -> "PolySymbol":
        return self.diff(j)

    def dq(self, j: int) -> "PolySymbol":
        return self.diff(self.dof + j)

    def max_abs_diff(self, other: "PolySymbol") -> float:
        d = self - other
        return max((abs(c) for c in d.terms.values()), default=0.0)

    def is_zero(self, tol: float = ZERO_TOL) -> bool:
        return all(abs(c) <= tol for c in self.terms.values())

    def __call__(self, p, q):
        """Evaluate at ``(p, q)``; trailing axis of each argument indexes the DOFs."""
        x = np.concatenate([np.atleast_1d(np.asarray(p, float)), np.atleast_1d(np.asarray(q, float))], axis=-1)
        return self.evaluate(x)

    def evaluate(self, x) -> np.ndarray:
        """Evaluate on stacked coordinates ``x[..., :] = (p..., q...)``."""
        x = np.asarray(x, dtype=float)
        if not self.terms:
            return np.zeros(x.shape[:-1])
        expo = np.array(list(self.terms.keys()))
        coef = np.array(list(self.terms.values()))
        return np.prod(x[..., None, :] ** expo, axis=-1) @ coef

    def __repr__(self) -> str:
        names = [f"p{j + 1}" for j in range(self.dof)] + [f"q{j + 1}" for j in range(self.dof)]
        parts = []
        for k, c in sorted(self.terms.items()):
            mono = "*".join(f"{n}^{e}" if e > 1 else n for n, e in zip(names, k) if e)
            parts.append(f"{c:g}" + (f"*{mono}" if mono else ""))
        return f"PolySymbol({' + '.join(parts) or '0'})"


def poisson_bracket(f: PolySymbol, g: PolySymbol) -> PolySymbol:
    f._check(g)
    out = PolySymbol(f.dof, {}, max(f.max_degree, g.max_degree))
    for j in range(f.dof):
        out = out + f.dq(j) * g.dp(j) - f.dp(j) * g.dq(j)
    return out


def oscillator(dof: int = 1) -> PolySymbol:
    """Isotropic ``sum_j (p_j^2 + q_j^2)/2``."""
    h = PolySymbol(dof)
    for j in range(dof):
        h = h + 0.5 * (PolySymbol.p(j, dof) ** 2 + PolySymbol.q(j, dof) ** 2)
    return h


def angular_momentum() -> PolySymbol:
    """``L = q^1 p_2 - q^2 p_1`` on two degrees of freedom."""
    p1, p2 = PolySymbol.p(0, 2), PolySymbol.p(1, 2)
    q1, q2 = PolySymbol.q(0, 2), PolySymbol.q(1, 2)
    return q1 * p2 - q2 * p1


# ---------------------------------------------------------------------------
# constraints


@dataclass
class ConstraintSet:
    """Constraints ``phi_a``.

    Yang-Mills type sets carry ``shift[a, j]`` and ``coupling[a, b, c]`` with
    ``phi_a = shift[a, j] p_j + coupling[a, b, c] q^b p_c`` and ``coupling``
    antisymmetric in ``(b, c)``. The canonical form has ``shift = delta``.
    """

    constraints: list[PolySymbol]
    coupling: np.ndarray | None = None
    shift: np.ndarray | None = None

    def __post_init__(self):
        if not self.constraints:
            raise ValueError("constraint set is empty")
        dof = self.dof
        if any(c.dof != dof for c in self.constraints):
            raise ValueError("all constraints must share one dof")
        if not 1 <= len(self.constraints) <= 2 * dof:
            raise ValueError(f"need 1 <= K <= 2N, got K={len(self.constraints)}, N={dof}")
        if self.coupling is not None:
            A = np.asarray(self.coupling, dtype=float)
            if A.shape != (len(self.constraints), dof, dof):
                raise ValueError(f"coupling must have shape (K, N, N), got {A.shape}")
            if np.max(np.abs(A + A.transpose(0, 2, 1)), initial=0.0) > 0:
                raise ValueError("coupling must be antisymmetric in its last two indices")
            self.coupling = A

    @property
    def dof(self) -> int:
        return self.constraints[0].dof

    @property
    def K(self) -> int:
        return len(self.constraints)

    @property
    def is_yang_mills(self) -> bool:
        return self.coupling is not None

    @classmethod
    def yang_mills(cls, coupling, shift=None) -> "ConstraintSet":
        A = np.asarray(coupling, dtype=float)
        K, N, _ = A.shape
        if shift is None:
            shift = np.eye(K, N)
        shift = np.asarray(shift, dtype=float)
        phis = []
        for a in range(K):
            phi = PolySymbol(N)
            for j in range(N):
                if shift[a, j]:
                    phi = phi + shift[a, j] * PolySymbol.p(j, N)
            for b, c in itertools.product(range(N), repeat=2):
                if A[a, b, c]:
                    phi = phi + A[a, b, c] * PolySymbol.q(b, N) * PolySymbol.p(c, N)
            phis.append(phi)
        return cls(phis, A, shift)

    @classmethod
    def rotation(cls) -> "ConstraintSet":
        """Single angular-momentum constraint in the (1, 2) plane."""
        A = np.zeros((1, 2, 2))
        A[0, 0, 1], A[0, 1, 0] = 1.0, -1.0
        return cls.yang_mills(A, shift=np.zeros((1, 2)))

    def values(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.stack([phi.evaluate(x) for phi in self.constraints], axis=-1)


@dataclass
class ClassificationReport:
    status: str  # FIRST_CLASS, SECOND_CLASS or MIXED
    structure: np.ndarray  # c[a, b, c] with {phi_a, phi_b} = c[a, b, c] phi_c
    hamiltonian: np.ndarray | None  # hc[a, b] with {phi_a, h} = hc[a, b] phi_b
    first_class: list[bool]
    residuals: dict = field(default_factory=dict)
    offending: list = field(default_factory=list)
    ambiguous: bool = False


def _expand(target: PolySymbol, basis: list[PolySymbol]):
    """Least-squares ``target ~ sum_c x_c basis_c`` over polynomial coefficients."""
    monos = sorted(set(target.terms).union(*(b.terms for b in basis)))
    if not monos:
        return np.zeros(len(basis)), 0.0, False
    row = {m: i for i, m in enumerate(monos)}
    M = np.zeros((len(monos), len(basis)))
    for c, b in enumerate(basis):
        for m, v in b.terms.items():
            M[row[m], c] = v
    rhs = np.zeros(len(monos))
    for m, v in target.terms.items():
        rhs[row[m]] = v
    x, *_ = np.linalg.lstsq(M, rhs, rcond=None)
    resid = float(np.max(np.abs(M @ x - rhs)))
    ambiguous = np.linalg.matrix_rank(M) < len(basis)
    return x, resid, ambiguous


def classify_constraints(cs: ConstraintSet, h: PolySymbol | None = None, tol: float = 1e-10) -> ClassificationReport:
    """Test closure of the constraint algebra with constant coefficients."""
    K = cs.K
    struct = np.zeros((K, K, K))
    hcoef = np.zeros((K, K)) if h is not None else None
    ok = [True] * K
    residuals: dict = {}
    offending = []
    ambiguous = False
    for a, b in itertools.product(range(K), repeat=2):
        br = poisson_bracket(cs.constraints[a], cs.constraints[b])
        x, r, amb = _expand(br, cs.constraints)
        residuals[("phi", a, b)] = r
        ambiguous |= amb and not br.is_zero()
        if r <= tol:
            struct[a, b] = x
        else:
            ok[a] = ok[b] = False
            offending.append(((a, b), br))
    if h is not None:
        for a in range(K):
            br = poisson_bracket(cs.constraints[a], h)
            x, r, amb = _expand(br, cs.constraints)
            residuals[("h", a)] = r
            ambiguous |= amb and not br.is_zero()
            if r <= tol:
                hcoef[a] = x
            else:
                ok[a] = False
                offending.append(((a, "h"), br))
    if all(ok):
        status = "FIRST_CLASS"
    elif not any(ok):
        status = "SECOND_CLASS"
    else:
        status = "MIXED"
    return ClassificationReport(status, struct, hcoef, ok, residuals, offending, ambiguous)


# ---------------------------------------------------------------------------
# flows


class _VectorField:
    """Hamiltonian vector field of ``h + lambda^a phi_a`` with one monomial evaluation per call."""

    def __init__(self, h: PolySymbol | None, phis: Sequence[PolySymbol], dof: int):
        self.dof = dof
        symbols = ([h] if h is not None else []) + list(phis)
        self.has_h = h is not None
        grads = [[s.diff(v) for v in range(2 * dof)] for s in symbols]
        monos = sorted(set().union(*(g.terms for row in grads for g in row))) or [(0,) * (2 * dof)]
        col = {m: i for i, m in enumerate(monos)}
        self.expo = np.array(monos)
        self.C = np.zeros((len(symbols), 2 * dof, len(monos)))
        for s, row in enumerate(grads):
            for v, g in enumerate(row):
                for m, c in g.terms.items():
                    self.C[s, v, col[m]] = c

    def __call__(self, x: np.ndarray, lam: np.ndarray) -> np.ndarray:
        m = np.prod(x[None, :] ** self.expo, axis=-1)
        weights = np.concatenate([[1.0], lam]) if self.has_h else np.asarray(lam, float)
        grad = np.tensordot(weights, self.C, axes=1) @ m
        n = self.dof
        # qdot = dH/dp, pdot = -dH/dq
        return np.concatenate([-grad[n:], grad[:n]])


def _multiplier_fn(lam, K: int) -> Callable[[float], np.ndarray]:
    if lam is None:
        return lambda t: np.zeros(K)
    if callable(lam):
        return lambda t: np.atleast_1d(np.asarray(lam(t), dtype=float))
    fns = list(lam)
    if len(fns) != K:
        raise ValueError(f"need {K} multiplier functions, got {len(fns)}")
    return lambda t: np.array([float(f(t)) for f in fns])


@dataclass
class Trajectory:
    t: np.ndarray
    x: np.ndarray  # (steps+1, 2N): p then q
    lam: np.ndarray  # (steps+1, K)
    phi: np.ndarray  # (steps+1, K)

    @property
    def dof(self) -> int:
        return self.x.shape[1] // 2

    @property
    def p(self) -> np.ndarray:
        return self.x[:, : self.dof]

    @property
    def q(self) -> np.ndarray:
        return self.x[:, self.dof :]

    def point(self, i: int = -1) -> PhasePoint:
        return PhasePoint.from_vector(self.x[i])

    def to_csv(self, path, extra_columns: Mapping[str, object] | None = None) -> None:
        n, K = self.dof, self.lam.shape[1]
        header = ["t"] + [f"p{j + 1}" for j in range(n)] + [f"q{j + 1}" for j in range(n)]
        header += [f"phi{a + 1}" for a in range(K)] + [f"lambda{a + 1}" for a in range(K)]
        extra = dict(extra_columns or {})
        header += list(extra)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(self.t.size):
                row = [self.t[i], *self.x[i], *self.phi[i], *self.lam[i]]
                w.writerow([repr(float(v)) for v in row] + [str(v) for v in extra.values()])


def _rk4(field: _VectorField, lam_fn, x0: np.ndarray, t0: float, dt: float, steps: int, blowup: float = 1e6):
    xs = np.empty((steps + 1, x0.size))
    xs[0] = x0
    x = x0.copy()
    for i in range(steps):
        t = t0 + i * dt
        l0, lh, l1 = lam_fn(t), lam_fn(t + 0.5 * dt), lam_fn(t + dt)
        k1 = field(x, l0)
        k2 = field(x + 0.5 * dt * k1, lh)
        k3 = field(x + 0.5 * dt * k2, lh)
        k4 = field(x + dt * k3, l1)
        x = x + (dt / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        nrm = np.linalg.norm(x)
        if not np.isfinite(nrm) or nrm > blowup:
            raise FlowBlowUp(f"|x| = {nrm:.3e} exceeded {blowup:g} at t = {t + dt:.6g} (step {i + 1})")
        xs[i + 1] = x
    return xs


def constrained_flow(
    h: PolySymbol,
    cs: ConstraintSet,
    multipliers,
    x0: PhasePoint,
    T: float,
    dt: float,
) -> Trajectory:
    """Integrate the total Hamiltonian ``h + lambda^a(t) phi_a`` with classic RK4.

    ``multipliers`` is ``None`` (all zero), a callable ``t -> array(K)``, or a
    sequence of ``K`` scalar callables.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    steps = int(round(T / dt))
    if steps < 1 or abs(steps * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T = {T} is not an integer multiple of dt = {dt}")
    lam_fn = _multiplier_fn(multipliers, cs.K)
    field = _VectorField(h, cs.constraints, cs.dof)
    xs = _rk4(field, lam_fn, x0.as_vector(), 0.0, dt, steps)
    t = np.arange(steps + 1) * dt
    lam = np.array([lam_fn(ti) for ti in t]).reshape(steps + 1, cs.K)
    return Trajectory(t, xs, lam, cs.values(xs))


def gauge_generator(cs: ConstraintSet, omega) -> np.ndarray:
    """Augmented ``(2N+1)``-square matrix of the affine field ``x -> Omega^a {phi_a, x}``."""
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    if omega.shape != (cs.K,) or not np.all(np.isfinite(omega)):
        raise ValueError(f"Omega must be {cs.K} finite numbers")
    n = 2 * cs.dof
    field = _VectorField(None, cs.constraints, cs.dof)
    lam = -omega  # Hamiltonian flow of -Omega.phi
    b = field(np.zeros(n), lam)
    M = np.zeros((n + 1, n + 1))
    for k in range(n):
        e = np.zeros(n)
        e[k] = 1.0
        M[:n, k] = field(e, lam) - b
    M[:n, n] = b
    return M


def gauge_flow(cs: ConstraintSet, omega, x: PhasePoint) -> PhasePoint:
    """Finite gauge transformation ``x -> x^Omega`` generated by Yang-Mills-type constraints.

    Solves ``dx/ds = Omega^a {phi_a, x}`` from ``s = 0`` to ``1``. The field is
    affine in ``x`` for constraints linear in the momenta, so the flow is an
    exact matrix exponential. The sign is fixed so that the quantum unitary
    ``exp(i Omega^a Phi_a)`` maps the coherent state ``|x>`` onto ``|x^Omega>``;
    for the rotation constraint ``{L, q^1} = q^2`` this turns ``(q^1, q^2)``
    toward ``(q^2, -q^1)``.
    """
    if not cs.is_yang_mills:
        raise ValueError("gauge_flow requires a Yang-Mills type (linear in p) constraint set")
    M = gauge_generator(cs, omega)
    if not np.any(M):
        return PhasePoint(x.p.copy(), x.q.copy())
    y = expm(M) @ np.append(x.as_vector(), 1.0)
    return PhasePoint.from_vector(y[:-1])


# ---------------------------------------------------------------------------
# action-angle variables of the oscillator


@dataclass(frozen=True)
class ActionAngle:
    """Maps between Cartesian ``(p, q)`` and action-angle ``(r, s)``.

    ``r = (p^2 + q^2)/2``, ``s = atan2(q, p)`` in ``(-pi, pi]``, with generators
    ``F(q, s) = -q^2 cot(s)/2`` and ``G(r, s) = r cos(s) sin(s)`` so that
    ``p dq = r ds + dG``.
    """

    @staticmethod
    def r(p, q):
        return 0.5 * (np.asarray(p, float) ** 2 + np.asarray(q, float) ** 2)

    @staticmethod
    def s(p, q):
        p, q = np.asarray(p, float), np.asarray(q, float)
        if np.any((p == 0) & (q == 0)):
            raise DomainError("angle is undefined at the origin")
        s = np.arctan2(q, p)
        return np.where(s == -np.pi, np.pi, s)[()]  # q = -0.0 would give -pi

    @staticmethod
    def p(r, s):
        return np.sqrt(2 * np.asarray(r, float)) * np.cos(s)

    @staticmethod
    def q(r, s):
        return np.sqrt(2 * np.asarray(r, float)) * np.sin(s)

    @staticmethod
    def F(q, s):
        return -0.5 * np.asarray(q, float) ** 2 / np.tan(s)

    @staticmethod
    def G(r, s):
        return np.asarray(r, float) * np.cos(s) * np.sin(s)

    def forward(self, p, q):
        return self.r(p, q), self.s(p, q)

    def inverse(self, r, s):
        return self.p(r, s), self.q(r, s)


def action_angle_maps() -> ActionAngle:
    return ActionAngle()
