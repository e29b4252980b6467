"""Truncated oscillator Hilbert space.

Basis states are tensor products of single-mode number states
``|n_1, ..., n_N>`` with ``0 <= n_j < cutoff``, ordered row-major (the first
degree of freedom is the most significant index, matching ``np.kron``).
Units are hbar = 1 and ``Q = (a + a^dag)/sqrt(2)``, ``P = (a - a^dag)/(i sqrt(2))``.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import expm_multiply

__all__ = [
    "MAX_DIMENSION",
    "CapacityError",
    "TruncationWarning",
    "FockSpace",
    "FockOperator",
    "StateVector",
    "PhasePoint",
    "build_space",
    "ladder",
    "canonical_ops",
    "vacuum",
    "coherent_state",
    "coherent_amplitudes",
    "coherent_closed_form",
    "overlap",
    "evolve",
    "expm_hermitian",
]

MAX_DIMENSION = 16384
HERMITIAN_TOL = 1e-12


class CapacityError(ValueError):
    """Requested space exceeds the configured dimension ceiling."""


class TruncationWarning(UserWarning):
    """A coherent label is too large for the cutoff to represent faithfully."""


@dataclass(frozen=True)
class FockSpace:
    cutoff: int
    dof: int = 1
    label_max: float = 6.0
    truncation_tol: float = 1e-8

    def __post_init__(self):
        if self.cutoff < 2 or self.dof < 1:
            raise ValueError(f"need cutoff >= 2 and dof >= 1, got ({self.cutoff}, {self.dof})")

    @property
    def dim(self) -> int:
        return self.cutoff**self.dof

    @cached_property
    def occupations(self) -> np.ndarray:
        """(dim, dof) integer array of per-mode occupation numbers."""
        grids = np.indices((self.cutoff,) * self.dof).reshape(self.dof, -1)
        return grids.T.copy()

    @cached_property
    def low_block(self) -> np.ndarray:
        """Indices of basis states whose total occupation is at most cutoff // 2.

        Truncation only corrupts matrix elements that touch the top of each
        mode; comparisons are made on this block.
        """
        return np.flatnonzero(self.occupations.sum(axis=1) <= self.cutoff // 2)

    def index(self, occupation: Sequence[int]) -> int:
        return int(np.ravel_multi_index(tuple(occupation), (self.cutoff,) * self.dof))


def build_space(cutoff: int, dof: int = 1, *, max_dimension: int = MAX_DIMENSION, **kwargs) -> FockSpace:
    if cutoff < 2 or dof < 1:
        raise ValueError(f"need cutoff >= 2 and dof >= 1, got ({cutoff}, {dof})")
    if cutoff**dof > max_dimension:
        raise CapacityError(
            f"dimension {cutoff}**{dof} = {cutoff**dof} exceeds ceiling {max_dimension}"
        )
    return FockSpace(cutoff, dof, **kwargs)


@dataclass(frozen=True)
class PhasePoint:
    """Coherent-state label ``(p, q)`` with one entry per degree of freedom."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        p = np.atleast_1d(np.asarray(self.p, dtype=float))
        q = np.atleast_1d(np.asarray(self.q, dtype=float))
        if p.shape != q.shape or p.ndim != 1:
            raise ValueError(f"p and q must be 1-d of equal length, got {p.shape} and {q.shape}")
        if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
            raise ValueError("phase point entries must be finite")
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "q", q)

    @property
    def dof(self) -> int:
        return self.p.size

    @property
    def z2(self) -> np.ndarray:
        """Per-mode ``|z|^2 = (p^2 + q^2)/2``."""
        return 0.5 * (self.p**2 + self.q**2)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.p, self.q])

    @classmethod
    def from_vector(cls, x) -> "PhasePoint":
        x = np.asarray(x, dtype=float)
        n = x.size // 2
        return cls(x[:n], x[n:])

    def __iter__(self):
        yield self.p
        yield self.q


@dataclass(frozen=True, eq=False)
class StateVector:
    space: FockSpace
    amplitudes: np.ndarray

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex)
        if amps.shape != (self.space.dim,):
            raise ValueError(f"expected {self.space.dim} amplitudes, got shape {amps.shape}")
        object.__setattr__(self, "amplitudes", amps)

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def __mul__(self, c) -> "StateVector":
        return StateVector(self.space, c * self.amplitudes)

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class FockOperator:
    """A matrix on a :class:`FockSpace`, dense or scipy-sparse.

    ``hermitian=True`` asserts (and verifies) ``max|A - A^dag| <= 1e-12``.
    """

    space: FockSpace
    matrix: np.ndarray | sp.spmatrix
    hermitian: bool = False
    _eig: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        m = self.matrix
        if sp.issparse(m):
            m = sp.csr_matrix(m, dtype=complex)
        else:
            m = np.asarray(m, dtype=complex)
        if m.shape != (self.space.dim, self.space.dim):
            raise ValueError(f"matrix shape {m.shape} does not match space dimension {self.space.dim}")
        object.__setattr__(self, "matrix", m)
        if self.hermitian:
            dev = self.hermiticity_error()
            if dev > HERMITIAN_TOL:
                raise ValueError(f"operator flagged Hermitian but max|A - A^dag| = {dev:.3e}")

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.matrix)

    def dense(self) -> np.ndarray:
        return self.matrix.toarray() if self.is_sparse else self.matrix

    def hermiticity_error(self) -> float:
        diff = self.matrix - self.matrix.conj().T
        if sp.issparse(diff):
            return float(abs(diff).max()) if diff.nnz else 0.0
        return float(np.max(np.abs(diff))) if diff.size else 0.0

    @property
    def dagger(self) -> "FockOperator":
        return FockOperator(self.space, self.matrix.conj().T, self.hermitian)

    def low(self) -> np.ndarray:
        """Dense low-block submatrix."""
        idx = self.space.low_block
        m = self.matrix[idx][:, idx]
        return m.toarray() if sp.issparse(m) else m

    def eigh(self):
        """Cached ``(eigenvalues, eigenvectors)`` of a Hermitian operator."""
        if "eigh" not in self._eig:
            if not self.hermitian:
                raise ValueError("eigendecomposition requested for an operator not flagged Hermitian")
            self._eig["eigh"] = np.linalg.eigh(self.dense())
        return self._eig["eigh"]

    def apply(self, state: StateVector) -> StateVector:
        _same_space(self.space, state.space)
        return StateVector(self.space, self.matrix @ state.amplitudes)

    def _combine(self, other, op):
        if isinstance(other, FockOperator):
            _same_space(self.space, other.space)
            return op(self.matrix, other.matrix)
        return op(self.matrix, other)

    def __matmul__(self, other):
        if isinstance(other, StateVector):
            return self.apply(other)
        return FockOperator(self.space, self._combine(other, lambda a, b: a @ b))

    def __add__(self, other):
        herm = self.hermitian and isinstance(other, FockOperator) and other.hermitian
        return FockOperator(self.space, self._combine(other, lambda a, b: a + b), herm)

    def __sub__(self, other):
        herm = self.hermitian and isinstance(other, FockOperator) and other.hermitian
        return FockOperator(self.space, self._combine(other, lambda a, b: a - b), herm)

    def __mul__(self, c):
        herm = self.hermitian and np.isreal(c)
        return FockOperator(self.space, self.matrix * c, bool(herm))

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def commutator(self, other: "FockOperator") -> "FockOperator":
        return self @ other - other @ self

    # -- serialization -------------------------------------------------
    def to_dict(self) -> dict:
        m = self.dense()
        return {
            "cutoff": self.space.cutoff,
            "dof": self.space.dof,
            "rows": int(m.shape[0]),
            "cols": int(m.shape[1]),
            "hermitian": bool(self.hermitian),
            "layout": "row-major, interleaved re/im float64",
            "data": np.column_stack([m.real.ravel(), m.imag.ravel()]).ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FockOperator":
        space = FockSpace(int(d["cutoff"]), int(d["dof"]))
        data = np.asarray(d["data"], dtype=float).reshape(-1, 2)
        m = (data[:, 0] + 1j * data[:, 1]).reshape(int(d["rows"]), int(d["cols"]))
        return cls(space, m, bool(d.get("hermitian", False)))

    def dump(self, path, **extra) -> None:
        payload = self.to_dict()
        payload.update(extra)
        with open(path, "w") as fh:
            json.dump(payload, fh)

    @classmethod
    def load(cls, path) -> "FockOperator":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _same_space(a: FockSpace, b: FockSpace) -> None:
    if (a.cutoff, a.dof) != (b.cutoff, b.dof):
        raise ValueError(f"space mismatch: (D={a.cutoff}, N={a.dof}) vs (D={b.cutoff}, N={b.dof})")


# ---------------------------------------------------------------------------
# single-mode building blocks


@lru_cache(maxsize=64)
def ladder(cutoff: int) -> np.ndarray:
    """Truncated annihilation operator, ``a[n-1, n] = sqrt(n)``."""
    a = np.zeros((cutoff, cutoff))
    n = np.arange(1, cutoff)
    a[n - 1, n] = np.sqrt(n)
    a.setflags(write=False)
    return a


@lru_cache(maxsize=64)
def _mode_qp(cutoff: int) -> tuple[np.ndarray, np.ndarray]:
    a = ladder(cutoff)
    q = (a + a.T) / np.sqrt(2.0)
    p = (a - a.T) / (1j * np.sqrt(2.0))
    return q.astype(complex), p


@lru_cache(maxsize=64)
def _mode_eig(cutoff: int):
    """Eigendecompositions of the truncated single-mode Q and P."""
    q, p = _mode_qp(cutoff)
    return np.linalg.eigh(q), np.linalg.eigh(p)


def _embed(space: FockSpace, mode_op: np.ndarray, j: int, sparse: bool):
    factors = [mode_op if k == j else np.eye(space.cutoff) for k in range(space.dof)]
    if not sparse:
        return _kron_rows(factors)
    out = sp.csr_matrix(factors[0])
    for f in factors[1:]:
        out = sp.kron(out, sp.csr_matrix(f), format="csr")
    return out


def canonical_ops(space: FockSpace, *, sparse: bool = False) -> list[tuple[FockOperator, FockOperator]]:
    """Pairs ``(Q^j, P_j)`` for every degree of freedom."""
    q, p = _mode_qp(space.cutoff)
    return [
        (
            FockOperator(space, _embed(space, q, j, sparse), hermitian=True),
            FockOperator(space, _embed(space, p, j, sparse), hermitian=True),
        )
        for j in range(space.dof)
    ]


def number_op(space: FockSpace, j: int, *, sparse: bool = False) -> FockOperator:
    n = np.diag(np.arange(space.cutoff, dtype=float))
    return FockOperator(space, _embed(space, n, j, sparse), hermitian=True)


def vacuum(space: FockSpace) -> StateVector:
    amps = np.zeros(space.dim, dtype=complex)
    amps[0] = 1.0
    return StateVector(space, amps)


def coherent_amplitudes(cutoff: int, p, q) -> np.ndarray:
    """Single-mode ``e^{-iqP} e^{ipQ}|0>`` for arrays of labels.

    Returns an array of shape ``(len(p), cutoff)``. The exponentials are taken
    of the truncated generators through their eigendecompositions, so the
    result is exactly unit-norm; truncation shows up as an error in the
    amplitudes, not in the norm.
    """
    p = np.atleast_1d(np.asarray(p, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    (lq, vq), (lp, vp) = _mode_eig(cutoff)
    # e^{ipQ}|0>: |0> has components conj(vq[0, k]) in the Q eigenbasis
    c0 = vq[0].conj()
    psi = vq @ (np.exp(1j * np.outer(lq, p)) * c0[:, None])
    psi = vp @ (np.exp(-1j * np.outer(lp, q)) * (vp.conj().T @ psi))
    return psi.T


def coherent_closed_form(cutoff: int, p, q) -> np.ndarray:
    """Closed-form amplitudes ``e^{-ipq/2} e^{-|z|^2/2} z^n / sqrt(n!)``, ``z = (q + ip)/sqrt 2``.

    Independent of :func:`coherent_amplitudes`; used as a cross-check.
    """
    p = np.atleast_1d(np.asarray(p, dtype=float))
    q = np.atleast_1d(np.asarray(q, dtype=float))
    z = (q + 1j * p) / np.sqrt(2.0)
    # z^n / sqrt(n!) through a running product, stable for moderate n
    out = np.empty((p.size, cutoff), dtype=complex)
    out[:, 0] = 1.0
    for k in range(1, cutoff):
        out[:, k] = out[:, k - 1] * z / np.sqrt(k)
    pref = np.exp(-0.5 * np.abs(z) ** 2 - 0.5j * p * q)
    return out * pref[:, None]


def _kron_rows(factors: list[np.ndarray]) -> np.ndarray:
    out = factors[0]
    for f in factors[1:]:
        out = np.kron(out, f)
    return out


def coherent_state(space: FockSpace, x: PhasePoint) -> StateVector:
    """``|p,q> = e^{-i q^j P_j} e^{i p_j Q^j} |0>``."""
    if x.dof != space.dof:
        raise ValueError(f"label has {x.dof} degrees of freedom, space has {space.dof}")
    if np.max(np.abs(x.as_vector())) > space.label_max:
        raise ValueError(f"label {x.as_vector()} exceeds label_max = {space.label_max}")
    z2max = float(np.max(x.z2))
    if space.cutoff < 4 * z2max:
        warnings.warn(
            f"cutoff {space.cutoff} < 4|z|^2 = {4 * z2max:.2f}; coherent state is truncated",
            TruncationWarning,
            stacklevel=2,
        )
    modes = [coherent_amplitudes(space.cutoff, x.p[j], x.q[j])[0] for j in range(space.dof)]
    state = StateVector(space, _kron_rows(modes))
    if 1.0 - state.norm > space.truncation_tol:
        warnings.warn(f"coherent state norm deficit {1 - state.norm:.2e}", TruncationWarning, stacklevel=2)
    return state


def overlap(a: StateVector, b: StateVector) -> complex:
    """``<a|b>``, conjugate-linear in ``a``."""
    _same_space(a.space, b.space)
    return complex(np.vdot(a.amplitudes, b.amplitudes))


def expm_hermitian(H: FockOperator, t: complex) -> np.ndarray:
    """Dense ``exp(t H)`` for Hermitian ``H`` via its eigendecomposition."""
    w, v = H.eigh()
    return (v * np.exp(t * w)) @ v.conj().T


def evolve(H: FockOperator, T: float, s: StateVector) -> StateVector:
    """``e^{-iHT} s``.

    Dense operators go through the eigendecomposition; sparse ones through
    ``expm_multiply`` (truncated Taylor with scaling).
    """
    _same_space(H.space, s.space)
    if not np.isfinite(T):
        raise ValueError("evolution time must be finite")
    if not H.hermitian:
        raise ValueError("evolve requires a Hermitian generator")
    if T == 0:
        return StateVector(s.space, s.amplitudes.copy())
    if H.is_sparse:
        out = expm_multiply(-1j * T * H.matrix, s.amplitudes)
    else:
        w, v = H.eigh()
        out = v @ (np.exp(-1j * T * w) * (v.conj().T @ s.amplitudes))
    return StateVector(s.space, out)
