"""Pinned Brownian bridges in phase space and stochastic line integrals."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .fock import PhasePoint
from .symbols import ActionAngle, DomainError

RNG_ALGORITHM = "numpy.PCG64"


def make_rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def seed_sequence(seed) -> np.random.SeedSequence:
    """Fresh ``SeedSequence`` for an int or a copy of a given sequence (spawning never mutates the caller's)."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=seed.spawn_key, pool_size=seed.pool_size)
    return np.random.SeedSequence(seed)


@dataclass(frozen=True)
class BrownianPath:
    """Sampled bridge; ``values[l] = (p_1..p_N, q^1..q^N)`` at ``t = l*T/L``."""

    nu: float
    T: float
    values: np.ndarray  # (L+1, 2N), contiguous per time slice
    seed: object = None

    @property
    def steps(self) -> int:
        return self.values.shape[0] - 1

    @property
    def dof(self) -> int:
        return self.values.shape[1] // 2

    @property
    def eps(self) -> float:
        return self.T / self.steps

    @property
    def t(self) -> np.ndarray:
        return np.linspace(0.0, self.T, self.steps + 1)

    @property
    def p(self) -> np.ndarray:
        return self.values[:, : self.dof]

    @property
    def q(self) -> np.ndarray:
        return self.values[:, self.dof :]

    def to_csv(self, path) -> None:
        n = self.dof
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t"] + [f"p{j + 1}" for j in range(n)] + [f"q{j + 1}" for j in range(n)])
            for ti, row in zip(self.t, self.values):
                w.writerow([repr(float(ti))] + [repr(float(v)) for v in row])


def bridge_values(nu: float, T: float, L: int, x_start, x_end, rng: np.random.Generator, n_paths: int = 1) -> np.ndarray:
    """Ensemble of bridges with shape ``(n_paths, L+1, 2N)``.

    Forward conditional-Gaussian construction: given ``x_l`` at ``t_l`` the
    next point has mean ``x_l + (x_end - x_l) eps/(T - t_l)`` and variance
    ``nu eps (T - t_{l+1})/(T - t_l)``. The last point is set to ``x_end``.
    """
    if nu <= 0:
        raise ValueError("diffusion constant must be positive")
    if L < 1:
        raise ValueError("need at least one step")
    a = np.asarray(x_start, dtype=float).ravel()
    b = np.asarray(x_end, dtype=float).ravel()
    if a.shape != b.shape or a.size % 2:
        raise ValueError("endpoints must be (p..., q...) vectors of equal even length")
    eps = T / L
    out = np.empty((n_paths, L + 1, a.size))
    out[:, 0] = a
    out[:, L] = b
    z = rng.standard_normal((n_paths, L - 1, a.size)) if L > 1 else None
    x = np.broadcast_to(a, (n_paths, a.size)).copy()
    for l in range(L - 1):
        remaining = (L - l) * eps
        mean = x + (b - x) * (eps / remaining)
        var = nu * eps * (remaining - eps) / remaining
        x = mean + np.sqrt(var) * z[:, l]
        out[:, l + 1] = x
    return out


def sample_bridge(nu: float, T: float, L: int, x_start: PhasePoint, x_end: PhasePoint, seed) -> BrownianPath:
    if L < 2:
        raise ValueError("a bridge needs L >= 2")
    vals = bridge_values(nu, T, L, x_start.as_vector(), x_end.as_vector(), make_rng(seed))[0]
    return BrownianPath(float(nu), float(T), vals, seed)


# ---------------------------------------------------------------------------
# discretized integrals of p dq


def _pq(values: np.ndarray):
    values = np.asarray(values, dtype=float)
    n = values.shape[-1] // 2
    return values[..., :n], values[..., n:]


def ito_sum(values: np.ndarray) -> np.ndarray:
    """``sum_l p_l (q_{l+1} - q_l)`` over time (axis -2) and DOFs."""
    p, q = _pq(values)
    return np.sum(p[..., :-1, :] * np.diff(q, axis=-2), axis=(-2, -1))


def strat_sum(values: np.ndarray) -> np.ndarray:
    """``sum_l (p_{l+1} + p_l)/2 (q_{l+1} - q_l)``."""
    p, q = _pq(values)
    return np.sum(0.5 * (p[..., 1:, :] + p[..., :-1, :]) * np.diff(q, axis=-2), axis=(-2, -1))


def ito_integral(path: BrownianPath) -> float:
    return float(ito_sum(path.values))


def strat_integral(path: BrownianPath) -> float:
    return float(strat_sum(path.values))


def leibniz_defect(values: np.ndarray) -> np.ndarray:
    """``S[p dq] + S[q dp] - (p_L q_L - p_0 q_0)``: zero for the midpoint rule, path by path."""
    p, q = _pq(values)
    swapped = np.concatenate([q, p], axis=-1)
    boundary = np.sum(p[..., -1, :] * q[..., -1, :] - p[..., 0, :] * q[..., 0, :], axis=-1)
    return strat_sum(values) + strat_sum(swapped) - boundary


def quadratic_variation(values: np.ndarray) -> np.ndarray:
    """Per-coordinate ``sum_l (x_{l+1} - x_l)^2``."""
    return np.sum(np.diff(np.asarray(values, float), axis=-2) ** 2, axis=-2)


def bridge_quadratic_variation_mean(nu: float, T: float, L: int, delta) -> np.ndarray:
    """Exact ``E sum (dx)^2`` for a bridge with net displacement ``delta`` per coordinate."""
    delta = np.asarray(delta, float)
    return nu * T * (1.0 - 1.0 / L) + delta**2 / L


# ---------------------------------------------------------------------------
# coordinate change


@dataclass(frozen=True)
class Transform:
    """A one-DOF coordinate change ``(p, q) -> (r, s)`` with ``p dq = r ds + dG``."""

    forward: object  # (p, q) -> (r, s)
    G: object  # (r, s) -> G
    periodic_s: bool = False

    @classmethod
    def identity(cls) -> "Transform":
        return cls(lambda p, q: (p, q), lambda r, s: np.zeros_like(r))

    @classmethod
    def shift(cls, c: float) -> "Transform":
        return cls(lambda p, q: (p, q + c), lambda r, s: np.zeros_like(r))

    @classmethod
    def action_angle(cls) -> "Transform":
        aa = ActionAngle()
        return cls(aa.forward, aa.G, periodic_s=True)


def chain_rule_residual(path: BrownianPath, transform: Transform | ActionAngle, min_radius: float = 1e-8) -> float:
    """``|S[p dq] - (S[r ds] + G_end - G_start)|`` for a one-DOF path."""
    if isinstance(transform, ActionAngle):
        transform = Transform.action_angle()
    if path.dof != 1:
        raise ValueError("chain-rule residual is defined for one degree of freedom")
    p, q = path.p[:, 0], path.q[:, 0]
    if transform.periodic_s and np.min(np.hypot(p, q)) < min_radius:
        raise DomainError("path passes through the angle singularity at the origin")
    r, s = transform.forward(p, q)
    r, s = np.asarray(r, float), np.asarray(s, float)
    if transform.periodic_s:
        s = np.unwrap(s)
    lhs = strat_sum(path.values)
    rhs = strat_sum(np.column_stack([r, s])) + transform.G(r[-1], s[-1]) - transform.G(r[0], s[0])
    return float(abs(lhs - rhs))


def chain_rule_residuals(values: np.ndarray, transform: Transform) -> np.ndarray:
    """Vectorized residuals for an ensemble ``(n, L+1, 2)``."""
    p, q = values[..., 0], values[..., 1]
    r, s = transform.forward(p, q)
    r, s = np.asarray(r, float), np.asarray(s, float)
    if transform.periodic_s:
        s = np.unwrap(s, axis=-1)
    rhs = strat_sum(np.stack([r, s], axis=-1)) + transform.G(r[..., -1], s[..., -1]) - transform.G(r[..., 0], s[..., 0])
    return np.abs(strat_sum(values) - rhs)
