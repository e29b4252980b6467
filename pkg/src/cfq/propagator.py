"""Wiener-regularized phase-space path integral, evaluated two ways.

The regularized propagator is

    K = lim_{nu -> inf} 2 pi e^{nu T/2} int exp{i int [p dq - h dt]} d mu_W^nu

with the Wiener measure pinned at ``(p', q')`` at ``t = 0`` and ``(p'', q'')``
at ``t = T``. At finite ``nu`` and time step ``eps`` a path contributes

    prod_l g(x_{l+1} - x_l) exp{i [pbar_l (q_{l+1} - q_l) - h(xbar_l) eps]}

where ``g`` is the two-dimensional heat kernel of variance ``nu eps`` per
coordinate and bars denote midpoints. :func:`compose` sums over all paths on
a grid (deterministic); :func:`mc_estimate` samples bridges and averages the
phase.

Normalization. With ``h = 0`` the continuum integral is a Euclidean charge in
a unit magnetic field, whose lowest Landau level decays as ``e^{-nu t/2}``;
``e^{nu T/2}`` undoes that. One discrete step (Gaussian times midpoint
phase) has lowest-level eigenvalue ``1/(1 + nu eps/2)`` instead, so the
``"lattice"`` prefactor ``2 pi (1 + nu eps/2)^L`` is the exact discrete
counterpart. The two agree as ``eps -> 0`` at fixed ``nu``, but with
``eps = c/nu`` the continuum one leaves a bias ``exp(L (nu eps)^2/8)``.
"""

from __future__ import annotations

import csv
import json
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from .fock import FockOperator, FockSpace, PhasePoint, build_space, coherent_state, evolve, overlap
from .paths import RNG_ALGORITHM, seed_sequence, bridge_values, strat_sum, ito_sum
from .quantizer import anti_wick
from .symbols import PolySymbol

STENCIL_SIGMAS = 6.0


class GridError(ValueError):
    pass


def exact_propagator(H: FockOperator, T: float, x_final: PhasePoint, x_initial: PhasePoint) -> complex:
    """``<x''| e^{-iHT} |x'>`` from the truncated-basis oracle."""
    ket = coherent_state(H.space, x_initial)
    bra = coherent_state(H.space, x_final)
    return overlap(bra, evolve(H, T, ket))


def free_finite_nu_ratio(nu: float, T: float, x_final: PhasePoint, x_initial: PhasePoint) -> float:
    """``K_nu / K_inf`` for ``h = 0`` in continuous time.

    The regularized free integral is a Euclidean charged particle in a unit
    magnetic field; its Landau levels ``n`` are damped by ``e^{-nu T n}`` relative
    to the lowest one, and their kernels are the lowest-level kernel times
    ``L_n(|z'' - z'|^2)``. Summing the Laguerre generating function gives
    ``exp(-t s/(1-s))/(1-s)`` with ``s = e^{-nu T}`` and ``t = |z'' - z'|^2``.
    """
    s = np.exp(-nu * T)
    t = 0.5 * float(np.sum((x_final.as_vector() - x_initial.as_vector()) ** 2))
    return float(np.exp(-t * s / (1 - s)) / (1 - s))


@dataclass(frozen=True)
class Grid:
    """Uniform rectangular grid over ``(p, q)`` (one degree of freedom)."""

    p_min: float
    p_max: float
    q_min: float
    q_max: float
    n_p: int
    n_q: int

    @property
    def dp(self) -> float:
        return (self.p_max - self.p_min) / (self.n_p - 1)

    @property
    def dq(self) -> float:
        return (self.q_max - self.q_min) / (self.n_q - 1)

    @property
    def spacing(self) -> float:
        return max(self.dp, self.dq)

    @property
    def cell_area(self) -> float:
        return self.dp * self.dq

    @property
    def size(self) -> int:
        return self.n_p * self.n_q

    def axes(self):
        return np.linspace(self.p_min, self.p_max, self.n_p), np.linspace(self.q_min, self.q_max, self.n_q)

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        """Flattened ``(p, q)`` of all nodes, p-major."""
        p, q = self.axes()
        P, Q = np.meshgrid(p, q, indexing="ij")
        return P.ravel(), Q.ravel()

    def contains(self, x: PhasePoint, margin: float = 0.0) -> bool:
        p, q = float(x.p[0]), float(x.q[0])
        return (self.p_min + margin <= p <= self.p_max - margin) and (self.q_min + margin <= q <= self.q_max - margin)

    def refined(self, factor: int = 2) -> "Grid":
        return Grid(self.p_min, self.p_max, self.q_min, self.q_max, factor * (self.n_p - 1) + 1, factor * (self.n_q - 1) + 1)

    def coarsened(self, factor: int = 2) -> "Grid":
        return Grid(self.p_min, self.p_max, self.q_min, self.q_max, (self.n_p - 1) // factor + 1, (self.n_q - 1) // factor + 1)

    @classmethod
    def square(cls, half_width: float, n: int, center=(0.0, 0.0)) -> "Grid":
        cp, cq = center
        return cls(cp - half_width, cp + half_width, cq - half_width, cq + half_width, n, n)


def _step_weight(dp, dq, p_old, q_old, h: PolySymbol | None, nu: float, eps: float, ito: bool):
    """One regularized step from ``(p_old, q_old)`` to ``(p_old + dp, q_old + dq)``."""
    var = nu * eps
    gauss = np.exp(-(dp**2 + dq**2) / (2 * var)) / (2 * np.pi * var)
    pbar = p_old if ito else p_old + 0.5 * dp
    phase = pbar * dq
    if h is not None and h.terms:
        xbar = np.stack([p_old + 0.5 * dp, q_old + 0.5 * dq], axis=-1)
        phase = phase - eps * h.evaluate(xbar)
    return gauss * np.exp(1j * phase)


@dataclass
class LatticeKernel:
    """One-step transfer operator on a grid, cell area folded into the entries."""

    grid: Grid
    eps: float
    nu: float
    h: PolySymbol | None
    matrix: sp.csr_matrix = field(repr=False)
    ito: bool = False

    def column(self, x: PhasePoint) -> np.ndarray:
        """Weights of one step from an arbitrary point onto every grid node."""
        P, Q = self.grid.points()
        x0p, x0q = float(x.p[0]), float(x.q[0])
        return _step_weight(P - x0p, Q - x0q, x0p, x0q, self.h, self.nu, self.eps, self.ito)

    def row(self, x: PhasePoint) -> np.ndarray:
        """Weights of one step from every grid node onto an arbitrary point."""
        P, Q = self.grid.points()
        return _step_weight(float(x.p[0]) - P, float(x.q[0]) - Q, P, Q, self.h, self.nu, self.eps, self.ito)

    def direct(self, x_to: PhasePoint, x_from: PhasePoint) -> complex:
        fp, fq = float(x_from.p[0]), float(x_from.q[0])
        w = _step_weight(float(x_to.p[0]) - fp, float(x_to.q[0]) - fq, fp, fq, self.h, self.nu, self.eps, self.ito)
        return complex(w)


def build_kernel(h: PolySymbol | None, nu: float, eps: float, grid: Grid, *, ito: bool = False, max_spacing_ratio: float = 1.0) -> LatticeKernel:
    """Sparse banded one-step kernel; entries are ``g * phase * cell_area``.

    The stencil is cut at ``6 sqrt(nu eps)``. The grid must resolve the step:
    ``spacing <= max_spacing_ratio * sqrt(nu eps)``.
    """
    if h is not None and h.dof != 1:
        raise ValueError("lattice composition supports one degree of freedom")
    if nu <= 0 or eps <= 0:
        raise ValueError("nu and eps must be positive")
    sigma = np.sqrt(nu * eps)
    if grid.spacing > max_spacing_ratio * sigma:
        raise GridError(f"grid spacing {grid.spacing:.4g} exceeds {max_spacing_ratio:g} * sqrt(nu eps) = {max_spacing_ratio * sigma:.4g}")
    rp = int(np.ceil(STENCIL_SIGMAS * sigma / grid.dp))
    rq = int(np.ceil(STENCIL_SIGMAS * sigma / grid.dq))
    p_ax, q_ax = grid.axes()
    n_p, n_q = grid.n_p, grid.n_q
    rows, cols, vals = [], [], []
    for da in range(-rp, rp + 1):
        for db in range(-rq, rq + 1):
            dp, dq = da * grid.dp, db * grid.dq
            if dp * dp + dq * dq > (STENCIL_SIGMAS * sigma) ** 2:
                continue
            a0 = np.arange(max(0, -da), min(n_p, n_p - da))
            b0 = np.arange(max(0, -db), min(n_q, n_q - db))
            if a0.size == 0 or b0.size == 0:
                continue
            A, B = np.meshgrid(a0, b0, indexing="ij")
            w = _step_weight(dp, dq, p_ax[A], q_ax[B], h, nu, eps, ito)
            cols.append((A * n_q + B).ravel().astype(np.int32))
            rows.append(((A + da) * n_q + (B + db)).ravel().astype(np.int32))
            vals.append((w * grid.cell_area).ravel())
    mat = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.size, grid.size),
    )
    return LatticeKernel(grid, eps, nu, h, mat, ito)


PREFACTORS = ("lattice", "continuum", "none")


def prefactor_value(kind: str, nu: float, eps: float, L: int, dof: int = 1) -> float:
    """``(2 pi)^N`` times the per-step lowest-level compensation, raised to ``N``."""
    if kind == "lattice":
        return ((2 * np.pi) * (1 + 0.5 * nu * eps) ** L) ** dof
    if kind == "continuum":
        return ((2 * np.pi) * np.exp(0.5 * nu * eps * L)) ** dof
    if kind == "none":
        return 1.0
    raise ValueError(f"unknown prefactor {kind!r}; expected one of {PREFACTORS}")


def compose(kernel: LatticeKernel, L: int, x_final: PhasePoint, x_initial: PhasePoint, *, prefactor: str = "lattice") -> complex:
    """Sum over all ``L``-step lattice paths pinned at both ends.

    The endpoints are used exactly (off-grid): the first step is evaluated
    from ``x'`` to every node, the last from every node to ``x''``.
    ``prefactor`` selects ``2 pi (1 + nu eps/2)^L`` (``"lattice"``),
    ``2 pi e^{nu T/2}`` (``"continuum"``) or nothing (``"none"``).
    """
    if L < 1:
        raise ValueError("need at least one step")
    g = kernel.grid
    margin = min(STENCIL_SIGMAS, 5.0) * np.sqrt(kernel.nu * kernel.eps)
    for x in (x_initial, x_final):
        if not g.contains(x, margin):
            raise GridError(f"endpoint ({x.p[0]:g}, {x.q[0]:g}) lies within {margin:.3g} of the grid boundary or outside it")
    if L == 1:
        amp = kernel.direct(x_final, x_initial)
    else:
        v = kernel.column(x_initial)
        for _ in range(L - 2):
            v = kernel.matrix @ v
        amp = complex(np.dot(kernel.row(x_final), v) * g.cell_area)
    return amp * prefactor_value(prefactor, kernel.nu, kernel.eps, L)


def compose_with_error(h, nu: float, eps: float, grid: Grid, L: int, x_final: PhasePoint, x_initial: PhasePoint, **kw):
    """``(amplitude, estimate)`` where the estimate is the change against a grid of twice the spacing."""
    fine = compose(build_kernel(h, nu, eps, grid), L, x_final, x_initial, **kw)
    coarse = compose(build_kernel(h, nu, eps, grid.coarsened(2), max_spacing_ratio=np.inf), L, x_final, x_initial, **kw)
    return fine, abs(fine - coarse)


# ---------------------------------------------------------------------------
# Monte Carlo


@dataclass
class MCResult:
    mean: complex
    stderr: float
    n_paths: int
    reliable: bool
    rng: str = RNG_ALGORITHM

    def __iter__(self):
        yield self.mean
        yield self.stderr


def _bridge_density(nu: float, T: float, x_final: np.ndarray, x_initial: np.ndarray) -> float:
    d = x_final - x_initial
    n = d.size // 2
    return float(np.exp(-np.sum(d**2) / (2 * nu * T)) / (2 * np.pi * nu * T) ** n)


def mc_estimate(
    h: PolySymbol | None,
    nu: float,
    T: float,
    L: int,
    x_final: PhasePoint,
    x_initial: PhasePoint,
    n_paths: int,
    seed,
    *,
    chunk: int = 20000,
    ito: bool = False,
    workers: int = 1,
    prefactor: str = "lattice",
) -> MCResult:
    """Bridge-sampled estimate of the regularized propagator.

    Bridges carry the Gaussian weight, so only the phase is averaged; the
    mean is scaled by the pinned-measure mass ``g_T(x'' - x')`` and by the
    same prefactor as :func:`compose`.
    """
    if not 1 <= x_initial.dof <= 2:
        raise ValueError("mc_estimate supports one or two degrees of freedom")
    a, b = x_initial.as_vector(), x_final.as_vector()
    n = x_initial.dof
    eps = T / L
    chunks = [min(chunk, n_paths - s) for s in range(0, n_paths, chunk)]
    seeds = seed_sequence(seed).spawn(len(chunks))

    def run(i):
        vals = bridge_values(nu, T, L, a, b, np.random.Generator(np.random.PCG64(seeds[i])), chunks[i])
        action = ito_sum(vals) if ito else strat_sum(vals)
        if h is not None and h.terms:
            mid = 0.5 * (vals[:, 1:] + vals[:, :-1])
            action = action - eps * h.evaluate(mid).sum(axis=1)
        ph = np.exp(1j * action)
        return ph

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(run, range(len(chunks))))
    else:
        parts = [run(i) for i in range(len(chunks))]
    ph = np.concatenate(parts)
    scale = prefactor_value(prefactor, nu, eps, L, n) * _bridge_density(nu, T, b, a)
    mean = complex(ph.mean() * scale)
    stderr = float(np.sqrt((np.var(ph.real) + np.var(ph.imag)) / ph.size) * scale)
    reliable = stderr <= 0.5 * abs(mean)
    if not reliable:
        warnings.warn(f"Monte Carlo estimate UNRELIABLE: stderr {stderr:.3g} vs |mean| {abs(mean):.3g}", RuntimeWarning, stacklevel=2)
    return MCResult(mean, stderr, ph.size, reliable)


# ---------------------------------------------------------------------------
# nu sweeps


@dataclass(frozen=True)
class GridPolicy:
    """How ``eps`` and the grid follow ``nu``: ``eps = c/nu``, spacing ``= ratio * sqrt(nu eps)``."""

    c: float = 0.05
    spacing_ratio: float = 0.5
    margin: float = 6.0  # grid extends this far beyond the endpoints' bounding box

    def steps(self, nu: float, T: float) -> int:
        return max(1, int(np.ceil(T * nu / self.c)))

    def grid(self, nu: float, eps: float, x_final: PhasePoint, x_initial: PhasePoint) -> Grid:
        h = self.spacing_ratio * np.sqrt(nu * eps)
        ps = [float(x_final.p[0]), float(x_initial.p[0])]
        qs = [float(x_final.q[0]), float(x_initial.q[0])]
        pad = self.margin + 5 * np.sqrt(nu * eps)
        lo_p, hi_p = min(ps) - pad, max(ps) + pad
        lo_q, hi_q = min(qs) - pad, max(qs) + pad
        n_p = int(np.ceil((hi_p - lo_p) / h)) + 1
        n_q = int(np.ceil((hi_q - lo_q) / h)) + 1
        return Grid(lo_p, lo_p + (n_p - 1) * h, lo_q, lo_q + (n_q - 1) * h, n_p, n_q)


@dataclass
class ConvergenceRow:
    nu: float
    eps: float
    steps: int
    grid: str
    amplitude: complex
    oracle: complex
    rel_error: float

    def flat(self) -> dict:
        return {
            "nu": self.nu,
            "eps": self.eps,
            "steps": self.steps,
            "grid": self.grid,
            "amp_re": self.amplitude.real,
            "amp_im": self.amplitude.imag,
            "oracle_re": self.oracle.real,
            "oracle_im": self.oracle.imag,
            "rel_error": self.rel_error,
        }


@dataclass
class ConvergenceTable:
    rows: list[ConvergenceRow]
    T: float
    x_final: tuple
    x_initial: tuple

    @property
    def errors(self) -> np.ndarray:
        return np.array([r.rel_error for r in self.rows])

    @property
    def oracle(self) -> complex:
        return self.rows[0].oracle

    def extrapolated(self) -> complex:
        """Richardson estimate of the ``nu -> inf`` limit from the last two rows, assuming ``O(1/nu)``."""
        if len(self.rows) < 2:
            return self.rows[-1].amplitude
        r1, r2 = self.rows[-2], self.rows[-1]
        return (r2.nu * r2.amplitude - r1.nu * r1.amplitude) / (r2.nu - r1.nu)

    def strictly_decreasing(self) -> bool:
        e = self.errors
        return bool(np.all(np.diff(e) < 0))

    def to_csv(self, path, extra_columns: dict | None = None) -> None:
        extra = dict(extra_columns or {})
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(self.rows[0].flat()) + list(extra))
            w.writeheader()
            for r in self.rows:
                w.writerow({**{k: (repr(v) if isinstance(v, float) else v) for k, v in r.flat().items()}, **extra})

    def to_json(self, path, **extra) -> None:
        payload = {"T": self.T, "x_final": self.x_final, "x_initial": self.x_initial, "rows": [r.flat() for r in self.rows], **extra}
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)


def oracle_value(h: PolySymbol, T: float, x_final: PhasePoint, x_initial: PhasePoint, cutoff: int = 64) -> complex:
    H = anti_wick(build_space(cutoff, 1), h)
    return exact_propagator(H, T, x_final, x_initial)


def nu_sweep(
    h: PolySymbol,
    T: float,
    x_final: PhasePoint,
    x_initial: PhasePoint,
    nu_list,
    policy: GridPolicy | None = None,
    *,
    cutoff: int = 64,
    oracle: complex | None = None,
    prefactor: str = "lattice",
) -> ConvergenceTable:
    """Compose the lattice integral for each ``nu`` and compare with the anti-Wick oracle."""
    nus = [float(v) for v in nu_list]
    if any(b <= a for a, b in zip(nus, nus[1:])):
        raise ValueError("nu_list must be increasing")
    policy = policy or GridPolicy()
    if oracle is None:
        oracle = oracle_value(h, T, x_final, x_initial, cutoff)
    rows = []
    for nu in nus:
        L = policy.steps(nu, T)
        eps = T / L
        grid = policy.grid(nu, eps, x_final, x_initial)
        kern = build_kernel(h, nu, eps, grid)
        amp = compose(kern, L, x_final, x_initial, prefactor=prefactor)
        del kern
        err = abs(amp - oracle) / abs(oracle)
        rows.append(ConvergenceRow(nu, eps, L, f"{grid.n_p}x{grid.n_q}@{grid.spacing:.4g}", amp, oracle, err))
    return ConvergenceTable(rows, T, tuple(x_final.as_vector()), tuple(x_initial.as_vector()))
