"""Correlation-function estimates from chain samples, the pairing
``<<G, k>> = int G k d lambda``, Ruelle-bound checks and the
sampling-vs-operator duality experiment."""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .configurations import GridDomain, QuasiObservable
from .operators import DynamicsParams, iterate_p_hat
from .simulator import ChainParams, run_replicas


@dataclass(frozen=True)
class CorrelationEstimate:
    order: int
    bin_edges: tuple
    centers: np.ndarray
    values: np.ndarray
    standard_errors: np.ndarray
    counts: np.ndarray
    replica_count: int

    def to_text(self) -> str:
        buf = io.StringIO()
        buf.write(f"# order={self.order} replicas={self.replica_count}\n")
        buf.write("center\tvalue\tse\tcount\n")
        for c, v, s, n in zip(self.centers.reshape(len(self.values), -1), self.values,
                              self.standard_errors, self.counts):
            buf.write(",".join(repr(float(x)) for x in c) + f"\t{float(v)!r}\t{float(s)!r}\t{int(n)}\n")
        return buf.getvalue()


def _mean_se(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    mean = x.mean(axis=0)
    if n < 2:
        return mean, np.zeros_like(mean)
    return mean, x.std(axis=0, ddof=1) / math.sqrt(n)


def kg_of_sample(G: QuasiObservable, points: np.ndarray) -> float:
    """``KG(gamma)`` for a continuum sample, points read through their grid cell.

    Each key of G counts the ways of picking one point in each of its cells;
    subsets with two points in one cell have no lattice image and contribute 0.
    """
    dom = G.domain
    cells = dom.cell_of(points) if len(points) else np.array([], dtype=np.int64)
    occ = np.bincount(cells, minlength=dom.n_sites)
    return math.fsum(v * math.prod(int(occ[s]) for s in k) for k, v in G.values.items())


def empirical_pairing(G: QuasiObservable, samples: Sequence[np.ndarray]) -> tuple[float, float]:
    """Replica mean and standard error of ``KG`` over ``samples``."""
    if len(samples) == 0:
        raise ValueError("samples must be nonempty")
    vals = np.array([kg_of_sample(G, s) for s in samples])
    m, se = _mean_se(vals)
    return float(m), float(se)


def _pair_volume_1d(r1, r2, L):
    r1, r2 = np.clip(r1, 0, L), np.clip(r2, 0, L)
    return 2 * ((L * r2 - r2 ** 2 / 2) - (L * r1 - r1 ** 2 / 2))


def _pair_volume(edges: np.ndarray, L: float, d: int, periodic: bool, resolution: int = 0) -> np.ndarray:
    """Measure of ordered pairs in ``[0,L)^d`` whose separation falls in each bin."""
    if periodic:
        shell = math.pi ** (d / 2) / math.gamma(d / 2 + 1) * (edges[1:] ** d - edges[:-1] ** d)
        return L ** d * shell
    if d == 1:
        return _pair_volume_1d(edges[:-1], edges[1:], L)
    res = resolution or {2: 600, 3: 120}.get(d, 40)
    step = 2 * L / res
    axis = -L + (np.arange(res) + 0.5) * step
    grids = np.meshgrid(*([axis] * d), indexing="ij")
    weight = np.prod([L - np.abs(g) for g in grids], axis=0)
    r = np.sqrt(sum(g * g for g in grids))
    hist, _ = np.histogram(r, bins=edges, weights=weight)
    return hist * step ** d


def estimate_k(samples: Sequence[np.ndarray], order: int, bins, side_length: float,
               dimension: int = 1, periodic: bool = False) -> CorrelationEstimate:
    """Empirical correlation-function densities.

    ``order=1``: positions histogrammed over ``bins`` (edges, or edges per
    axis) divided by the bin volume. ``order=2``: ordered distinct pairs
    histogrammed by separation divided by the pair-volume element. Standard
    errors come from the spread across replicas.
    """
    if order not in (1, 2):
        raise NotImplementedError("only k^(1) and k^(2) are estimated")
    if len(samples) == 0:
        raise ValueError("samples must be nonempty")
    L, d = side_length, dimension
    if order == 1:
        edges = [np.asarray(bins, float)] * d if np.ndim(bins[0]) == 0 else [np.asarray(b, float) for b in bins]
        per = np.array([np.histogramdd(np.asarray(s).reshape(-1, d), bins=edges)[0].ravel()
                        for s in samples])
        widths = np.meshgrid(*[np.diff(e) for e in edges], indexing="ij")
        vol = np.prod(widths, axis=0).ravel()
        mids = np.meshgrid(*[(e[1:] + e[:-1]) / 2 for e in edges], indexing="ij")
        centers = np.stack([m.ravel() for m in mids], axis=-1)
        bin_edges = tuple(tuple(e) for e in edges)
    else:
        edges = np.asarray(bins, float)
        vol = _pair_volume(edges, L, d, periodic)
        rows = []
        for s in samples:
            pts = np.asarray(s).reshape(-1, d)
            if len(pts) < 2:
                rows.append(np.zeros(len(edges) - 1))
                continue
            diff = pts[:, None, :] - pts[None, :, :]
            if periodic:
                diff = diff - L * np.round(diff / L)
            r = np.sqrt(np.sum(diff * diff, axis=-1))[~np.eye(len(pts), dtype=bool)]
            rows.append(np.histogram(r, bins=edges)[0])
        per = np.array(rows, dtype=float)
        centers = ((edges[1:] + edges[:-1]) / 2).reshape(-1, 1)
        bin_edges = (tuple(edges),)
    dens = per / vol
    mean, se = _mean_se(dens)
    return CorrelationEstimate(order, bin_edges, centers, mean, se, per.sum(axis=0), len(samples))


def poisson_correlation(z0: float) -> Callable[[tuple], float]:
    """Correlation function ``eta -> z0^{|eta|}`` of the Poisson measure."""
    return lambda eta: z0 ** len(eta)


def pairing(G: QuasiObservable, k) -> float:
    """``sum_eta G(eta) k(eta) h^{d|eta|}``; ``k`` is a callable or a mapping."""
    get = k if callable(k) else (lambda eta: k.get(eta, 0.0) if isinstance(k, Mapping) else k[eta])
    w = G.domain.cell_volume
    return math.fsum(v * get(key) * w ** len(key) for key, v in G.values.items())


@dataclass(frozen=True)
class RuelleReport:
    passed: bool
    worst_margin: float
    worst_bin: int


def ruelle_check(estimate: CorrelationEstimate, C: float, const_bound: float = 1.0) -> RuelleReport:
    """Check ``k^(n) <= const * C^n + 3 SE`` in every bin."""
    margin = const_bound * C ** estimate.order + 3 * estimate.standard_errors - estimate.values
    i = int(np.argmin(margin)) if len(margin) else 0
    worst = float(margin[i]) if len(margin) else math.inf
    return RuelleReport(bool(np.all(margin >= 0)), worst, i)


def free_case_k1(k0_density: float, params, m: int, lattice: bool = False) -> float:
    """Density after ``m`` steps of the free chain started at density ``k0``.

    Continuum: ``z + (1-delta)^m (k0 - z)``. With ``lattice=True`` the
    one-site exclusion of the lattice chain is included:
    ``k_{m+1} = (1 - delta - z delta h^d) k_m + z delta``.
    """
    if not params.potential.is_zero:
        raise ValueError("free_case_k1 requires the zero potential")
    z, d = params.z, params.delta
    if not lattice:
        return z + (1 - d) ** m * (k0_density - z)
    rho = 1 - d - z * d * params.domain.cell_volume
    fixed = z * d / (1 - rho)
    return fixed + rho ** m * (k0_density - fixed)


def coarsen(G: QuasiObservable, factor: int = 2) -> QuasiObservable:
    """Re-express a cell-wise constant G on a grid ``factor`` times coarser.

    The coarse value is the average of G over the fine cells inside the
    coarse cells, so ``int G d lambda`` over distinct coarse cells is kept.
    Fine configurations with two sites in one coarse cell are dropped.
    """
    dom = G.domain
    coarse = GridDomain(dom.dimension, dom.side_length, dom.spacing * factor)
    cell = coarse.cell_of(dom.sites)
    vals: dict = {}
    for k, v in G.values.items():
        ck = tuple(sorted(int(cell[s]) for s in k))
        if len(set(ck)) != len(ck):
            continue
        vals[ck] = vals.get(ck, 0.0) + v / factor ** (dom.dimension * len(k))
    n_max = min(G.n_max, coarse.n_sites)
    return QuasiObservable(coarse, n_max, {k: v for k, v in vals.items() if len(k) <= n_max})


@dataclass
class DualityReport:
    empirical: float
    standard_error: float
    deterministic: float
    residual: float
    tolerance: float
    terms: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.residual <= self.tolerance


def deterministic_pairing(G: QuasiObservable, z0: float, m: int, params: DynamicsParams) -> tuple[float, float]:
    """``<<(P_hat_delta)^m G, z0^{|.|}>>`` and the truncation bound of the iteration.

    The bound is the C-norm of everything discarded above ``G.n_max``; it
    bounds the pairing error when ``z0 <= C`` because the symbol is a
    C-contraction.
    """
    Gm = iterate_p_hat(G, m, params)
    return pairing(Gm, poisson_correlation(z0)), Gm.truncation_error


def duality_residual(G: QuasiObservable, z0: float, m: int, params: DynamicsParams,
                     replicas: int, master_seed: int, initial: str = "poisson",
                     jobs: int = 1, h_probe: bool = True, samples=None) -> DualityReport:
    """Compare the simulator's ``E[KG(gamma_m)]`` with the operator-side pairing.

    Tolerance is ``3 SE + c_h h + eps_trunc``: sampling error, the lattice
    discretization term estimated from a grid twice as coarse, and the
    truncation bound.
    """
    if initial != "poisson":
        raise NotImplementedError("only Poisson initial laws have an exact correlation function")
    if samples is None:
        chain = ChainParams.from_dynamics(params)
        samples = run_replicas(chain, master_seed, replicas, m, z0, jobs=jobs)[m]
    emp, se = empirical_pairing(G, samples)
    det, eps = deterministic_pairing(G, z0, m, params)
    h = params.domain.spacing
    c_h = 0.0
    if h_probe and m > 0:
        Gc = coarsen(G)
        pc = DynamicsParams(params.z, params.delta, params.C, params.potential, Gc.domain)
        det_c, eps_c = deterministic_pairing(Gc, z0, m, pc)
        c_h = abs(det_c - det) / h
        eps += eps_c
    if z0 > params.C:
        eps = math.inf
    terms = {"sampling": 3 * se, "discretization": c_h * h, "truncation": eps, "c_h": c_h}
    tol = terms["sampling"] + terms["discretization"] + terms["truncation"]
    return DualityReport(emp, se, det, abs(emp - det), tol, terms)
