"""Operators of the discretized Glauber dynamics on quasi-observables.

Conventions on the lattice box:

* every space integral becomes a sum over sites with weight ``h^d``;
* two points never share a site. In the symbol formulas this shows up as
  ``exp(-E(y, omega)) = 0`` whenever ``y`` is in ``omega`` (see
  :func:`glauber_kit.potential.lattice_boltzmann`);
* in one step of the observable chain every point dies with probability
  ``delta`` and every empty site ``y`` of the birth region gets a newborn
  with probability ``a_y = z delta h^d exp(-E(y, gamma))``, independently.

With these conventions ``K^{-1} P K`` equals the product-form symbol
exactly, which is what :func:`p_delta_hat` evaluates.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Iterable, Sequence

import numpy as np

from .configurations import (ConfigurationSpace, GridDomain, QuasiObservable,
                             enumerate_configurations, from_mask, norm_C, popcount,
                             submasks, to_mask)
from .k_transform import k_inverse
from .potential import PairPotential, lattice_boltzmann, lattice_c_phi

_REL_TOL = 1e-12


class ConditionViolation(ValueError):
    """The small-activity condition needed for contraction does not hold."""


class TruncationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ContractionReport:
    cond_small: bool
    cond_verysmall: bool
    margin_small: float
    margin_verysmall: float
    c_phi: float


def check_contraction_condition(z: float, C: float, phi: PairPotential, d: int = 1,
                                c_phi: float | None = None) -> ContractionReport:
    """Evaluate ``z e^{C C_phi} <= C`` and ``z <= min(C e^{-C C_phi}, 2C e^{-2C C_phi})``.

    Margins are the slack ``C - z e^{C C_phi}`` and
    ``min(...) - z``; equality counts as satisfied.
    """
    cp = phi.c_phi(d) if c_phi is None else c_phi
    lhs = z * math.exp(C * cp)
    bound = min(C * math.exp(-C * cp), 2 * C * math.exp(-2 * C * cp))
    return ContractionReport(
        cond_small=lhs <= C * (1 + _REL_TOL),
        cond_verysmall=z <= bound * (1 + _REL_TOL),
        margin_small=C - lhs,
        margin_verysmall=bound - z,
        c_phi=cp,
    )


@dataclass(frozen=True)
class DynamicsParams:
    z: float
    delta: float
    C: float
    potential: PairPotential
    domain: GridDomain
    cond_small: bool = field(init=False)
    cond_verysmall: bool = field(init=False)

    def __post_init__(self):
        if not self.z > 0:
            raise ValueError("activity z must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta out of (0,1)")
        if not self.C > 0:
            raise ValueError("C must be positive")
        if self.z * self.delta * self.domain.cell_volume >= 1:
            raise ValueError("z*delta*h^d must be below 1 for lattice birth probabilities")
        rep = check_contraction_condition(self.z, self.C, self.potential, self.domain.dimension)
        object.__setattr__(self, "cond_small", rep.cond_small)
        object.__setattr__(self, "cond_verysmall", rep.cond_verysmall)

    def with_delta(self, delta: float) -> "DynamicsParams":
        return dataclasses.replace(self, delta=delta)

    @property
    def birth_weight(self) -> float:
        """``z delta h^d``: birth probability of an unobstructed site."""
        return self.z * self.delta * self.domain.cell_volume

    @cached_property
    def boltzmann(self) -> np.ndarray:
        return lattice_boltzmann(self.potential, self.domain.sites)

    @cached_property
    def lattice_c_phi(self) -> float:
        return lattice_c_phi(self.potential, self.domain.sites, self.domain.cell_volume)

    @cached_property
    def lattice_condition(self) -> ContractionReport:
        """The small-activity check with the lattice constant in place of ``C_phi``.

        This is the version the lattice bounds actually rely on.
        """
        return check_contraction_condition(self.z, self.C, self.potential,
                                           self.domain.dimension, c_phi=self.lattice_c_phi)


def _sites_mask(domain: GridDomain, sub_domain: Iterable[int] | None) -> int:
    if sub_domain is None:
        return (1 << domain.n_sites) - 1
    mask = to_mask(sub_domain)
    if mask >> domain.n_sites:
        raise ValueError("sub_domain contains sites outside the domain")
    return mask


# ---------------------------------------------------------------- generator

def apply_L0(G: QuasiObservable) -> QuasiObservable:
    """``(L0 G)(eta) = -|eta| G(eta)``."""
    return G.map_values(lambda k, v: -len(k) * v)


def _l1_at(G: QuasiObservable, eta: tuple[int, ...], B: np.ndarray) -> float:
    eta_set = set(eta)
    terms = []
    for kappa, g in G.values.items():
        for x in kappa:
            xi = [y for y in kappa if y != x]
            if not eta_set.issuperset(xi):
                continue
            w = g
            for y in xi:
                w *= B[x, y]
            for y in eta_set.difference(xi):
                w *= B[y, x] - 1.0
            if w != 0.0:
                terms.append(w)
    return math.fsum(terms)


def apply_L1(G: QuasiObservable, params: DynamicsParams) -> QuasiObservable:
    """Birth part of the symbol.

    ``(L1 G)(eta) = z h^d sum_{xi subset eta} sum_{x not in xi}
    e^{-E(x, xi)} G(xi u x) prod_{y in eta \\ xi} (e^{-phi(x - y)} - 1)``,
    where ``x`` landing on a site of ``eta \\ xi`` contributes the factor -1.
    """
    B = params.boltzmann
    scale = params.z * params.domain.cell_volume
    values = {}
    for eta in enumerate_configurations(G.domain, G.n_max):
        v = _l1_at(G, eta, B)
        if v:
            values[eta] = scale * v
    out = QuasiObservable(G.domain, G.n_max, values, G.truncation_flag, G.truncation_error)
    lost = _discarded_norm(lambda eta: scale * _l1_at(G, eta, B), G, params.C)
    return _with_truncation(out, lost)


def apply_L_hat(G: QuasiObservable, params: DynamicsParams) -> QuasiObservable:
    return apply_L0(G) + apply_L1(G, params)


def _discarded_norm(evaluate, G: QuasiObservable, C: float) -> float:
    """C-norm of an operator output on the orders above ``G.n_max``."""
    domain = G.domain
    if G.n_max >= domain.n_sites or not G.values:
        return 0.0
    w = C * domain.cell_volume
    total = []
    all_configs = enumerate_configurations(domain, domain.n_sites)
    for eta in all_configs:
        if len(eta) <= G.n_max:
            continue
        total.append(abs(evaluate(eta)) * w ** len(eta))
    return math.fsum(total)


def _with_truncation(G: QuasiObservable, lost: float) -> QuasiObservable:
    if lost == 0.0:
        return G
    return dataclasses.replace(G, truncation_flag=True,
                               truncation_error=G.truncation_error + lost)


# ------------------------------------------------------- observable chain P

def _birth_probabilities(gamma_mask: int, params: DynamicsParams, sub_mask: int) -> dict[int, float]:
    B = params.boltzmann
    gamma = from_mask(gamma_mask)
    a = params.birth_weight
    out = {}
    for y in from_mask(sub_mask & ~gamma_mask):
        out[y] = a * float(np.prod(B[y, list(gamma)])) if gamma else a
    return out


def xi_normalization(gamma: Sequence[int], params: DynamicsParams,
                     sub_domain: Iterable[int] | None = None) -> float:
    """Normalization of the birth weights for the lattice chain.

    The lattice birth measure puts weight ``b_y = a_y / (1 - a_y)`` on each
    free site, so ``Xi = prod_y (1 + b_y) = prod_y 1 / (1 - a_y)``; it tends
    to ``exp(z delta int e^{-E})`` as ``h -> 0``.
    """
    probs = _birth_probabilities(to_mask(gamma), params, _sites_mask(params.domain, sub_domain))
    return math.exp(-math.fsum(math.log1p(-p) for p in probs.values()))


def xi_series(gamma: Sequence[int], params: DynamicsParams, order: int,
              sub_domain: Iterable[int] | None = None) -> tuple[float, float]:
    """Truncated series ``sum_{|omega| <= order} prod_{y in omega} b_y`` and a
    bound on the omitted tail, ``e^s - sum_{k <= order} s^k / k!`` with
    ``s = sum b_y``."""
    probs = _birth_probabilities(to_mask(gamma), params, _sites_mask(params.domain, sub_domain))
    b = [p / (1 - p) for p in probs.values()]
    # elementary symmetric sums e_0..e_order
    e = [1.0] + [0.0] * order
    for bi in b:
        for k in range(order, 0, -1):
            e[k] += e[k - 1] * bi
    s = math.fsum(b)
    partial = math.fsum(s ** k / math.factorial(k) for k in range(order + 1))
    return math.fsum(e), max(math.exp(s) - partial, 0.0)


def _lookup(F: QuasiObservable, mask: int, missed: list) -> float:
    key = from_mask(mask)
    if len(key) > F.n_max:
        missed.append(key)
        return 0.0
    return F[key]


def p_delta_observable(F: QuasiObservable, gamma: Sequence[int], params: DynamicsParams,
                       form: str = "direct", sub_domain: Iterable[int] | None = None) -> float:
    """One step of the observable chain, ``(P F)(gamma)``.

    ``form="direct"`` sums over deaths ``eta`` and births ``omega`` with the
    normalized birth measure. ``form="resummed"`` uses
    ``sum_{xi subset gamma} (1-delta)^{|xi|} sum_omega prod a_y (K^{-1}F)(xi u omega)``.
    """
    gamma_mask = to_mask(gamma)
    sub_mask = _sites_mask(params.domain, sub_domain)
    probs = _birth_probabilities(gamma_mask, params, sub_mask)
    free = list(probs)
    d = params.delta
    n_gamma = popcount(gamma_mask)
    missed: list = []

    omegas = [(0, 1.0)]
    for y in free:
        w = probs[y] if form == "resummed" else probs[y] / (1 - probs[y])
        omegas += [(m | (1 << y), v * w) for m, v in omegas]

    if form == "direct":
        xi_inv = math.exp(math.fsum(math.log1p(-p) for p in probs.values()))
        terms = []
        for dead in submasks(gamma_mask):
            k = popcount(dead)
            coeff = d ** k * (1 - d) ** (n_gamma - k) * xi_inv
            kept = gamma_mask & ~dead
            for m, v in omegas:
                terms.append(coeff * v * _lookup(F, kept | m, missed))
        value = math.fsum(terms)
    elif form == "resummed":
        cache: dict[int, float] = {}

        def g(mask):
            if mask not in cache:
                key = from_mask(mask)
                if len(key) > F.n_max:
                    missed.append(key)
                cache[mask] = k_inverse(F, key)
            return cache[mask]

        terms = []
        for xi in submasks(gamma_mask):
            c = (1 - d) ** popcount(xi)
            for m, v in omegas:
                terms.append(c * v * g(xi | m))
        value = math.fsum(terms)
    else:
        raise ValueError(f"unknown form {form!r}")
    if missed:
        warnings.warn(f"P_delta needed F beyond n_max={F.n_max} at {len(missed)} configurations",
                      TruncationWarning, stacklevel=2)
    return value


def p_delta_observable_all(F: QuasiObservable, params: DynamicsParams, form: str = "direct",
                           sub_domain: Iterable[int] | None = None,
                           n_max: int | None = None) -> QuasiObservable:
    """``P F`` tabulated on every configuration of order ``<= n_max``."""
    n_max = F.n_max if n_max is None else n_max
    configs = enumerate_configurations(F.domain, n_max)
    return QuasiObservable(F.domain, n_max,
                           {c: p_delta_observable(F, c, params, form, sub_domain) for c in configs})


# ------------------------------------------------------ symbol P-hat

def p_delta_hat_volume(G: QuasiObservable, eta: Sequence[int], params: DynamicsParams,
                       sub_domain: Iterable[int] | None = None) -> float:
    """Pointwise product-form symbol with births restricted to ``sub_domain``.

    ``sum_{xi subset eta} (1-delta)^{|xi|} sum_{omega} (z delta h^d)^{|omega|}
    G(xi u omega) prod_{y in xi} e^{-E(y, omega)} prod_{y in eta \\ xi} (e^{-E(y, omega)} - 1)``.
    """
    B = params.boltzmann
    sub_mask = _sites_mask(params.domain, sub_domain)
    eta_mask = to_mask(eta)
    a = params.birth_weight
    d = params.delta
    terms = []
    for kappa, g in G.values.items():
        kmask = to_mask(kappa)
        for xi in submasks(kmask & eta_mask):
            omega = kmask & ~xi
            if omega & ~sub_mask:
                continue
            om = list(from_mask(omega))
            w = g * (1 - d) ** popcount(xi) * a ** len(om)
            for y in from_mask(xi):
                w *= float(np.prod(B[y, om]))
            for y in from_mask(eta_mask & ~xi):
                w *= float(np.prod(B[y, om])) - 1.0
            if w != 0.0:
                terms.append(w)
    return math.fsum(terms)


@lru_cache(maxsize=16)
def _symbol_tensor(potential: PairPotential, domain: GridDomain, n_max: int, sub_mask: int):
    """Coefficient tensor of the product-form symbol, split by ``(|xi|, |omega|)``.

    Returns ``(pairs, A)`` with ``A[p]`` the matrix multiplying
    ``(1-delta)^j (z delta h^d)^k`` for ``pairs[p] == (j, k)``. Rows run over
    all configurations of the domain, columns over orders ``<= n_max``.
    """
    n = domain.n_sites
    B = lattice_boltzmann(potential, domain.sites)
    cols = ConfigurationSpace(domain, n_max)
    rows = ConfigurationSpace(domain, n)
    col_of = np.full(1 << n, -1, dtype=np.int64)
    col_of[cols.masks] = np.arange(len(cols))

    sub_sites = from_mask(sub_mask)
    om = ConfigurationSpace(domain, min(n_max, len(sub_sites)), sites=sub_sites)
    om_masks, om_orders = om.masks, om.orders
    Bw = np.ones((n, len(om)))
    for i in range(1, len(om)):
        m = int(om_masks[i])
        low = m & -m
        Bw[:, i] = Bw[:, om.index[m ^ low]] * B[:, low.bit_length() - 1]

    pairs = [(j, k) for j in range(n_max + 1) for k in range(n_max + 1 - j)]
    pair_of = {p: i for i, p in enumerate(pairs)}
    pair_index = np.array([[pair_of.get((j, k), -1) for k in range(n_max + 1)]
                           for j in range(n_max + 1)])
    A = np.zeros((len(pairs), len(rows), len(cols)))
    for r, eta in enumerate(rows.masks):
        eta = int(eta)
        for xi in submasks(eta):
            j = popcount(xi)
            if j > n_max:
                continue
            idx = np.flatnonzero(((om_masks & xi) == 0) & (om_orders <= n_max - j))
            prod = np.ones(len(idx))
            for y in from_mask(xi):
                prod *= Bw[y, idx]
            for y in from_mask(eta & ~xi):
                prod *= Bw[y, idx] - 1.0
            keep = prod != 0.0
            if not keep.any():
                continue
            idx, prod = idx[keep], prod[keep]
            A[pair_index[j, om_orders[idx]], r, col_of[xi | om_masks[idx]]] += prod
    A.setflags(write=False)
    return tuple(pairs), A, cols, rows


def _coefficients(pairs, params: DynamicsParams, k_only: int | None = None) -> np.ndarray:
    d = params.delta
    a = params.birth_weight
    c = np.array([(1 - d) ** j * a ** k for j, k in pairs])
    if k_only is not None:
        c[[k != k_only for _, k in pairs]] = 0.0
    return c


def p_delta_hat_matrix(params: DynamicsParams, n_max: int,
                       sub_domain: Iterable[int] | None = None,
                       stratum: int | None = None):
    """Dense symbol on the truncated space.

    Returns ``(M, M_discard, space, discard_orders)``: ``M`` maps coefficient
    vectors on ``space`` to the output on ``space``; ``M_discard`` gives the
    output on the orders above ``n_max`` (their orders in
    ``discard_orders``). ``stratum`` keeps only births of that size.
    """
    sub_mask = _sites_mask(params.domain, sub_domain)
    pairs, A, cols, rows = _symbol_tensor(params.potential, params.domain, n_max, sub_mask)
    M_all = np.tensordot(_coefficients(pairs, params, stratum), A, axes=1)
    n = len(cols)
    return M_all[:n], M_all[n:], cols, rows.orders[n:]


def _discard_weights(params: DynamicsParams, orders: np.ndarray) -> np.ndarray:
    return (params.C * params.domain.cell_volume) ** orders.astype(float)


def _apply_matrix(G: QuasiObservable, params: DynamicsParams, sub_domain, stratum=None) -> QuasiObservable:
    M, M_disc, space, disc_orders = p_delta_hat_matrix(params, G.n_max, sub_domain, stratum)
    vec = G.to_vector(space)
    out = QuasiObservable.from_vector(space, M @ vec, truncation_flag=G.truncation_flag,
                                      truncation_error=G.truncation_error)
    lost = math.fsum(np.abs(M_disc @ vec) * _discard_weights(params, disc_orders)) if len(M_disc) else 0.0
    return _with_truncation(out, lost)


def p_delta_hat(G: QuasiObservable, params: DynamicsParams) -> QuasiObservable:
    """The symbol applied on the whole grid, tabulated for orders ``<= G.n_max``."""
    return _apply_matrix(G, params, None)


def p_delta_hat_restricted(G: QuasiObservable, params: DynamicsParams,
                           sub_domain: Iterable[int]) -> QuasiObservable:
    """Finite-volume step ``p_Lambda P_hat^Lambda``: births inside ``sub_domain``,
    output cut to configurations inside it."""
    return cutoff_p_n(_apply_matrix(G, params, sub_domain), sub_domain)


def p_delta_split(G: QuasiObservable, params: DynamicsParams):
    """``(part0, part1, part_ge2)``: no birth, one birth, and the remainder."""
    part0 = _apply_matrix(G, params, None, stratum=0)
    part1 = _apply_matrix(G, params, None, stratum=1)
    total = p_delta_hat(G, params)
    return part0, part1, total - part0 - part1


def l_delta(G: QuasiObservable, params: DynamicsParams) -> QuasiObservable:
    """``(P_hat_delta G - G) / delta``."""
    if params.delta == 0:
        raise ValueError("delta must be nonzero")
    return (p_delta_hat(G, params) - G) * (1.0 / params.delta)


def n_steps(t: float, n: int) -> int:
    """Entire part of ``n t``, robust to ``n t`` landing a hair below an integer."""
    return int(math.floor(n * t + 1e-9))


def _iterate(G: QuasiObservable, steps: int, params: DynamicsParams, sub_domain) -> QuasiObservable:
    M, M_disc, space, disc_orders = p_delta_hat_matrix(params, G.n_max, sub_domain)
    w = _discard_weights(params, disc_orders)
    if sub_domain is not None:
        G = cutoff_p_n(G, sub_domain)
        outside = ~_sites_mask(params.domain, sub_domain)
        _, _, _, rows = _symbol_tensor(params.potential, params.domain, G.n_max,
                                       _sites_mask(params.domain, sub_domain))
        inside = np.array([not (int(m) & outside) for m in rows.masks])
        M = M * inside[:len(space), None]
        w = w * inside[len(space):]
    vec = G.to_vector(space)
    lost = []
    for _ in range(steps):
        if len(M_disc):
            lost.append(math.fsum(np.abs(M_disc @ vec) * w))
        vec = M @ vec
    out = QuasiObservable.from_vector(space, vec, truncation_flag=G.truncation_flag,
                                      truncation_error=G.truncation_error)
    return _with_truncation(out, math.fsum(lost))


def _require_small(step: DynamicsParams) -> None:
    if not step.cond_small:
        margin = check_contraction_condition(step.z, step.C, step.potential,
                                             step.domain.dimension).margin_small
        raise ConditionViolation(f"z e^(C C_phi) <= C fails (margin {margin:.3g})")
    if not step.lattice_condition.cond_small:
        warnings.warn("lattice small-activity condition fails; contraction is not guaranteed",
                      RuntimeWarning, stacklevel=3)


def iterate_p_hat(G: QuasiObservable, steps: int, params: DynamicsParams) -> QuasiObservable:
    """``(P_hat_delta)^steps G`` at the step size in ``params``."""
    _require_small(params)
    return _iterate(G, steps, params, None)


def iterate_semigroup(G: QuasiObservable, t: float, n: int, params: DynamicsParams) -> QuasiObservable:
    """``(P_hat_{1/n})^{[n t]} G`` on the whole grid.

    Refuses to run unless the small-activity condition holds, since
    contraction is the only stability guarantee for the iteration.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if t < 0:
        raise ValueError("t must be nonnegative")
    step = params.with_delta(1.0 / n)
    _require_small(step)
    return _iterate(G, n_steps(t, n), step, None)


def iterate_finite_volume(G: QuasiObservable, t: float, n: int, params: DynamicsParams,
                          sub_domain: Iterable[int]) -> QuasiObservable:
    """``(T_n)^{[n t]} p_n G`` with ``T_n`` the symbol at ``delta = 1/n`` and
    births restricted to ``sub_domain``."""
    if n < 2:
        raise ValueError("n must be at least 2")
    step = params.with_delta(1.0 / n)
    _require_small(step)
    return _iterate(G, n_steps(t, n), step, tuple(sub_domain))


def cutoff_p_n(G: QuasiObservable, sub_domain: Iterable[int]) -> QuasiObservable:
    """Zero every configuration that has a site outside ``sub_domain``."""
    inside = set(sub_domain)
    if any(s < 0 or s >= G.domain.n_sites for s in inside):
        raise ValueError("sub_domain contains sites outside the domain")
    return QuasiObservable(G.domain, G.n_max,
                           {k: v for k, v in G.values.items() if inside.issuperset(k)},
                           G.truncation_flag, G.truncation_error)


def norm_C_restricted(G: QuasiObservable, C: float, sub_domain: Iterable[int]) -> float:
    """``||.||_{C,n}``: the weighted norm over configurations inside ``sub_domain``."""
    return norm_C(cutoff_p_n(G, sub_domain), C)
