"""The K-transform ``KG(gamma) = sum_{eta subset gamma} G(eta)``, its
Moebius inverse, and the Minlos double-sum identity."""

from __future__ import annotations

import itertools
import math
from typing import Callable, Sequence

import numpy as np

from .configurations import (ConfigurationSpace, GridDomain, QuasiObservable,
                             enumerate_configurations, submasks)

MAX_K_ORDER = 20


class ConfigurationSizeError(ValueError):
    """Subset enumeration over a configuration that is too large."""


def _check_size(config: Sequence[int]) -> tuple[int, ...]:
    config = tuple(config)
    if len(config) > MAX_K_ORDER:
        raise ConfigurationSizeError(
            f"|gamma|={len(config)} exceeds the subset-enumeration limit {MAX_K_ORDER}")
    return config


def _subsets(config: tuple[int, ...]):
    for n in range(len(config) + 1):
        yield from itertools.combinations(config, n)


def k_apply(G: QuasiObservable, gamma: Sequence[int]) -> float:
    """``(KG)(gamma)``: sum of G over all subsets of ``gamma``."""
    gamma = _check_size(gamma)
    if len(G.values) < 2 ** len(gamma):
        members = set(gamma)
        terms = [v for k, v in G.values.items() if members.issuperset(k)]
    else:
        terms = [G[s] for s in _subsets(gamma)]
    return math.fsum(terms)


def k_inverse(F: QuasiObservable, eta: Sequence[int]) -> float:
    """``(K^{-1}F)(eta) = sum_{xi subset eta} (-1)^{|eta \\ xi|} F(xi)``."""
    eta = _check_size(eta)
    n = len(eta)
    return math.fsum((-1.0) ** (n - len(s)) * F[s] for s in _subsets(eta))


def k_transform(G: QuasiObservable, n_max: int | None = None) -> QuasiObservable:
    """KG tabulated on every configuration of order ``<= n_max``."""
    n_max = G.domain.n_sites if n_max is None else n_max
    configs = enumerate_configurations(G.domain, n_max)
    return QuasiObservable(G.domain, n_max, {c: k_apply(G, c) for c in configs})


def k_inverse_transform(F: QuasiObservable, n_max: int | None = None) -> QuasiObservable:
    n_max = F.n_max if n_max is None else n_max
    configs = enumerate_configurations(F.domain, n_max)
    return QuasiObservable(F.domain, n_max, {c: k_inverse(F, c) for c in configs})


def k_matrix(space: ConfigurationSpace, inverse: bool = False) -> np.ndarray:
    """Dense K (or K^{-1}) on a truncated space; row gamma, column eta."""
    n = len(space)
    M = np.zeros((n, n))
    for row, mask in enumerate(space.masks):
        mask = int(mask)
        for sub in submasks(mask):
            col = space.index.get(sub)
            if col is None:
                continue
            if inverse:
                M[row, col] = -1.0 if (space.orders[row] - bin(sub).count("1")) % 2 else 1.0
            else:
                M[row, col] = 1.0
    return M


def minlos_check(H: Callable[[tuple, tuple, tuple], float], domain: GridDomain,
                 n_max: int) -> tuple[float, float]:
    """Both sides of the Minlos identity on the lattice.

    ``lhs = sum_eta h^{d|eta|} sum_{xi subset eta} H(xi, eta \\ xi, eta)`` and
    ``rhs = sum_{xi, eta disjoint} h^{d(|xi|+|eta|)} H(xi, eta, xi u eta)``,
    both over configurations of total order ``<= n_max``.
    """
    w = domain.cell_volume
    lhs_terms = []
    for eta in enumerate_configurations(domain, n_max):
        weight = w ** len(eta)
        for xi in _subsets(eta):
            rest = tuple(s for s in eta if s not in xi)
            lhs_terms.append(weight * H(xi, rest, eta))
    rhs_terms = []
    all_sites = range(domain.n_sites)
    for xi in enumerate_configurations(domain, n_max):
        free = [s for s in all_sites if s not in xi]
        for m in range(n_max - len(xi) + 1):
            for eta in itertools.combinations(free, m):
                union = tuple(sorted(xi + eta))
                rhs_terms.append(w ** len(union) * H(xi, eta, union))
    return math.fsum(lhs_terms), math.fsum(rhs_terms)
