"""Finite configurations on a lattice box, quasi-observables and the
discretized Lebesgue-Poisson integral.

A configuration of sites is a strictly increasing tuple of site indices.
Internally the operator code works with integer bitmasks (bit ``i`` set
means site ``i`` is occupied); the helpers :func:`to_mask` and
:func:`from_mask` convert between the two.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from types import MappingProxyType
from typing import Callable, Iterable, Iterator, Mapping, Sequence

import numpy as np

SiteConfiguration = tuple  # strictly increasing tuple of site indices


def site_configuration(indices: Iterable[int]) -> tuple[int, ...]:
    """Normalize ``indices`` into a sorted tuple, rejecting repeated sites."""
    out = tuple(sorted(int(i) for i in indices))
    if any(a == b for a, b in zip(out, out[1:])):
        raise ValueError(f"repeated site in configuration {out}")
    return out


def to_mask(config: Iterable[int]) -> int:
    mask = 0
    for i in config:
        mask |= 1 << i
    return mask


def from_mask(mask: int) -> tuple[int, ...]:
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return tuple(out)


def submasks(mask: int) -> Iterator[int]:
    """Yield every submask of ``mask`` (including 0 and ``mask`` itself)."""
    sub = mask
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & mask


def popcount(mask: int) -> int:
    return bin(mask).count("1")


@dataclass(frozen=True)
class GridDomain:
    """The box ``[0, L)^d`` cut into cells of side ``h``.

    Sites are the cell centers, listed in lexicographic coordinate order.
    """

    dimension: int
    side_length: float
    spacing: float

    def __post_init__(self):
        if int(self.dimension) != self.dimension or self.dimension < 1:
            raise ValueError("dimension must be a positive integer")
        if not (self.side_length > 0 and self.spacing > 0):
            raise ValueError("side_length and spacing must be positive")
        ratio = self.side_length / self.spacing
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError("L/h not integer")

    @cached_property
    def cells_per_axis(self) -> int:
        return int(round(self.side_length / self.spacing))

    @cached_property
    def n_sites(self) -> int:
        return self.cells_per_axis ** self.dimension

    @cached_property
    def cell_volume(self) -> float:
        return self.spacing ** self.dimension

    @cached_property
    def volume(self) -> float:
        return self.side_length ** self.dimension

    @cached_property
    def sites(self) -> np.ndarray:
        """Array of shape ``(n_sites, d)`` with the cell-center coordinates."""
        axis = (np.arange(self.cells_per_axis) + 0.5) * self.spacing
        grid = itertools.product(axis, repeat=self.dimension)
        pts = np.array(list(grid), dtype=float).reshape(-1, self.dimension)
        pts.setflags(write=False)
        return pts

    def coordinates(self, config: Sequence[int]) -> np.ndarray:
        return self.sites[list(config)].reshape(-1, self.dimension)

    def cell_of(self, points: np.ndarray) -> np.ndarray:
        """Index of the cell (nearest site) containing each point."""
        pts = np.asarray(points, dtype=float).reshape(-1, self.dimension)
        k = self.cells_per_axis
        ij = np.clip(np.floor(pts / self.spacing).astype(np.int64), 0, k - 1)
        idx = np.zeros(len(pts), dtype=np.int64)
        for axis in range(self.dimension):
            idx = idx * k + ij[:, axis]
        return idx

    def header(self) -> dict:
        return {"d": self.dimension, "L": self.side_length, "h": self.spacing}


@dataclass(frozen=True)
class PointConfiguration:
    """Finite set of points in the continuum box ``[0, L)^d``."""

    points: np.ndarray
    side_length: float

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1) if pts.size else pts.reshape(0, 1)
        if pts.size and (np.any(pts < 0) or np.any(pts >= self.side_length)):
            raise ValueError("point outside the domain box")
        if len(pts) != len(np.unique(pts, axis=0)):
            raise ValueError("duplicate point in configuration")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    @property
    def dimension(self) -> int:
        return self.points.shape[1]


def enumerate_configurations(domain: GridDomain, n_max: int,
                             sites: Sequence[int] | None = None) -> list[tuple[int, ...]]:
    """All configurations of order ``0..n_max`` in (order, lexicographic) order.

    ``sites`` restricts the enumeration to a subset of the domain's sites.
    """
    pool = list(range(domain.n_sites)) if sites is None else sorted(sites)
    if n_max < 0 or n_max > len(pool):
        raise ValueError(f"n_max={n_max} exceeds site count {len(pool)}")
    out = []
    for n in range(n_max + 1):
        out.extend(itertools.combinations(pool, n))
    return out


class ConfigurationSpace:
    """Indexed truncated configuration space used for the dense operator forms."""

    def __init__(self, domain: GridDomain, n_max: int, sites: Sequence[int] | None = None):
        self.domain = domain
        self.n_max = n_max
        self.configs = enumerate_configurations(domain, n_max, sites)
        self.masks = np.array([to_mask(c) for c in self.configs], dtype=np.int64)
        self.orders = np.array([len(c) for c in self.configs], dtype=np.int64)
        self.index = {int(m): i for i, m in enumerate(self.masks)}

    def __len__(self) -> int:
        return len(self.configs)

    def weights(self, C: float) -> np.ndarray:
        """``(C h^d)^{|eta|}`` for every configuration."""
        return (C * self.domain.cell_volume) ** self.orders.astype(float)


@dataclass(frozen=True)
class QuasiObservable:
    """Real function on site configurations of order at most ``n_max``.

    Absent keys read as zero. ``truncation_flag`` is sticky: it records that
    some operation producing this object discarded orders above ``n_max``;
    ``truncation_error`` is the C-norm bound of what was discarded.
    """

    domain: GridDomain
    n_max: int
    values: Mapping[tuple[int, ...], float] = field(default_factory=dict)
    truncation_flag: bool = False
    truncation_error: float = 0.0

    def __post_init__(self):
        if self.n_max < 0 or self.n_max > self.domain.n_sites:
            raise ValueError("n_max must lie in [0, number of sites]")
        clean = {}
        for key, val in self.values.items():
            key = site_configuration(key)
            if len(key) > self.n_max:
                raise ValueError(f"configuration {key} exceeds n_max={self.n_max}")
            if key and (key[0] < 0 or key[-1] >= self.domain.n_sites):
                raise ValueError(f"site index out of range in {key}")
            val = float(val)
            if not math.isfinite(val):
                raise FloatingPointError(f"non-finite value at {key}")
            if val != 0.0:
                clean[key] = val
        object.__setattr__(self, "values", MappingProxyType(dict(sorted(clean.items(), key=_order_key))))

    def __getitem__(self, config) -> float:
        return self.values.get(tuple(config), 0.0)

    def __call__(self, config) -> float:
        return self.values.get(tuple(config), 0.0)

    def items(self):
        return self.values.items()

    def _combine(self, other: "QuasiObservable", sign: float) -> "QuasiObservable":
        if other.domain != self.domain:
            raise ValueError("quasi-observables live on different domains")
        vals = dict(self.values)
        for k, v in other.values.items():
            vals[k] = vals.get(k, 0.0) + sign * v
        return QuasiObservable(self.domain, max(self.n_max, other.n_max), vals,
                               self.truncation_flag or other.truncation_flag,
                               self.truncation_error + other.truncation_error)

    def __add__(self, other):
        return self._combine(other, 1.0)

    def __sub__(self, other):
        return self._combine(other, -1.0)

    def __mul__(self, scalar: float):
        return QuasiObservable(self.domain, self.n_max,
                               {k: scalar * v for k, v in self.values.items()},
                               self.truncation_flag, abs(scalar) * self.truncation_error)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def map_values(self, fn: Callable[[tuple[int, ...], float], float]) -> "QuasiObservable":
        return QuasiObservable(self.domain, self.n_max,
                               {k: fn(k, v) for k, v in self.values.items()},
                               self.truncation_flag, self.truncation_error)

    def to_vector(self, space: ConfigurationSpace) -> np.ndarray:
        vec = np.zeros(len(space))
        for key, val in self.values.items():
            i = space.index.get(to_mask(key))
            if i is None:
                raise ValueError(f"configuration {key} not in the configuration space")
            vec[i] = val
        return vec

    @classmethod
    def from_vector(cls, space: ConfigurationSpace, vec: np.ndarray, *,
                    truncation_flag: bool = False, truncation_error: float = 0.0) -> "QuasiObservable":
        nz = np.flatnonzero(vec)
        return cls(space.domain, space.n_max, {space.configs[i]: vec[i] for i in nz},
                   truncation_flag, truncation_error)

    @classmethod
    def from_function(cls, domain: GridDomain, n_max: int,
                      fn: Callable[[tuple[int, ...]], float]) -> "QuasiObservable":
        return cls(domain, n_max, {c: fn(c) for c in enumerate_configurations(domain, n_max)})

    @classmethod
    def indicator(cls, domain: GridDomain, n_max: int,
                  configs: Iterable[Sequence[int]], value: float = 1.0) -> "QuasiObservable":
        return cls(domain, n_max, {tuple(c): value for c in configs})


def _order_key(item):
    return (len(item[0]), item[0])


def random_quasi_observable(domain: GridDomain, n_max: int, rng: np.random.Generator,
                            density: float = 0.3, max_order: int | None = None) -> QuasiObservable:
    """Sparse random G: each configuration of order ``<= max_order`` is kept with
    probability ``density`` and given a value uniform in ``[-1, 1]``."""
    top = n_max if max_order is None else min(max_order, n_max)
    vals = {}
    for c in enumerate_configurations(domain, top):
        if rng.random() < density:
            vals[c] = rng.uniform(-1.0, 1.0)
    return QuasiObservable(domain, n_max, vals)


def lp_integrate(G: QuasiObservable, kappa: float = 1.0) -> float:
    """Discretized integral of G against the Lebesgue-Poisson measure.

    The n-point stratum is a sum over unordered n-site subsets with weight
    ``(kappa h^d)^n``.
    """
    w = kappa * G.domain.cell_volume
    return math.fsum(v * w ** len(k) for k, v in G.values.items())


def norm_C(G: QuasiObservable, C: float) -> float:
    """Weighted norm ``sum |G(eta)| (C h^d)^{|eta|}``."""
    if not C > 0:
        raise ValueError("C must be positive")
    w = C * G.domain.cell_volume
    return math.fsum(abs(v) * w ** len(k) for k, v in G.values.items())


def e_lambda(f, eta: Sequence[int]) -> float:
    """Product of ``f`` over the sites of ``eta``; 1 for the empty configuration."""
    get = f if callable(f) else f.__getitem__
    out = 1.0
    for x in eta:
        out *= get(x)
    return out


def dumps_quasi_observable(G: QuasiObservable) -> str:
    lines = [
        f"# d={G.domain.dimension}",
        f"# L={G.domain.side_length!r}",
        f"# h={G.domain.spacing!r}",
        f"# n_max={G.n_max}",
        f"# truncation_flag={int(G.truncation_flag)}",
        f"# truncation_error={G.truncation_error!r}",
    ]
    for key, val in G.values.items():
        lines.append(",".join(map(str, key)) + "\t" + repr(val))
    return "\n".join(lines) + "\n"


def loads_quasi_observable(text: str) -> QuasiObservable:
    header = {}
    values = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            name, _, val = line[1:].strip().partition("=")
            header[name] = val
            continue
        idx, _, val = line.partition("\t")
        key = tuple(int(i) for i in idx.split(",")) if idx else ()
        values[key] = float(val)
    try:
        domain = GridDomain(int(header["d"]), float(header["L"]), float(header["h"]))
        n_max = int(header["n_max"])
    except KeyError as exc:
        raise ValueError(f"missing header field {exc}") from None
    return QuasiObservable(domain, n_max, values,
                           bool(int(header.get("truncation_flag", "0"))),
                           float(header.get("truncation_error", "0.0")))
