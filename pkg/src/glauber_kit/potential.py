"""Even, nonnegative pair potentials, the relative energy and the
integrability constant ``C_phi = int (1 - exp(-phi(x))) dx``.

``+inf`` is a legitimate potential value (hard core); ``exp(-inf)`` is 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, special

KINDS = ("zero", "truncated-constant", "gaussian", "exponential-decay")

_REQUIRED = {
    "zero": (),
    "truncated-constant": ("strength", "range"),
    "gaussian": ("amplitude", "width"),
    "exponential-decay": ("amplitude", "rate"),
}


class ToleranceError(ArithmeticError):
    """A quadrature tail bound exceeded the requested tolerance."""


def _ball_volume(r: float, d: int) -> float:
    return math.pi ** (d / 2) / math.gamma(d / 2 + 1) * r ** d


def _sphere_area(d: int) -> float:
    return 2 * math.pi ** (d / 2) / math.gamma(d / 2)


@dataclass(frozen=True)
class PairPotential:
    """Radial pair potential ``phi(u) = f(|u|)``.

    Build one with the named constructors (:meth:`zero`,
    :meth:`truncated_constant`, :meth:`gaussian`, :meth:`exponential_decay`)
    or :meth:`from_config`.
    """

    kind: str
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in _REQUIRED:
            raise ValueError(f"unknown potential kind {self.kind!r}")
        p = dict(self.params)
        missing = [k for k in _REQUIRED[self.kind] if k not in p]
        if missing:
            raise ValueError(f"potential {self.kind!r} missing parameters {missing}")
        extra = set(p) - set(_REQUIRED[self.kind])
        if extra:
            raise ValueError(f"potential {self.kind!r} got unknown parameters {sorted(extra)}")
        for name, val in p.items():
            if math.isnan(val) or val < 0:
                raise ValueError(f"parameter {name} must be nonnegative")
        if self.kind == "truncated-constant" and not math.isfinite(p["range"]):
            raise ValueError("range must be finite")
        if self.kind == "gaussian" and not (0 < p["width"] < math.inf and math.isfinite(p["amplitude"])):
            raise ValueError("gaussian needs finite amplitude and positive width")
        if self.kind == "exponential-decay" and not (0 < p["rate"] < math.inf and math.isfinite(p["amplitude"])):
            raise ValueError("exponential-decay needs finite amplitude and positive rate")
        object.__setattr__(self, "params", tuple(sorted((k, float(v)) for k, v in p.items())))

    @classmethod
    def zero(cls) -> "PairPotential":
        return cls("zero")

    @classmethod
    def truncated_constant(cls, strength: float, range: float) -> "PairPotential":
        """``strength`` on ``|u| <= range``, zero outside; ``strength=inf`` is a hard core."""
        return cls("truncated-constant", (("strength", strength), ("range", range)))

    @classmethod
    def gaussian(cls, amplitude: float, width: float) -> "PairPotential":
        return cls("gaussian", (("amplitude", amplitude), ("width", width)))

    @classmethod
    def exponential_decay(cls, amplitude: float, rate: float) -> "PairPotential":
        return cls("exponential-decay", (("amplitude", amplitude), ("rate", rate)))

    @classmethod
    def from_config(cls, cfg: dict) -> "PairPotential":
        cfg = dict(cfg)
        kind = cfg.pop("kind", None)
        if kind is None:
            raise ValueError("potential.kind is required")
        return cls(kind, tuple((k, float(v)) for k, v in cfg.items()))

    def to_config(self) -> dict:
        return {"kind": self.kind, **dict(self.params)}

    @property
    def p(self) -> dict:
        return dict(self.params)

    def radial(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        p = self.p
        if self.kind == "zero":
            return np.zeros_like(r)
        if self.kind == "truncated-constant":
            return np.where(r <= p["range"], p["strength"], 0.0)
        if self.kind == "gaussian":
            return p["amplitude"] * np.exp(-r ** 2 / (2 * p["width"] ** 2))
        if self.kind == "exponential-decay":
            return p["amplitude"] * np.exp(-p["rate"] * r)
        raise NotImplementedError(self.kind)

    def __call__(self, u) -> np.ndarray:
        """Evaluate ``phi`` at displacement(s) ``u`` of shape ``(..., d)``."""
        u = np.asarray(u, dtype=float)
        return self.radial(np.sqrt(np.sum(u * u, axis=-1)))

    def boltzmann(self, u) -> np.ndarray:
        """``exp(-phi(u))`` with ``exp(-inf) = 0``."""
        return np.exp(-self(u))

    def mayer_abs(self, u) -> np.ndarray:
        """``1 - exp(-phi(u))``."""
        return -np.expm1(-self(u))

    @property
    def is_zero(self) -> bool:
        p = self.p
        if self.kind == "zero":
            return True
        if self.kind == "truncated-constant":
            return p["strength"] == 0 or p["range"] == 0
        return p["amplitude"] == 0

    def c_phi(self, d: int) -> float:
        """Cached integrability constant in dimension ``d``."""
        return _c_phi_exact(self, d)


@lru_cache(maxsize=None)
def _c_phi_exact(phi: PairPotential, d: int) -> float:
    p = phi.p
    if phi.is_zero:
        return 0.0
    if phi.kind == "truncated-constant":
        return -math.expm1(-p["strength"]) * _ball_volume(p["range"], d)
    f = lambda r: r ** (d - 1) * -math.expm1(-float(phi.radial(r)))
    scale = p["width"] if phi.kind == "gaussian" else 1.0 / p["rate"]
    # split at a multiple of the length scale so quad cannot miss the bulk
    a, _ = integrate.quad(f, 0.0, 20 * scale, limit=400, epsabs=1e-14, epsrel=1e-12)
    b, _ = integrate.quad(f, 20 * scale, np.inf, limit=400, epsabs=1e-14, epsrel=1e-12)
    return _sphere_area(d) * (a + b)


@dataclass(frozen=True)
class CPhiResult:
    value: float
    tail_bound: float


def _tail_bound(phi: PairPotential, d: int, radius: float) -> float:
    p = phi.p
    if phi.is_zero:
        return 0.0
    if phi.kind == "truncated-constant":
        return 0.0 if radius >= p["range"] else -math.expm1(-p["strength"]) * _ball_volume(p["range"], d)
    if phi.kind == "gaussian":
        s = p["width"]
        return p["amplitude"] * (2 * math.pi * s * s) ** (d / 2) * d * math.erfc(radius / (s * math.sqrt(2)))
    if phi.kind == "exponential-decay":
        b = p["rate"]
        upper = special.gammaincc(d, b * radius) * math.gamma(d)
        return p["amplitude"] * _sphere_area(d) * upper / b ** d
    raise NotImplementedError(f"no tail bound for kind {phi.kind!r}")


def c_phi(phi: PairPotential, d: int, radius: float, resolution: int,
          tol: float = 1e-8) -> CPhiResult:
    """Composite midpoint quadrature of ``1 - exp(-phi)`` over ``[-R, R]^d``.

    ``resolution`` is the number of cells per axis. The reported tail bound
    covers the mass outside the cube; a bound above ``tol`` raises
    :class:`ToleranceError`.
    """
    if phi.kind not in KINDS:
        raise NotImplementedError(phi.kind)
    tail = _tail_bound(phi, d, radius)
    if tail > tol:
        raise ToleranceError(f"tail bound {tail:.3e} exceeds tolerance {tol:.1e}; increase radius")
    if phi.is_zero:
        return CPhiResult(0.0, 0.0)
    step = 2 * radius / resolution
    axis = -radius + (np.arange(resolution) + 0.5) * step
    if d == 1:
        total = math.fsum(-np.expm1(-phi.radial(np.abs(axis)))) * step
    else:
        # accumulate slab by slab to keep memory at resolution^(d-1)
        rest = np.stack(np.meshgrid(*([axis] * (d - 1)), indexing="ij"), axis=-1).reshape(-1, d - 1)
        r2_rest = np.sum(rest * rest, axis=1)
        parts = [np.sum(-np.expm1(-phi.radial(np.sqrt(r2_rest + x * x)))) for x in axis]
        total = math.fsum(parts) * step ** d
    return CPhiResult(total, tail)


def displacement(x, points, periodic: float | None = None) -> np.ndarray:
    diff = np.asarray(points, dtype=float) - np.asarray(x, dtype=float)
    if periodic is not None:
        diff = diff - periodic * np.round(diff / periodic)
    return diff


def relative_energy(x, gamma, phi: PairPotential, periodic: float | None = None) -> float:
    """``E(x, gamma) = sum_{y in gamma} phi(x - y)``; may be ``+inf``.

    ``gamma`` is a :class:`PointConfiguration` or an ``(n, d)`` array of
    points. ``x`` must not belong to ``gamma``.
    """
    pts = getattr(gamma, "points", gamma)
    pts = np.asarray(pts, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if pts.size == 0:
        return 0.0
    pts = pts.reshape(-1, x.shape[0])
    if np.any(np.all(pts == x, axis=1)):
        raise ValueError("relative energy is defined only for x outside gamma")
    return float(np.sum(phi(displacement(x, pts, periodic))))


def lattice_boltzmann(phi: PairPotential, sites: np.ndarray) -> np.ndarray:
    """Matrix ``B[y, x] = exp(-phi(site_y - site_x))`` with zero diagonal.

    The zero diagonal encodes that two points never share a site.
    """
    u = sites[:, None, :] - sites[None, :, :]
    B = phi.boltzmann(u)
    np.fill_diagonal(B, 0.0)
    return B


def lattice_c_phi(phi: PairPotential, sites: np.ndarray, cell_volume: float) -> float:
    """Largest lattice analogue of ``C_phi`` over the box, self-exclusion included:
    ``max_y sum_x h^d (1 - B[y, x])``."""
    B = lattice_boltzmann(phi, sites)
    return float(np.max(np.sum(1.0 - B, axis=1)) * cell_volume)
