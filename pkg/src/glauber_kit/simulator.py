"""Multiple birth-and-death Markov chain in a continuum box.

One step from ``gamma``: every point is removed independently with
probability ``delta``; independently, a Poisson cloud with intensity
``z delta exp(-E(y, gamma))`` is added, where ``gamma`` is the pre-step
configuration. Births are sampled by thinning a homogeneous Poisson process
of intensity ``z delta``. Newborns do not interact with each other within
a step.
"""

from __future__ import annotations

import io
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .configurations import PointConfiguration
from .potential import PairPotential, displacement


@dataclass(frozen=True)
class RngSpec:
    """Seed of one replica.

    Stream derivation: ``numpy.random.SeedSequence(master_seed,
    spawn_key=(replica_index,))`` feeding the default PCG64 generator, so
    replicas are independent and each is reproducible on its own.
    """

    master_seed: int
    replica_index: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.master_seed, spawn_key=(self.replica_index,))
        return np.random.default_rng(ss)


@dataclass(frozen=True)
class ChainParams:
    z: float
    delta: float
    potential: PairPotential
    side_length: float
    dimension: int = 1
    periodic: bool = False

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError("delta out of (0,1)")
        if self.z < 0:
            raise ValueError("z must be nonnegative")

    @classmethod
    def from_dynamics(cls, params, periodic: bool = False) -> "ChainParams":
        dom = params.domain
        return cls(params.z, params.delta, params.potential, dom.side_length, dom.dimension, periodic)

    @property
    def volume(self) -> float:
        return self.side_length ** self.dimension

    def header(self) -> dict:
        return {"z": self.z, "delta": self.delta, "L": self.side_length, "d": self.dimension,
                "potential": self.potential.kind, "periodic": self.periodic}


@dataclass
class ChainState:
    configuration: PointConfiguration
    step_index: int
    rng: np.random.Generator = field(repr=False)

    @property
    def rng_state(self) -> dict:
        return self.rng.bit_generator.state


def _trusted(points: np.ndarray, side_length: float) -> PointConfiguration:
    # skip validation on the hot path; callers guarantee the invariants
    pc = object.__new__(PointConfiguration)
    object.__setattr__(pc, "points", points)
    object.__setattr__(pc, "side_length", side_length)
    return pc


def _uniform(rng: np.random.Generator, n: int, side_length: float, d: int) -> np.ndarray:
    pts = rng.random((n, d)) * side_length
    # guard against rounding up to the open end of the box
    return np.minimum(pts, np.nextafter(side_length, 0.0))


def sample_poisson_initial(z0: float, side_length: float, dimension: int,
                           rng: np.random.Generator) -> PointConfiguration:
    """Poisson process of intensity ``z0`` on ``[0, L)^d``."""
    if z0 < 0:
        raise ValueError("z0 must be nonnegative")
    n = rng.poisson(z0 * side_length ** dimension)
    return _trusted(_uniform(rng, n, side_length, dimension), side_length)


def death_step(gamma: PointConfiguration, delta: float, rng: np.random.Generator) -> PointConfiguration:
    """Remove each point independently with probability ``delta``."""
    if not 0 < delta < 1:
        raise ValueError("delta out of (0,1)")
    pts = gamma.points
    keep = rng.random(len(pts)) >= delta
    return _trusted(pts[keep], gamma.side_length)


def acceptance(candidates: np.ndarray, gamma_points: np.ndarray, params: ChainParams) -> np.ndarray:
    """``exp(-E(y, gamma))`` for each candidate ``y``."""
    if params.potential.is_zero or len(gamma_points) == 0 or len(candidates) == 0:
        return np.ones(len(candidates))
    period = params.side_length if params.periodic else None
    u = displacement(candidates[:, None, :], gamma_points[None, :, :], period)
    return np.exp(-np.sum(params.potential(u), axis=1))


def birth_step(gamma: PointConfiguration, params: ChainParams,
               rng: np.random.Generator) -> PointConfiguration:
    """Sample the newborn set for one step (``gamma`` is the pre-step state)."""
    n = rng.poisson(params.z * params.delta * params.volume)
    cand = _uniform(rng, n, params.side_length, params.dimension)
    if n:
        keep = rng.random(n) < acceptance(cand, gamma.points, params)
        cand = cand[keep]
    return _trusted(cand, params.side_length)


def _collisions(pts: np.ndarray, n_old: int) -> np.ndarray:
    """Indices (into the newborn block) of newborns sharing a position with an earlier point."""
    if len(pts) <= n_old:
        return []
    # configurations are small, so hashing rows beats np.unique here
    seen = set(map(tuple, pts[:n_old].tolist()))
    bad = []
    for i, row in enumerate(map(tuple, pts[n_old:].tolist())):
        if row in seen:
            bad.append(i)
        seen.add(row)
    return bad


def chain_step(state: ChainState, params: ChainParams) -> ChainState:
    """Deaths and births, both conditioned on the same pre-step configuration."""
    gamma = state.configuration
    rng = state.rng
    survivors = death_step(gamma, params.delta, rng).points
    born = birth_step(gamma, params, rng).points
    pts = np.concatenate([survivors, born]) if len(born) else survivors
    bad = _collisions(pts, len(survivors))
    while len(bad):
        # probability zero in exact arithmetic; redraw the colliding newborns
        for i in bad:
            while True:
                y = _uniform(rng, 1, params.side_length, params.dimension)
                if rng.random() < acceptance(y, gamma.points, params)[0]:
                    break
            pts[len(survivors) + i] = y[0]
        bad = _collisions(pts, len(survivors))
    return ChainState(_trusted(pts, gamma.side_length), state.step_index + 1, rng)


@dataclass
class TrajectorySummary:
    counts: list[int]
    final: PointConfiguration
    recorded: list[tuple[int, np.ndarray]] = field(default_factory=list)


def run_chain(initial: ChainState, m_steps: int, params: ChainParams,
              recorder: Callable[[ChainState], None] | None = None,
              thin: int = 1, keep: bool = False) -> TrajectorySummary:
    """Apply :func:`chain_step` ``m_steps`` times.

    ``recorder`` sees the initial state and every ``thin``-th state after it;
    with ``keep=True`` the recorded configurations are also stored in the
    summary.
    """
    if m_steps < 0:
        raise ValueError("m_steps must be nonnegative")
    state = initial
    counts = [len(state.configuration)]
    recorded = []

    def record(s):
        if recorder is not None:
            recorder(s)
        if keep:
            recorded.append((s.step_index, s.configuration.points))

    record(state)
    for _ in range(m_steps):
        state = chain_step(state, params)
        counts.append(len(state.configuration))
        if state.step_index % thin == 0:
            record(state)
    return TrajectorySummary(counts, state.configuration, recorded)


def _replica_batch(args):
    params, master_seed, indices, z0, m_steps, record_at = args
    out = []
    for r in indices:
        rng = RngSpec(master_seed, r).generator()
        init = sample_poisson_initial(z0, params.side_length, params.dimension, rng)
        state = ChainState(init, 0, rng)
        snaps = {}
        if 0 in record_at:
            snaps[0] = state.configuration.points
        for step in range(1, m_steps + 1):
            state = chain_step(state, params)
            if step in record_at:
                snaps[step] = state.configuration.points
        out.append(snaps)
    return out


def run_replicas(params: ChainParams, master_seed: int, replicas: int, m_steps: int,
                 z0: float, record_at: Iterable[int] | None = None,
                 jobs: int = 1) -> dict[int, list[np.ndarray]]:
    """Independent chains from Poisson(``z0``) initial states.

    Returns ``{step: [points of replica 0, replica 1, ...]}`` for every step in
    ``record_at`` (default: the last). The result does not depend on ``jobs``.
    """
    record_at = frozenset([m_steps] if record_at is None else record_at)
    idx = list(range(replicas))
    if jobs <= 1:
        batches = [_replica_batch((params, master_seed, idx, z0, m_steps, record_at))]
    else:
        chunks = [idx[i::jobs] for i in range(jobs)]
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            parts = list(ex.map(_replica_batch, [(params, master_seed, c, z0, m_steps, record_at)
                                                 for c in chunks]))
        # undo the round-robin split so replica order is preserved
        flat = [None] * replicas
        for c, part in zip(chunks, parts):
            for r, snaps in zip(c, part):
                flat[r] = snaps
        batches = [flat]
    snaps = [s for batch in batches for s in batch]
    return {step: [s[step] for s in snaps] for step in sorted(record_at)}


def format_trajectory(records: Sequence[tuple[int, np.ndarray]], params: ChainParams,
                      seed: int) -> str:
    """Delimited dump: header with the parameters, then ``step<TAB>count<TAB>coords``.

    Coordinates are ``;``-separated points with ``,``-separated components.
    """
    buf = io.StringIO()
    head = {**params.header(), "seed": seed}
    buf.write("# " + " ".join(f"{k}={v}" for k, v in head.items()) + "\n")
    buf.write("step\tcount\tcoordinates\n")
    for step, pts in records:
        coords = ";".join(",".join(repr(float(c)) for c in p) for p in pts)
        buf.write(f"{step}\t{len(pts)}\t{coords}\n")
    return buf.getvalue()


def parse_trajectory(text: str) -> list[tuple[int, np.ndarray]]:
    """Inverse of :func:`format_trajectory`; points come back as ``(count, d)`` arrays."""
    out = []
    d = 1
    for ln in text.splitlines():
        if ln.startswith("#"):
            d = int(dict(kv.split("=", 1) for kv in ln[1:].split()).get("d", d))
    lines = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    for line in lines[1:]:
        step, count, coords = (line.split("\t") + [""])[:3]
        pts = [[float(c) for c in p.split(",")] for p in coords.split(";") if p]
        arr = np.array(pts, dtype=float).reshape(-1, d)
        if len(arr) != int(count):
            raise ValueError(f"count mismatch at step {step}")
        out.append((int(step), arr))
    return out
