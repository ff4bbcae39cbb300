import math

import numpy as np
import pytest
from scipy import stats

from glauber_kit.configurations import GridDomain, PointConfiguration, QuasiObservable
from glauber_kit.estimation import kg_of_sample
from glauber_kit.k_transform import k_transform
from glauber_kit.operators import DynamicsParams, p_delta_observable
from glauber_kit.potential import PairPotential
from glauber_kit.simulator import (ChainParams, ChainState, RngSpec, _collisions, acceptance,
                                   birth_step, chain_step, death_step, format_trajectory,
                                   parse_trajectory, run_chain, run_replicas,
                                   sample_poisson_initial)

FREE = ChainParams(0.5, 0.05, PairPotential.zero(), 10.0)


def _pc(xs, L=1.0):
    return PointConfiguration(np.asarray(xs, dtype=float).reshape(-1, 1), L)


def test_rng_streams_reproducible_and_distinct():
    a = RngSpec(42, 3).generator().random(5)
    b = RngSpec(42, 3).generator().random(5)
    c = RngSpec(42, 4).generator().random(5)
    d = RngSpec(43, 3).generator().random(5)
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)


def test_chain_params_validation():
    with pytest.raises(ValueError, match="delta out of"):
        ChainParams(0.5, 1.0, PairPotential.zero(), 1.0)
    with pytest.raises(ValueError):
        ChainParams(-0.5, 0.5, PairPotential.zero(), 1.0)


def test_poisson_initial_empty_at_zero_intensity():
    rng = RngSpec(1).generator()
    assert all(len(sample_poisson_initial(0.0, 10.0, 1, rng)) == 0 for _ in range(100))


def test_poisson_initial_mean_and_distribution():
    rng = RngSpec(2).generator()
    counts = np.array([len(sample_poisson_initial(0.5, 10.0, 1, rng)) for _ in range(10_000)])
    se = counts.std(ddof=1) / 100
    assert abs(counts.mean() - 5.0) <= 3 * se
    # chi-square goodness of fit against Poisson(5), tail lumped
    k = np.arange(12)
    observed = np.array([np.sum(counts == i) for i in k[:-1]] + [np.sum(counts >= 11)])
    expected = np.append(stats.poisson.pmf(k[:-1], 5.0), stats.poisson.sf(10, 5.0)) * len(counts)
    assert stats.chisquare(observed, expected).pvalue > 0.01


def test_poisson_initial_inside_box_2d():
    rng = RngSpec(3).generator()
    pc = sample_poisson_initial(20.0, 2.0, 2, rng)
    assert pc.points.shape[1] == 2
    assert np.all((pc.points >= 0) & (pc.points < 2.0))


def test_death_step_binomial_mean():
    rng = RngSpec(4).generator()
    gamma = _pc(np.linspace(0.0, 0.99, 100))
    survivors = np.array([len(death_step(gamma, 0.1, rng)) for _ in range(10_000)])
    assert abs(survivors.mean() - 90) <= 3 * survivors.std(ddof=1) / 100


def test_death_step_keeps_coordinates_and_empty():
    rng = RngSpec(5).generator()
    gamma = _pc([0.1, 0.2, 0.3])
    out = death_step(gamma, 0.5, rng)
    assert set(out.points[:, 0]) <= {0.1, 0.2, 0.3}
    assert len(death_step(_pc([]), 0.5, rng)) == 0


def test_death_step_exchangeable():
    rng = RngSpec(6).generator()
    xs = np.linspace(0.05, 0.95, 10)
    gamma = _pc(xs)
    hits = np.zeros(10)
    for _ in range(10_000):
        kept = death_step(gamma, 0.3, rng).points[:, 0]
        hits += np.isin(xs, kept)
    assert stats.chisquare(hits).pvalue > 0.01


def test_birth_step_free_mean():
    rng = RngSpec(7).generator()
    empty = _pc([], 10.0)
    births = np.array([len(birth_step(empty, FREE, rng)) for _ in range(100_000)])
    assert abs(births.mean() - 0.25) <= 3 * births.std(ddof=1) / math.sqrt(len(births))


def test_birth_step_hard_core_blocks():
    hard = ChainParams(5.0, 0.5, PairPotential.truncated_constant(math.inf, 0.2), 1.0)
    gamma = _pc([0.1, 0.3, 0.5])
    rng = RngSpec(8).generator()
    for _ in range(10_000):
        born = birth_step(gamma, hard, rng).points[:, 0]
        assert np.all(born > 0.7)


def test_birth_intensity_profile():
    # frozen gamma: births per bin should follow z delta int_bin e^{-E}
    phi = PairPotential.truncated_constant(1.0, 0.15)
    params = ChainParams(4.0, 0.5, phi, 1.0)
    gamma = _pc([0.3, 0.4])
    rng = RngSpec(9).generator()
    edges = np.linspace(0, 1, 11)
    counts = np.zeros(10)
    trials = 20_000
    for _ in range(trials):
        counts += np.histogram(birth_step(gamma, params, rng).points[:, 0], edges)[0]
    fine = (np.arange(100_000) + 0.5) / 100_000
    weight = np.exp(-np.sum(phi(fine[:, None, None] - gamma.points[None]), axis=1))
    expected = np.array([weight[(fine >= a) & (fine < b)].sum() for a, b in zip(edges, edges[1:])])
    expected *= params.z * params.delta * trials / len(fine)
    assert stats.chisquare(counts, expected * counts.sum() / expected.sum()).pvalue > 0.01
    assert counts.sum() == pytest.approx(expected.sum(), rel=0.02)


def test_acceptance_monotone_blocking(rng):
    phi = PairPotential.gaussian(1.0, 0.1)
    params = ChainParams(1.0, 0.5, phi, 1.0)
    cands = rng.random((50, 1))
    gamma = rng.random((5, 1))
    base = acceptance(cands, gamma, params)
    more = acceptance(cands, np.vstack([gamma, rng.random((1, 1))]), params)
    assert np.all(more <= base)
    assert np.all((base >= 0) & (base <= 1))


def test_collision_detection():
    pts = np.array([[0.1], [0.2], [0.1], [0.3], [0.3]])
    assert list(_collisions(pts, 2)) == [0, 2]
    assert list(_collisions(pts[:2], 2)) == []


def test_chain_step_increments_and_stays_in_box():
    rng = RngSpec(10).generator()
    state = ChainState(_pc([0.5], 10.0), 0, rng)
    for i in range(50):
        state = chain_step(state, FREE)
        assert state.step_index == i + 1
        assert np.all((state.configuration.points >= 0) & (state.configuration.points < 10.0))


def test_void_probability_one_step():
    params = ChainParams(0.5, 0.05, PairPotential.zero(), 10.0)
    rng = RngSpec(11).generator()
    empty = 0
    trials = 20_000
    for _ in range(trials):
        empty += len(chain_step(ChainState(_pc([], 10.0), 0, rng), params).configuration) == 0
    p = math.exp(-0.25)
    assert abs(empty / trials - p) <= 3 * math.sqrt(p * (1 - p) / trials)


def test_free_mean_recursion():
    out = run_replicas(FREE, 12, 10_000, 30, 2.0, record_at=range(31))
    means = {m: np.mean([len(s) for s in v]) for m, v in out.items()}
    for m in (0, 10, 29):
        counts = np.array([len(s) for s in out[m + 1]])
        pred = (1 - FREE.delta) * means[m] + FREE.z * FREE.delta * FREE.volume
        assert abs(counts.mean() - pred) <= 3 * counts.std(ddof=1) / 100


def test_free_equilibrium_count():
    out = run_replicas(FREE, 13, 4_000, 120, 0.0)
    counts = np.array([len(s) for s in out[120]])
    target = FREE.z * FREE.volume * (1 - (1 - FREE.delta) ** 120)
    assert abs(counts.mean() - target) <= 3 * counts.std(ddof=1) / math.sqrt(len(counts))


def test_run_chain_zero_steps_and_reproducibility():
    init = ChainState(_pc([0.3, 0.7], 10.0), 0, RngSpec(14).generator())
    summary = run_chain(init, 0, FREE)
    assert summary.final is init.configuration and summary.counts == [2]
    runs = []
    for _ in range(2):
        st = ChainState(_pc([0.3, 0.7], 10.0), 0, RngSpec(15, 2).generator())
        runs.append(run_chain(st, 40, FREE, keep=True))
    assert runs[0].counts == runs[1].counts
    assert all(np.array_equal(a[1], b[1]) for a, b in zip(runs[0].recorded, runs[1].recorded))


def test_run_chain_recorder_and_thinning():
    seen = []
    st = ChainState(_pc([], 10.0), 0, RngSpec(16).generator())
    summary = run_chain(st, 10, FREE, recorder=lambda s: seen.append(s.step_index), thin=5, keep=True)
    assert seen == [0, 5, 10]
    assert [s for s, _ in summary.recorded] == [0, 5, 10]
    assert len(summary.counts) == 11
    with pytest.raises(ValueError):
        run_chain(st, -1, FREE)


def test_rng_state_is_serializable():
    st = ChainState(_pc([], 10.0), 0, RngSpec(17).generator())
    state = st.rng_state
    assert state["bit_generator"] == "PCG64"


def test_replicas_independent_of_jobs():
    a = run_replicas(FREE, 18, 12, 15, 0.5, record_at=[5, 15], jobs=1)
    b = run_replicas(FREE, 18, 12, 15, 0.5, record_at=[5, 15], jobs=3)
    for m in (5, 15):
        assert all(np.array_equal(x, y) for x, y in zip(a[m], b[m]))


def test_trajectory_round_trip():
    st = ChainState(_pc([], 10.0), 0, RngSpec(19).generator())
    summary = run_chain(st, 20, FREE, keep=True, thin=4)
    text = format_trajectory(summary.recorded, FREE, seed=19)
    assert text.startswith("# z=0.5 delta=0.05 L=10.0 d=1 potential=zero")
    back = parse_trajectory(text)
    assert [s for s, _ in back] == [s for s, _ in summary.recorded]
    for (_, a), (_, b) in zip(back, summary.recorded):
        assert a.shape == b.reshape(-1, 1).shape and np.array_equal(a, b)


def test_trajectory_count_mismatch():
    with pytest.raises(ValueError):
        parse_trajectory("# d=1\nstep\tcount\tcoordinates\n0\t2\t0.5\n")


def test_transition_matches_continuum_and_lattice():
    # one step from a frozen gamma_0 at cell centers; G lives on singletons
    dom = GridDomain(1, 1.0, 0.125)
    phi = PairPotential.truncated_constant(1.0, 0.25)
    params = DynamicsParams(0.5, 0.5, 1.0, phi, dom)
    chain = ChainParams.from_dynamics(params)
    gamma0 = (1, 4)
    pts = dom.coordinates(gamma0)
    g = np.linspace(-1.0, 1.0, 8)
    G = QuasiObservable(dom, 1, {(s,): g[s] for s in range(8)})

    rng = RngSpec(20).generator()
    trials = 40_000
    vals = np.empty(trials)
    for i in range(trials):
        st = chain_step(ChainState(PointConfiguration(pts, 1.0), 0, rng), chain)
        vals[i] = kg_of_sample(G, st.configuration.points)
    emp, se = vals.mean(), vals.std(ddof=1) / math.sqrt(trials)

    # exact continuum expectation: survivors plus births integrated cell by cell
    fine = (np.arange(80_000) + 0.5) / 80_000
    boltz = np.exp(-np.sum(phi(fine[:, None, None] - pts[None]), axis=1))
    cell_int = np.array([boltz[dom.cell_of(fine[:, None]) == s].mean() * 0.125 for s in range(8)])
    z, d = params.z, params.delta
    continuum = (1 - d) * g[list(gamma0)].sum() + z * d * float(g @ cell_int)
    assert abs(emp - continuum) <= 3 * se

    lattice = p_delta_observable(k_transform(G, 8), gamma0, params)
    discretization = abs(lattice - continuum)
    # O(h) gap: births at cell centers and none on occupied cells
    assert discretization <= z * d * 0.125 * np.abs(g).sum()
    assert abs(emp - lattice) <= 3 * se + discretization
