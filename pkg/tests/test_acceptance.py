"""Acceptance suite: one test per criterion, each printing a pass/fail line."""

import time
from pathlib import Path

import numpy as np
import pytest
import yaml

from glauber_kit import cli
from glauber_kit.configurations import GridDomain, enumerate_configurations, random_quasi_observable
from glauber_kit.estimation import free_case_k1
from glauber_kit.experiments import params_of, run_experiment, simulator_stats, validate_config
from glauber_kit.k_transform import k_inverse, k_inverse_transform, k_transform, minlos_check
from glauber_kit.operators import DynamicsParams, p_delta_hat_volume, p_delta_observable_all
from glauber_kit.potential import PairPotential

CONFIGS = Path(__file__).parent.parent / "configs"


def _config(kind: str) -> dict:
    return validate_config(yaml.safe_load((CONFIGS / f"{kind}.yaml").read_text()))


@pytest.fixture(scope="module")
def consistency():
    t0 = time.perf_counter()
    res = run_experiment(_config("consistency-suite"))
    return res, time.perf_counter() - t0


def test_criterion_1_k_round_trip(criterion):
    rng = np.random.default_rng(1)
    t0 = time.perf_counter()
    worst = 0.0
    for n_sites in range(1, 11):
        dom = GridDomain(1, n_sites * 0.125, 0.125)
        configs = enumerate_configurations(dom, n_sites)
        for _ in range(3):
            G = random_quasi_observable(dom, n_sites, rng, 1.0)
            back = k_inverse_transform(k_transform(G))
            worst = max(worst, max(abs(back[c] - G[c]) for c in configs))
    dom = GridDomain(1, 1.25, 0.125)
    configs = enumerate_configurations(dom, 10)
    for _ in range(100):
        G = random_quasi_observable(dom, 10, rng, 0.02)
        back = k_inverse_transform(k_transform(G))
        worst = max(worst, max(abs(back[c] - G[c]) for c in configs))
    elapsed = time.perf_counter() - t0
    criterion(1, worst <= 1e-12 and elapsed < 10, f"max error {worst:.2e}, {elapsed:.1f}s")


def test_criterion_2_minlos(criterion):
    rng = np.random.default_rng(2)
    dom = GridDomain(1, 0.75, 0.125)
    configs = enumerate_configurations(dom, 6)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(50):
        # an arbitrary function of the three arguments, tabulated at random
        a, b, c = ({cfg: rng.normal() for cfg in configs} for _ in range(3))
        def H(xi, eta, zeta, a=a, b=b, c=c):
            return a[xi] * b[tuple(sorted(eta))] + c[zeta] * len(xi)

        lhs, rhs = minlos_check(H, dom, 4)
        worst = max(worst, abs(lhs - rhs))
    elapsed = time.perf_counter() - t0
    criterion(2, worst <= 1e-12 and elapsed < 30, f"max |lhs - rhs| {worst:.2e}, {elapsed:.1f}s")


def test_criterion_3_contraction(criterion):
    cfg = _config("contraction-suite")
    assert cfg["contraction"]["cond_small"]
    t0 = time.perf_counter()
    res = run_experiment(cfg)
    elapsed = time.perf_counter() - t0
    ok = res.passed and res.details["violations"] == 0 and len(res.rows) == 300 and elapsed < 120
    criterion(3, ok, f"worst ratio {res.details['worst_ratio']:.4f}, "
                     f"{res.details['violations']} violations, {elapsed:.1f}s")


def test_criterion_4_generator_consistency(criterion, consistency):
    res, elapsed = consistency
    ok = res.checks["consistency"] and res.checks["first_order"] and elapsed < 120
    criterion(4, ok, f"max lhs/bound {res.details['max_consistency_ratio']:.3f}, "
                     f"median ratio {res.details['median_ratio']:.3f}, {elapsed:.1f}s")


def test_criterion_5_split_bound(criterion, consistency):
    res, _ = consistency
    violations = sum(not r[7] for r in res.rows)
    criterion(5, res.checks["split"] and violations == 0,
              f"max lhs/bound {res.details['max_split_ratio']:.4f}, {violations} violations")


def test_criterion_6_conjugation(criterion):
    rng = np.random.default_rng(6)
    dom = GridDomain(1, 0.75, 0.125)
    worst = 0.0
    for phi in (PairPotential.truncated_constant(1.0, 0.25), PairPotential.gaussian(1.0, 0.2)):
        params = DynamicsParams(0.5, 0.1, 1.0, phi, dom)
        for _ in range(3):
            G = random_quasi_observable(dom, 6, rng, 0.5)
            PF = p_delta_observable_all(k_transform(G), params)
            for eta in enumerate_configurations(dom, 3):
                worst = max(worst, abs(p_delta_hat_volume(G, eta, params) - k_inverse(PF, eta)))
    criterion(6, worst <= 1e-10, f"max error {worst:.2e}")


def test_criterion_7_semigroup_cauchy(criterion):
    cfg = _config("semigroup-cauchy")
    res = run_experiment(cfg)
    n_ok = res.details["decreasing"]
    criterion(7, n_ok >= 95 and len(res.rows) == 100,
              f"{n_ok}/100 strictly decreasing over n in {res.details['ns']}")


def test_criterion_8_finite_volume_ladder(criterion):
    res = run_experiment(_config("finite-volume-ladder"))
    n_ok = res.details["decreasing"]
    criterion(8, n_ok >= 90 and len(res.rows) == 100, f"{n_ok}/100 decreasing")


def test_criterion_9_free_simulator(criterion):
    cfg = _config("simulator-stats")
    assert cfg["replicas"] == 10_000 and cfg["experiment"]["z0"] == 0.2
    t0 = time.perf_counter()
    res = run_experiment(cfg)
    elapsed = time.perf_counter() - t0
    params = params_of(cfg)
    rows = {r[0]: r for r in res.rows}
    parts, ok = [], elapsed < 120
    for m in (10, 50, 100):
        _, _, mean, se, pred, _ = rows[m]
        assert pred == pytest.approx(free_case_k1(0.2, params, m))
        ok &= abs(mean - pred) <= 3 * se
        parts.append(f"m={m}: {(mean - pred) / se:+.2f} SE")
    criterion(9, ok, ", ".join(parts) + f", {elapsed:.1f}s")


def test_criterion_10_duality(criterion):
    cfg = _config("duality")
    assert cfg["replicas"] == 10_000 and cfg["experiment"]["m"] == 20
    t0 = time.perf_counter()
    res = run_experiment(cfg)
    elapsed = time.perf_counter() - t0
    ok = res.passed and elapsed < 600
    criterion(10, ok, f"{sum(r[-1] for r in res.rows)}/{len(res.rows)} observables, worst "
                      f"residual/tolerance {res.details['worst_residual_over_tolerance']:.3f}, "
                      f"{elapsed:.1f}s")


def test_criterion_11_ruelle(criterion):
    # the free chain started from Poisson(z) is stationary
    z = 0.5
    params = DynamicsParams(z, 0.05, 1.0, PairPotential.zero(), GridDomain(1, 10.0, 1.0))
    res = simulator_stats(params, 111, 4_000, z, [100], ruelle={"C": z, "const": 1.0})
    ok = res.checks["ruelle_k1"] and res.checks["ruelle_k2"]
    criterion(11, ok, f"worst margin k1 {res.details['ruelle_k1_worst_margin']:.4f}, "
                      f"k2 {res.details['ruelle_k2_worst_margin']:.4f}")


def test_criterion_12_reproducibility(criterion, tmp_path):
    same = []
    for kind in ("contraction-suite", "simulator-stats", "duality"):
        rows = []
        for run in ("a", "b"):
            out = tmp_path / kind / run
            assert cli.main(["run", "--config", str(CONFIGS / f"{kind}.yaml"), "--out", str(out)]) == 0
            rows.append((out / "rows.tsv").read_bytes())
        same.append(rows[0] == rows[1])
    criterion(12, all(same), "byte-identical rows for " + ", ".join(
        f"{k}={'yes' if s else 'no'}" for k, s in zip(("3", "9", "10"), same)))
