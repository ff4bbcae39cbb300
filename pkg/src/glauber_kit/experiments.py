"""Experiment kinds shared by the command line and the acceptance suite.

Every kind returns an :class:`ExperimentResult`: a fixed-column table whose
text rendering depends only on the configuration and the seed, plus a set
of named asserted checks.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .configurations import GridDomain, QuasiObservable, norm_C, random_quasi_observable
from .estimation import (duality_residual, estimate_k, free_case_k1, ruelle_check)
from .operators import (DynamicsParams, apply_L_hat, check_contraction_condition,
                        cutoff_p_n, iterate_finite_volume, iterate_semigroup, l_delta,
                        norm_C_restricted, p_delta_hat, p_delta_split)
from .potential import KINDS, PairPotential
from .simulator import ChainParams, run_replicas

EXPERIMENT_KINDS = ("contraction-suite", "consistency-suite", "semigroup-cauchy",
                    "finite-volume-ladder", "simulator-stats", "duality")

# spawn key of the stream that draws random test observables; replica
# streams use small keys (the replica index), so the two never coincide
_OBSERVABLE_STREAM = 1 << 40


def observable_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_OBSERVABLE_STREAM,)))


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


@dataclass
class ExperimentResult:
    kind: str
    columns: tuple[str, ...]
    rows: list[tuple]
    checks: dict[str, bool]
    details: dict[str, Any] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def rows_text(self) -> str:
        lines = ["\t".join(self.columns)]
        lines += ["\t".join(_fmt(v) for v in row) for row in self.rows]
        return "\n".join(lines) + "\n"

    def summary(self) -> dict:
        return {"kind": self.kind, "passed": self.passed, "rows": len(self.rows),
                "checks": dict(self.checks), "details": _jsonable(self.details)}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


# ------------------------------------------------------------------ config

class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists ``(field path, message)`` pairs."""

    def __init__(self, errors: list[tuple[str, str]]):
        self.errors = errors
        super().__init__("; ".join(f"{p}: {m}" for p, m in errors))


# kind-specific settings and their defaults; physical parameters have none
_EXPERIMENT_DEFAULTS: dict[str, dict] = {
    "contraction-suite": {"n_max": None, "deltas": [0.1, 0.05, 0.025], "observables": 100,
                          "density": 0.3},
    "consistency-suite": {"n_max": None, "deltas": [0.1, 0.05, 0.025], "observables": 100,
                          "density": 0.3, "ratio_window": [0.3, 0.7]},
    "semigroup-cauchy": {"n_max": None, "t": 0.5, "ns": [8, 16, 32, 64], "observables": 100,
                         "density": 0.3, "min_pass": 95},
    "finite-volume-ladder": {"n_max": None, "t": 0.5, "ladder": None, "reference_n": 256,
                             "support": None, "observables": 100, "density": 0.5,
                             "min_pass": 90},
    "simulator-stats": {"z0": None, "steps": None, "periodic": False, "ruelle": None},
    "duality": {"n_max": 6, "z0": None, "m": None, "observables": 5, "density": 0.5,
                "max_order": 2},
}


def _number(cfg: dict, path: str, errors: list, key: str, cast=float):
    if key not in cfg or cfg[key] is None:
        errors.append((path + key, "required"))
        return None
    try:
        return cast(cfg[key])
    except (TypeError, ValueError):
        errors.append((path + key, f"expected a number, got {cfg[key]!r}"))
        return None


def validate_config(raw: dict, seed: int | None = None, replicas: int | None = None,
                    jobs: int | None = None) -> dict:
    """Check a parsed configuration and return its normalized form.

    The normalized config carries every setting explicitly, with the
    contraction-condition margins embedded under ``contraction``.
    Raises :class:`ConfigError` listing every violation.
    """
    errors: list[tuple[str, str]] = []
    if not isinstance(raw, dict):
        raise ConfigError([("", "config must be a mapping")])
    kind = raw.get("kind")
    if kind not in EXPERIMENT_KINDS:
        errors.append(("kind", f"unknown experiment kind {kind!r}; expected one of {list(EXPERIMENT_KINDS)}"))

    dyn = raw.get("dynamics") or {}
    z = _number(dyn, "dynamics.", errors, "z")
    delta = _number(dyn, "dynamics.", errors, "delta")
    C = _number(dyn, "dynamics.", errors, "C")
    if z is not None and not z > 0:
        errors.append(("dynamics.z", "z must be positive"))
    if delta is not None and not 0 < delta < 1:
        errors.append(("dynamics.delta", "delta out of (0,1)"))
    if C is not None and not C > 0:
        errors.append(("dynamics.C", "C must be positive"))
    potential = None
    pot_cfg = dyn.get("potential")
    if pot_cfg is None:
        errors.append(("dynamics.potential", "required"))
    elif not isinstance(pot_cfg, dict) or pot_cfg.get("kind") not in KINDS:
        got = pot_cfg.get("kind") if isinstance(pot_cfg, dict) else pot_cfg
        errors.append(("dynamics.potential.kind", f"unknown potential kind {got!r}"))
    else:
        try:
            potential = PairPotential.from_config(pot_cfg)
        except (TypeError, ValueError) as exc:
            errors.append(("dynamics.potential", str(exc)))

    dom_cfg = raw.get("domain") or {}
    d = _number(dom_cfg, "domain.", errors, "dimension", int)
    L = _number(dom_cfg, "domain.", errors, "side_length")
    h = _number(dom_cfg, "domain.", errors, "spacing")
    domain = None
    if None not in (d, L, h):
        try:
            domain = GridDomain(d, L, h)
        except ValueError as exc:
            errors.append(("domain.spacing" if "L/h" in str(exc) else "domain", str(exc)))

    exp = dict(_EXPERIMENT_DEFAULTS.get(kind, {}))
    user_exp = raw.get("experiment") or {}
    unknown = set(user_exp) - set(exp)
    for key in sorted(unknown):
        errors.append((f"experiment.{key}", "unknown setting"))
    exp.update({k: v for k, v in user_exp.items() if k in exp})
    if kind == "simulator-stats":
        for key in ("z0", "steps"):
            if exp[key] is None:
                errors.append((f"experiment.{key}", "required"))
    if kind == "duality":
        for key in ("z0", "m"):
            if exp[key] is None:
                errors.append((f"experiment.{key}", "required"))
    if kind == "finite-volume-ladder" and exp["ladder"] is None:
        errors.append(("experiment.ladder", "required"))

    out_seed = raw.get("seed", 0) if seed is None else seed
    out_replicas = raw.get("replicas", 1000) if replicas is None else replicas
    out_jobs = raw.get("jobs", 1) if jobs is None else jobs
    for name, val in (("seed", out_seed), ("replicas", out_replicas), ("jobs", out_jobs)):
        if not isinstance(val, int) or isinstance(val, bool) or val < (0 if name == "seed" else 1):
            errors.append((name, f"expected a {'nonnegative' if name == 'seed' else 'positive'} integer"))

    contraction = None
    if None not in (z, C, potential, domain) and z > 0 and C > 0 and not errors:
        rep = check_contraction_condition(z, C, potential, domain.dimension)
        try:
            lat = DynamicsParams(z, delta, C, potential, domain).lattice_condition
        except ValueError as exc:
            errors.append(("dynamics", str(exc)))
            lat = None
        contraction = {"cond_small": rep.cond_small, "cond_verysmall": rep.cond_verysmall,
                       "margin_small": rep.margin_small, "margin_verysmall": rep.margin_verysmall,
                       "c_phi": rep.c_phi}
        if lat is not None:
            contraction.update({"lattice_c_phi": lat.c_phi, "lattice_cond_small": lat.cond_small,
                                "lattice_margin_small": lat.margin_small})
    if errors:
        raise ConfigError(errors)
    return {
        "kind": kind,
        "seed": out_seed,
        "replicas": out_replicas,
        "jobs": out_jobs,
        "dynamics": {"z": z, "delta": delta, "C": C, "potential": potential.to_config()},
        "domain": {"dimension": d, "side_length": L, "spacing": h},
        "experiment": exp,
        "contraction": contraction,
    }


def params_of(cfg: dict) -> DynamicsParams:
    dyn, dom = cfg["dynamics"], cfg["domain"]
    domain = GridDomain(dom["dimension"], dom["side_length"], dom["spacing"])
    return DynamicsParams(dyn["z"], dyn["delta"], dyn["C"],
                          PairPotential.from_config(dyn["potential"]), domain)


# ------------------------------------------------------------- experiments

def _observables(params: DynamicsParams, n_max: int, count: int, density: float,
                 seed: int, max_order: int | None = None) -> list[QuasiObservable]:
    rng = observable_rng(seed)
    out = []
    while len(out) < count:
        G = random_quasi_observable(params.domain, n_max, rng, density, max_order)
        if G.values:
            out.append(G)
    return out


def contraction_suite(params: DynamicsParams, seed: int, n_max: int | None = None,
                      deltas=(0.1, 0.05, 0.025), observables: int = 100,
                      density: float = 0.3) -> ExperimentResult:
    """``||P_hat_delta G||_C <= ||G||_C + eps_trunc`` for random G and each delta."""
    n_max = params.domain.n_sites if n_max is None else n_max
    Gs = _observables(params, n_max, observables, density, seed)
    rows = []
    for delta in deltas:
        p = params.with_delta(delta)
        for i, G in enumerate(Gs):
            before = norm_C(G, p.C)
            PG = p_delta_hat(G, p)
            after = norm_C(PG, p.C)
            ok = after <= before * (1 + 1e-12) + PG.truncation_error
            rows.append((i, delta, before, after, after / before, PG.truncation_error, ok))
    worst = max(r[4] for r in rows)
    return ExperimentResult("contraction-suite",
                            ("observable", "delta", "norm_G", "norm_PG", "ratio", "eps_trunc", "pass"),
                            rows, {"contraction": all(r[-1] for r in rows)},
                            {"worst_ratio": worst, "violations": sum(not r[-1] for r in rows)})


def consistency_suite(params: DynamicsParams, seed: int, n_max: int | None = None,
                      deltas=(0.1, 0.05, 0.025), observables: int = 100, density: float = 0.3,
                      ratio_window=(0.3, 0.7)) -> ExperimentResult:
    """Generator consistency ``||L_delta G - L G||_C <= 3 delta ||G||_2C``,
    the split bound ``||P^(>=2) G||_C <= delta ||G||_2C``, and the first-order
    rate: the median of the error ratio between consecutive deltas."""
    n_max = params.domain.n_sites if n_max is None else n_max
    Gs = _observables(params, n_max, observables, density, seed)
    C = params.C
    LG = [apply_L_hat(G, params) for G in Gs]
    rows = []
    err: dict[tuple[float, int], float] = {}
    for delta in deltas:
        p = params.with_delta(delta)
        for i, G in enumerate(Gs):
            big = norm_C(G, 2 * C)
            cons = norm_C(l_delta(G, p) - LG[i], C)
            split = norm_C(p_delta_split(G, p)[2], C)
            err[delta, i] = cons
            rows.append((i, delta, cons, 3 * delta * big, split, delta * big,
                         cons <= 3 * delta * big, split <= delta * big))
    ratios = [err[b, i] / err[a, i] for a, b in zip(deltas, deltas[1:])
              for i in range(len(Gs)) if err[a, i] > 0]
    median = statistics.median(ratios) if ratios else math.nan
    lo, hi = ratio_window
    checks = {"consistency": all(r[6] for r in rows), "split": all(r[7] for r in rows),
              "first_order": lo <= median <= hi}
    return ExperimentResult("consistency-suite",
                            ("observable", "delta", "consistency_lhs", "consistency_bound",
                             "split_lhs", "split_bound", "consistency_pass", "split_pass"),
                            rows, checks, {"median_ratio": median, "ratio_window": list(ratio_window),
                                           "max_consistency_ratio": max(r[2] / r[3] for r in rows),
                                           "max_split_ratio": max(r[4] / r[5] for r in rows)})


def semigroup_cauchy(params: DynamicsParams, seed: int, n_max: int | None = None, t: float = 0.5,
                     ns=(8, 16, 32, 64), observables: int = 100, density: float = 0.3,
                     min_pass: int = 95) -> ExperimentResult:
    """Refinement differences ``||iterate(G,t,2n) - iterate(G,t,n)||_C`` must
    decrease strictly along ``ns`` for at least ``min_pass`` observables."""
    n_max = params.domain.n_sites if n_max is None else n_max
    Gs = _observables(params, n_max, observables, density, seed)
    rows = []
    for i, G in enumerate(Gs):
        its = [iterate_semigroup(G, t, n, params) for n in ns]
        diffs = [norm_C(b - a, params.C) for a, b in zip(its, its[1:])]
        rows.append((i, *diffs, all(x > y for x, y in zip(diffs, diffs[1:]))))
    n_ok = sum(r[-1] for r in rows)
    cols = ("observable", *(f"diff_{a}_{b}" for a, b in zip(ns, ns[1:])), "strictly_decreasing")
    return ExperimentResult("semigroup-cauchy", cols, rows, {"cauchy": n_ok >= min_pass},
                            {"decreasing": n_ok, "min_pass": min_pass, "t": t, "ns": list(ns)})


def finite_volume_ladder(params: DynamicsParams, seed: int, ladder, n_max: int | None = None,
                         t: float = 0.5, reference_n: int = 256, support=None,
                         observables: int = 100, density: float = 0.5,
                         min_pass: int = 90) -> ExperimentResult:
    """Errors ``||(T_n)^[nt] p_n G - p_n iterate(G,t,reference_n)||_{C,n}`` along
    nested sub-domains must decrease for at least ``min_pass`` observables.

    ``ladder`` is a list of ``{"n": steps per unit time, "sites": [start, stop)}``
    with nested site ranges; ``support`` (a ``[start, stop)`` range) confines the
    random observables, which is how a fixed bounded-support G meets a growing
    volume.
    """
    levels = [(int(lv["n"]), tuple(range(*lv["sites"]))) for lv in ladder]
    for (_, a), (_, b) in zip(levels, levels[1:]):
        if not set(a) <= set(b):
            raise ValueError("ladder sub-domains must be nested")
    n_max = params.domain.n_sites if n_max is None else n_max
    Gs = _observables(params, n_max, observables, density, seed)
    if support is not None:
        Gs = [cutoff_p_n(G, range(*support)) for G in Gs]
    rows = []
    for i, G in enumerate(Gs):
        ref = iterate_semigroup(G, t, reference_n, params)
        errs = [norm_C_restricted(iterate_finite_volume(G, t, n, params, sub) - cutoff_p_n(ref, sub),
                                  params.C, sub) for n, sub in levels]
        rows.append((i, *errs, all(x > y for x, y in zip(errs, errs[1:]))))
    n_ok = sum(r[-1] for r in rows)
    cols = ("observable", *(f"error_n{n}_sites{len(s)}" for n, s in levels), "decreasing")
    return ExperimentResult("finite-volume-ladder", cols, rows, {"ladder": n_ok >= min_pass},
                            {"decreasing": n_ok, "min_pass": min_pass, "reference_n": reference_n})


def simulator_stats(params: DynamicsParams, seed: int, replicas: int, z0: float, steps,
                    periodic: bool = False, ruelle: dict | None = None,
                    jobs: int = 1) -> ExperimentResult:
    """Per-volume mean count of the continuum chain at the recorded steps.

    In the free case each step is compared with the analytic mean within
    3 SE. ``ruelle = {"C": ..., "const": ..., "bins": ...}`` adds Ruelle-bound
    checks of ``k^(1)`` and ``k^(2)`` on the samples at the last step.
    """
    chain = ChainParams.from_dynamics(params, periodic=periodic)
    steps = sorted({int(s) for s in steps})
    samples = run_replicas(chain, seed, replicas, max(steps), z0, record_at=steps, jobs=jobs)
    vol = chain.volume
    free = params.potential.is_zero
    rows, checks = [], {}
    for m in steps:
        dens = np.array([len(s) for s in samples[m]], dtype=float) / vol
        mean = float(dens.mean())
        se = float(dens.std(ddof=1) / math.sqrt(len(dens))) if len(dens) > 1 else 0.0
        if free:
            pred = free_case_k1(z0, params, m)
            ok = abs(mean - pred) <= 3 * se if se > 0 else mean == pred
        else:
            pred, ok = math.nan, True
        rows.append((m, replicas, mean, se, pred, ok))
    if free:
        checks["free_case_mean"] = all(r[-1] for r in rows)
    details: dict[str, Any] = {"z0": z0, "steps": steps, "free_case": free}
    if ruelle is not None:
        last = samples[steps[-1]]
        bins = ruelle.get("bins", 10)
        L = chain.side_length
        for order in (1, 2):
            edges = np.linspace(0.0, L if order == 1 else L / 2, bins + 1)
            est = estimate_k(last, order, edges, L, chain.dimension, periodic)
            rep = ruelle_check(est, ruelle["C"], ruelle.get("const", 1.0))
            checks[f"ruelle_k{order}"] = rep.passed
            details[f"ruelle_k{order}_worst_margin"] = rep.worst_margin
    return ExperimentResult("simulator-stats",
                            ("step", "replicas", "mean_density", "se", "free_prediction", "pass"),
                            rows, checks, details)


def duality(params: DynamicsParams, seed: int, replicas: int, z0: float, m: int,
            n_max: int = 6, observables: int = 5, density: float = 0.5, max_order: int = 2,
            jobs: int = 1) -> ExperimentResult:
    """Simulator expectation of ``KG`` against ``<<(P_hat)^m G, z0^|.|>>``.

    One set of replicas is shared by all test observables.
    """
    chain = ChainParams.from_dynamics(params)
    samples = run_replicas(chain, seed, replicas, m, z0, jobs=jobs)[m]
    Gs = _observables(params, n_max, observables, density, seed, max_order)
    rows = []
    for i, G in enumerate(Gs):
        r = duality_residual(G, z0, m, params, replicas, seed, samples=samples)
        rows.append((i, r.empirical, r.standard_error, r.deterministic, r.residual,
                     r.terms["sampling"], r.terms["discretization"], r.terms["truncation"],
                     r.terms["c_h"], r.tolerance, r.passed))
    return ExperimentResult("duality",
                            ("observable", "empirical", "se", "deterministic", "residual",
                             "sampling_term", "discretization_term", "truncation_term", "c_h",
                             "tolerance", "pass"),
                            rows, {"duality": all(r[-1] for r in rows)},
                            {"z0": z0, "m": m, "replicas": replicas,
                             "worst_residual_over_tolerance": max(r[4] / r[9] for r in rows)})


_RUNNERS: dict[str, Callable[..., ExperimentResult]] = {
    "contraction-suite": contraction_suite,
    "consistency-suite": consistency_suite,
    "semigroup-cauchy": semigroup_cauchy,
    "finite-volume-ladder": finite_volume_ladder,
    "simulator-stats": simulator_stats,
    "duality": duality,
}


def run_experiment(cfg: dict) -> ExperimentResult:
    """Dispatch a normalized config (see :func:`validate_config`)."""
    kind = cfg["kind"]
    if kind not in _RUNNERS:
        raise ValueError(f"unknown experiment kind {kind!r}")
    params = params_of(cfg)
    kwargs = dict(cfg["experiment"])
    if kind in ("simulator-stats", "duality"):
        kwargs.update(replicas=cfg["replicas"], jobs=cfg["jobs"])
    return _RUNNERS[kind](params, cfg["seed"], **kwargs)
