"""Statistical verification of the projected-gradient view of noise stability.

Checks cover: the unit-sphere second moment E[u u^T] = I/n; the identity
between the expected squared embedding norm and the squared Jacobian Frobenius
norm; the distance and inner-product equivalences between embeddings and
parameter gradients; Monte Carlo concentration trials for the magnitude,
distance, and normalized inner-product bounds; and a sweep measuring how the
required sampling count K grows with pool size.

Every check is deterministic per seed and returns a machine-readable
CheckReport. The absolute constants in the concentration bounds are unknown,
so pass thresholds are empirically calibrated, not theoretical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .stability import NoiseConfig, embedding, perturbation_set, sample_directions

DENOM_FLOOR = 1e-12
CONCENTRATION_BOUND_FORM = "1 - 2*exp(-c*eps^2*K), c unknown"

# default pass thresholds; tests may patch these to force failure paths
DEFAULT_THRESHOLDS = {
    "second_moment": 0.1,
    "second_moment_trace": 1e-12,
    "jacobian_norm": 0.05,
    "distance": 0.05,
    "inner_product": 0.05,
    "concentration": 0.05,
    "concentration_monotonic": -1e-12,
    "efficiency_ratio": 32.0,
}


@dataclass
class CheckReport:
    name: str
    trials: int
    statistic: float
    threshold: float
    passed: bool
    seed: int
    details: dict = field(default_factory=dict)

    @classmethod
    def make(cls, name, trials, statistic, threshold, seed, **details):
        return cls(name=name, trials=int(trials), statistic=float(statistic),
                   threshold=float(threshold),
                   passed=bool(statistic <= threshold), seed=int(seed),
                   details=details)

    def to_json(self) -> str:
        doc = {
            "name": self.name,
            "trials": self.trials,
            "statistic": self.statistic,
            "threshold": self.threshold,
            "passed": self.passed,
            "seed": self.seed,
        }
        if self.details:
            doc["details"] = self.details
        return json.dumps(doc)


def second_moment_matrix(n, samplings, seed) -> np.ndarray:
    """Empirical (1/K) sum of u u^T over K sampled unit directions."""
    u = sample_directions(n, samplings, seed).directions
    return (u.T @ u) / samplings


def check_second_moment(n, samplings, seed, threshold=None) -> CheckReport:
    """Relative Frobenius error of the empirical second moment against I/n."""
    if n < 2:
        raise ValueError("second-moment check needs n >= 2")
    if threshold is None:
        threshold = DEFAULT_THRESHOLDS["second_moment"]
    m = second_moment_matrix(n, samplings, seed)
    target = np.eye(n) / n
    stat = np.linalg.norm(m - target) / np.linalg.norm(target)
    return CheckReport.make("second_moment", samplings, stat, threshold, seed,
                            n=n, trace=float(np.trace(m)))


def check_second_moment_trace(n, samplings, seed, threshold=None) -> CheckReport:
    """Each u u^T has unit trace, so the empirical diagonal sums to 1 exactly
    up to rounding, for any K."""
    if threshold is None:
        threshold = DEFAULT_THRESHOLDS["second_moment_trace"]
    m = second_moment_matrix(n, samplings, seed)
    stat = abs(float(np.trace(m)) - 1.0)
    return CheckReport.make("second_moment_trace", samplings, stat, threshold, seed, n=n)


def check_jacobian_norm(model, x, samplings, seed, zeta=1e-4,
                        tap=nn.TAP_FEATURE, threshold=None) -> CheckReport:
    """Squared embedding norm against the squared Jacobian Frobenius norm.

    The embedding side goes through the actual network (apply noise, forward,
    restore), so a small zeta keeps the Taylor remainder below the Monte Carlo
    noise floor; the Jacobian side is analytic backprop.
    """
    if threshold is None:
        threshold = DEFAULT_THRESHOLDS["jacobian_norm"]
    cfg = NoiseConfig(zeta=zeta, samplings=samplings, seed=seed, tap=tap)
    jac = nn.jacobian(model, x, tap=cfg.tap, scope=cfg.scope)
    frob2 = float(np.sum(jac * jac))
    if frob2 == 0.0:
        return CheckReport.make("jacobian_norm", samplings, 0.0, threshold, seed,
                                degenerate=True)
    emb = embedding(model, np.asarray(x, dtype=np.float64), perturbation_set(model, cfg))
    emb_norm2 = float(emb.vector @ emb.vector)
    stat = abs(emb_norm2 - frob2) / frob2
    return CheckReport.make("jacobian_norm", samplings, stat, threshold, seed,
                            embedding_norm2=emb_norm2, jacobian_frob2=frob2)


def _pair_embeddings(model, x_i, x_j, samplings, seed, zeta, tap):
    cfg = NoiseConfig(zeta=zeta, samplings=samplings, seed=seed, tap=tap)
    pset = perturbation_set(model, cfg)
    e_i = embedding(model, np.asarray(x_i, dtype=np.float64), pset)
    e_j = embedding(model, np.asarray(x_j, dtype=np.float64), pset)
    j_i = nn.jacobian(model, x_i, tap=cfg.tap, scope=cfg.scope)
    j_j = nn.jacobian(model, x_j, tap=cfg.tap, scope=cfg.scope)
    return e_i, e_j, j_i, j_j


def check_distance_equivalence(model, x_i, x_j, samplings, seed, zeta=1e-4,
                               tap=nn.TAP_FEATURE, threshold=None) -> CheckReport:
    """Squared embedding distance against squared gradient distance.

    Stated for a scalar tap; a vector-valued tap is handled coordinate-wise
    and summed, which the shared-direction construction makes exact.
    """
    if threshold is None:
        threshold = DEFAULT_THRESHOLDS["distance"]
    e_i, e_j, j_i, j_j = _pair_embeddings(model, x_i, x_j, samplings, seed, zeta, tap)
    lhs = float(np.sum((e_i.vector - e_j.vector) ** 2))
    rhs = float(np.sum((j_i - j_j) ** 2))
    stat = abs(lhs - rhs) / max(rhs, DENOM_FLOOR)
    return CheckReport.make("distance_equivalence", samplings, stat, threshold, seed,
                            projected=lhs, gradient=rhs)


def check_inner_product_equivalence(model, x_i, x_j, samplings, seed, zeta=1e-4,
                                    tap=nn.TAP_FEATURE, threshold=None) -> CheckReport:
    """Embedding inner product against gradient inner product, relative to the
    product of gradient norms."""
    if threshold is None:
        threshold = DEFAULT_THRESHOLDS["inner_product"]
    e_i, e_j, j_i, j_j = _pair_embeddings(model, x_i, x_j, samplings, seed, zeta, tap)
    lhs = float(e_i.vector @ e_j.vector)
    rhs = float(np.sum(j_i * j_j))
    denom = float(np.linalg.norm(j_i) * np.linalg.norm(j_j))
    stat = abs(lhs - rhs) / max(denom, DENOM_FLOOR)
    return CheckReport.make("inner_product_equivalence", samplings, stat, threshold,
                            seed, projected=lhs, gradient=rhs)


def _projection_matrix(n, samplings, rng_k) -> np.ndarray:
    """Scale-preserved random projection: rows are sqrt(n/K) u^T."""
    t = rng_k.standard_normal((samplings, n))
    t /= np.linalg.norm(t, axis=1, keepdims=True)
    return np.sqrt(n / samplings) * t


def _trial_rng(seed, trial):
    return np.random.Generator(np.random.PCG64(
        np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(trial)])))


def failure_fraction(kind, n, samplings, epsilon, trials, seed) -> float:
    """Fraction of independent trials violating the stated concentration bound.

    Each trial draws fresh gradient vectors and a fresh projection; trials use
    derived per-trial streams, so the result is schedule-independent.
    """
    if kind not in ("magnitude", "distance", "inner_product"):
        raise ValueError(f"unknown concentration kind {kind!r}")
    if not 0.0 < epsilon < 1.0 and kind == "inner_product":
        raise ValueError("inner_product bound needs epsilon in (0, 1)")
    if epsilon <= 0.0:
        raise ValueError("epsilon must be positive")
    violations = 0
    for t in range(trials):
        gen = _trial_rng(seed, t)
        q = _projection_matrix(n, samplings, gen)
        if kind == "magnitude":
            g = gen.standard_normal(n)
            z = q @ g
            violations += abs(np.linalg.norm(z) - np.linalg.norm(g)) > epsilon * np.linalg.norm(g)
        elif kind == "distance":
            g_i = gen.standard_normal(n)
            g_j = gen.standard_normal(n)
            diff = g_i - g_j
            z = q @ diff
            violations += abs(np.linalg.norm(z) - np.linalg.norm(diff)) > epsilon * np.linalg.norm(diff)
        else:
            g_i = gen.standard_normal(n)
            g_j = gen.standard_normal(n)
            gh_i = g_i / np.linalg.norm(g_i)
            gh_j = g_j / np.linalg.norm(g_j)
            z_i = q @ gh_i
            z_j = q @ gh_j
            cos_hat = float(z_i @ z_j / (np.linalg.norm(z_i) * np.linalg.norm(z_j)))
            cos_true = float(gh_i @ gh_j)
            lo = (cos_true - epsilon) / (1.0 + epsilon) ** 2
            hi = (cos_true + epsilon) / (1.0 - epsilon) ** 2
            violations += cos_hat < lo or cos_hat > hi
    return violations / trials


def network_failure_fraction(model, x_pool, samplings, epsilon, trials, seed,
                             zeta=1e-4, tap=nn.TAP_FEATURE) -> float:
    """End-to-end cross-check of the magnitude bound: deviations come from the
    real network instead of a simulated projection, one input per trial."""
    cfg_scope = NoiseConfig(zeta=zeta, samplings=samplings, seed=seed, tap=tap).scope
    x_pool = np.asarray(x_pool, dtype=np.float64)
    violations = 0
    for t in range(trials):
        x = x_pool[t % x_pool.shape[0]]
        cfg = NoiseConfig(zeta=zeta, samplings=samplings,
                          seed=int(_trial_rng(seed, t).integers(2**62)), tap=tap)
        jac = nn.jacobian(model, x, tap=tap, scope=cfg_scope)
        grad_norm = float(np.linalg.norm(jac))
        if grad_norm == 0.0:
            continue
        emb = embedding(model, x, perturbation_set(model, cfg))
        violations += abs(float(np.linalg.norm(emb.vector)) - grad_norm) > epsilon * grad_norm
    return violations / trials


def concentration_trial(kind, n, samplings, epsilon, trials, seed,
                        threshold=None) -> CheckReport:
    """CheckReport wrapper around failure_fraction for one bound kind."""
    if threshold is None:
        threshold = DEFAULT_THRESHOLDS["concentration"]
    frac = failure_fraction(kind, n, samplings, epsilon, trials, seed)
    return CheckReport.make(f"concentration_{kind}", trials, frac, threshold, seed,
                            n=n, samplings=samplings, epsilon=epsilon,
                            bound_form=CONCENTRATION_BOUND_FORM)


def concentration_monotonicity(kind, n, samplings_grid, epsilon, trials, seeds,
                               threshold=None) -> CheckReport:
    """Mean failure fraction must strictly decrease along a doubling K grid.

    The grid should sit where failures are non-degenerate (strictly positive),
    otherwise consecutive zeros cannot strictly decrease. The statistic is the
    worst consecutive difference; negative means monotone decrease.
    """
    if threshold is None:
        threshold = DEFAULT_THRESHOLDS["concentration_monotonic"]
    means = []
    for k in samplings_grid:
        fracs = [failure_fraction(kind, n, k, epsilon, trials, s) for s in seeds]
        means.append(float(np.mean(fracs)))
    deltas = np.diff(means)
    stat = float(deltas.max()) if deltas.size else 0.0
    return CheckReport.make(f"concentration_monotonic_{kind}", trials * len(seeds),
                            stat, threshold, seeds[0], samplings_grid=list(samplings_grid),
                            epsilon=epsilon, mean_fractions=means)


def _simultaneous_failure(n, pool_size, samplings, epsilon, trials, seed) -> float:
    """Fraction of trials in which any of ``pool_size`` gradient vectors
    violates the magnitude bound under one shared projection."""
    failures = 0
    for t in range(trials):
        gen = _trial_rng(seed, t)
        q = _projection_matrix(n, samplings, gen)
        g = gen.standard_normal((pool_size, n))
        z = g @ q.T
        g_norm = np.linalg.norm(g, axis=1)
        z_norm = np.linalg.norm(z, axis=1)
        failures += bool(np.any(np.abs(z_norm - g_norm) > epsilon * g_norm))
    return failures / trials


def sampling_efficiency_sweep(n, pool_sizes, epsilon, seed, target=0.05,
                              trials=200):
    """Smallest K keeping the simultaneous failure probability below target,
    per pool size.

    Each pool size's search is warm-started at the previous answer (the union
    bound makes the requirement monotone in N), then doubled until passing and
    bisected. Per-(N, K) evaluations use derived seeds, so the whole table is
    deterministic. Returns a list of {"pool_size", "required_samplings"} rows;
    sub-linear growth shows as K ratios far below pool-size ratios.
    """
    table = []
    floor_k = 1
    for pool_size in pool_sizes:
        def fails(k):
            eval_seed = np.random.SeedSequence(
                [int(seed) & 0xFFFFFFFFFFFFFFFF, int(pool_size), int(k)]
            ).generate_state(1)[0]
            return _simultaneous_failure(n, pool_size, k, epsilon, trials,
                                         int(eval_seed)) >= target

        lo = floor_k  # highest K known (or assumed) to fail, minus one step
        hi = max(floor_k, 1)
        while fails(hi):
            lo = hi
            hi *= 2
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if fails(mid):
                lo = mid
            else:
                hi = mid
        table.append({"pool_size": int(pool_size), "required_samplings": int(hi)})
        floor_k = hi
    return table


def efficiency_report(n, pool_sizes, epsilon, seed, target=0.05, trials=200,
                      threshold=None) -> CheckReport:
    """Summary report: K growth ratio across the sweep against the pool-size
    ratio (sub-linear growth passes)."""
    if threshold is None:
        threshold = DEFAULT_THRESHOLDS["efficiency_ratio"]
    table = sampling_efficiency_sweep(n, pool_sizes, epsilon, seed,
                                      target=target, trials=trials)
    k_first = table[0]["required_samplings"]
    k_last = table[-1]["required_samplings"]
    stat = k_last / max(k_first, 1)
    return CheckReport.make("sampling_efficiency", trials, stat, threshold, seed,
                            table=table, epsilon=epsilon,
                            pool_ratio=pool_sizes[-1] / pool_sizes[0])
