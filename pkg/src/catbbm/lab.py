"""Replicate orchestration and statistical verification.

Runs ensembles of independent replicates (optionally across processes),
compares Monte Carlo estimates against the closed-form oracles and bounds,
tests the many-to-one identity three ways, checks the martingale property,
and studies the limit law and the fluctuation trends of the rightmost
particle.  Every report is reproducible bit-exactly from (config, n):
replicates draw from streams keyed by (seed, replicate index), so results
do not depend on scheduling.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import oracle
from .engine import (
    PopulationCapExceeded,
    SimConfig,
    simulate,
    simulate_discretized,
)
from .oracle import MomentQuery, TwoTimeQuery
from .randkit import RngStream, sample_joint_position_localtime

__all__ = [
    "Z_MAX",
    "BOUND_SLACK",
    "DEEP_TAIL_ORACLE",
    "DEEP_TAIL_ABS_TOL",
    "MAX_FAILED_FRACTION",
    "Ensemble",
    "VerificationReport",
    "TooManyFailedReplicates",
    "run_replicates",
    "verify_first_moment",
    "verify_many_to_one",
    "verify_martingale",
    "verify_moment_bounds",
    "verification_sweep",
    "estimate_m_infinity",
    "limit_law_study",
    "fluctuation_study",
    "LimitLawReport",
    "FluctuationReport",
    "observation_times",
    "write_ensemble_csv",
    "ensemble_csv_header",
]

# Statistical thresholds (module constants, used everywhere).
Z_MAX = 4.0  # two-sided band for equality tests
BOUND_SLACK = 3.0  # one-sided SE slack for bound tests
DEEP_TAIL_ORACLE = 1e-6  # below this the z-test degenerates ...
DEEP_TAIL_ABS_TOL = 1e-3  # ... and an absolute tolerance applies instead
MAX_FAILED_FRACTION = 0.01  # abort when more replicates hit the population cap

# Default verification grids (the acceptance grids).
DEFAULT_MOMENT_TIMES = (0.5, 1.0, 2.0)
DEFAULT_MOMENT_LEVELS = (0.0, 0.5, 1.0)
DEFAULT_BOUND_QUERIES = ((0.5, 0.5), (1.0, 0.5), (1.0, 1.0), (2.0, 1.0))  # (t, x)
DEFAULT_TWO_TIME_QUERIES = ((1.0, 2.0, 0.5, 1.0),)  # (s, t, x, y)
MANY_TO_ONE_TIME = 1.0
MANY_TO_ONE_LEVEL = 0.5

# Study parameters.
M_PROXY_MIN_EXPONENT = 4.0  # require beta^2 * t_proxy / 2 >= this
BOOTSTRAP_SAMPLES = 200
BOOTSTRAP_SLACK = 3.0
MEDIAN_WINDOW = 3.0  # recentred medians must stay in [-window, window]

THREADS_ENV_VAR = "CATBBM_THREADS"
_MIN_CHUNK = 512
_AUX_STREAM_BASE = 1 << 63  # stream ids reserved for non-particle samplers
_PROXY_SEED_OFFSET = 1000003  # keeps the martingale-proxy run independent


class TooManyFailedReplicates(RuntimeError):
    """More than MAX_FAILED_FRACTION of replicates hit the population cap."""

    def __init__(self, n_failed: int, n_total: int) -> None:
        super().__init__(
            f"{n_failed}/{n_total} replicates exceeded the population cap "
            f"(limit {MAX_FAILED_FRACTION:.0%}); lower the horizons or raise the cap"
        )
        self.n_failed = n_failed
        self.n_total = n_total


@dataclass
class Ensemble:
    """Per-replicate statistics at each horizon for one configuration."""

    config: SimConfig
    n_replicates: int
    thresholds: tuple[float, ...]
    times: tuple[float, ...]
    replicate_ids: np.ndarray  # (n_ok,)
    population: np.ndarray  # (n_ok, H) int64
    r_t: np.ndarray  # (n_ok, H)
    m_t: np.ndarray  # (n_ok, H)
    counts: np.ndarray  # (n_ok, H, K) int64
    failures: tuple[tuple[int, float], ...]  # (replicate, time reached)

    @property
    def n_ok(self) -> int:
        return len(self.replicate_ids)

    def horizon_index(self, t: float) -> int:
        return _index_of(t, self.times, "horizon")

    def threshold_index(self, x: float) -> int:
        return _index_of(x, self.thresholds, "threshold")


@dataclass
class VerificationReport:
    """One oracle-vs-Monte-Carlo comparison with its verdict."""

    name: str
    oracle_value: float
    mc_estimate: float
    std_error: float
    z_score: float
    n: int
    verdict: str
    metadata: dict

    @property
    def passed(self) -> bool:
        return self.verdict == "pass"

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "oracle_value": self.oracle_value,
            "mc_estimate": self.mc_estimate,
            "std_error": self.std_error,
            "z_score": self.z_score,
            "n": self.n,
            "verdict": self.verdict,
            "metadata": self.metadata,
        }


def _index_of(value: float, grid: tuple[float, ...], what: str) -> int:
    for i, g in enumerate(grid):
        if math.isclose(value, g, rel_tol=1e-9, abs_tol=1e-9):
            return i
    raise ValueError(f"{what} {value} not in ensemble grid {grid}")


def _mean_se(values: np.ndarray) -> tuple[float, float]:
    n = len(values)
    mean = float(np.mean(values))
    se = float(np.std(values, ddof=1) / math.sqrt(n))
    return mean, se


def _z(mc: float, target: float, se: float) -> float:
    if se > 0.0:
        return (mc - target) / se
    if mc == target:
        return 0.0
    return math.copysign(1e300, mc - target)  # finite sentinel keeps JSON valid


def _equality_report(
    name: str,
    oracle_value: float,
    mean: float,
    se: float,
    n: int,
    metadata: dict | None = None,
    deep_tail_switch: bool = True,
) -> VerificationReport:
    metadata = dict(metadata or {})
    z = _z(mean, oracle_value, se)
    if deep_tail_switch and abs(oracle_value) < DEEP_TAIL_ORACLE:
        verdict = "pass" if abs(mean - oracle_value) <= DEEP_TAIL_ABS_TOL else "fail"
        metadata.update(test="absolute", abs_tol=DEEP_TAIL_ABS_TOL)
    else:
        verdict = "pass" if abs(z) <= Z_MAX else "fail"
        metadata.update(test="z", z_max=Z_MAX)
    return VerificationReport(name, oracle_value, mean, se, z, n, verdict, metadata)


def _bound_report(
    name: str, bound: float, mean: float, se: float, n: int, metadata: dict | None = None
) -> VerificationReport:
    metadata = dict(metadata or {})
    metadata.update(test="one_sided_bound", slack=BOUND_SLACK)
    verdict = "pass" if mean - BOUND_SLACK * se <= bound else "fail"
    return VerificationReport(name, bound, mean, se, _z(mean, bound, se), n, verdict, metadata)


def observation_times(config: SimConfig) -> tuple[float, ...]:
    """Actual snapshot times: exact horizons, or the step grid they snap to."""
    if config.mode == "exact":
        return config.horizons
    assert config.dt is not None
    return tuple(round(h / config.dt) * config.dt for h in config.horizons)


def _thread_count() -> int:
    env = os.environ.get(THREADS_ENV_VAR)
    if env is not None:
        return max(1, int(env))
    return os.cpu_count() or 1


def _run_range(config: SimConfig, thresholds: tuple[float, ...], start: int, stop: int):
    runner = simulate if config.mode == "exact" else simulate_discretized
    m = stop - start
    n_h, n_x = len(config.horizons), len(thresholds)
    pop = np.zeros((m, n_h), dtype=np.int64)
    r_t = np.zeros((m, n_h))
    m_t = np.zeros((m, n_h))
    counts = np.zeros((m, n_h, n_x), dtype=np.int64)
    ok = np.ones(m, dtype=bool)
    failures: list[tuple[int, float]] = []
    for i in range(m):
        rep = start + i
        try:
            result = runner(config, replicate=rep, thresholds=thresholds)
        except PopulationCapExceeded as exc:
            ok[i] = False
            failures.append((rep, exc.time_reached))
            continue
        for h, (snap, stats) in enumerate(result.observations):
            pop[i, h] = snap.population
            r_t[i, h] = stats.r_t
            m_t[i, h] = stats.martingale
            for j, x in enumerate(thresholds):
                counts[i, h, j] = stats.count_above[x]
    return start, pop, r_t, m_t, counts, ok, failures


def run_replicates(config: SimConfig, n: int, thresholds: tuple[float, ...] = ()) -> Ensemble:
    """Run n independent replicates, deterministic per (config.seed, index).

    Replicates that trip the population cap are recorded as failures; the
    run aborts with TooManyFailedReplicates when more than 1% fail.
    Parallelism (CATBBM_THREADS, default: available cores) never changes
    the results, only the wall time.
    """
    if n < 2:
        raise ValueError(f"need at least 2 replicates for standard errors, got {n}")
    thresholds = tuple(float(x) for x in thresholds)
    threads = _thread_count()
    chunks: list[tuple[int, int]] = []
    step = max(_MIN_CHUNK, -(-n // (threads * 4))) if threads > 1 else n
    for start in range(0, n, step):
        chunks.append((start, min(n, start + step)))

    if threads > 1 and len(chunks) > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_run_range, config, thresholds, a, b) for a, b in chunks]
            parts = [f.result() for f in futures]
    else:
        parts = [_run_range(config, thresholds, a, b) for a, b in chunks]
    parts.sort(key=lambda p: p[0])

    pop = np.concatenate([p[1] for p in parts])
    r_t = np.concatenate([p[2] for p in parts])
    m_t = np.concatenate([p[3] for p in parts])
    counts = np.concatenate([p[4] for p in parts])
    ok = np.concatenate([p[5] for p in parts])
    failures: list[tuple[int, float]] = []
    for p in parts:
        failures.extend(p[6])

    if len(failures) > MAX_FAILED_FRACTION * n:
        raise TooManyFailedReplicates(len(failures), n)

    return Ensemble(
        config=config,
        n_replicates=n,
        thresholds=thresholds,
        times=observation_times(config),
        replicate_ids=np.nonzero(ok)[0],
        population=pop[ok],
        r_t=r_t[ok],
        m_t=m_t[ok],
        counts=counts[ok],
        failures=tuple(failures),
    )


def verify_first_moment(ensemble: Ensemble, queries: list[MomentQuery]) -> list[VerificationReport]:
    """z-test the ensemble mean count above x against the closed form, per query."""
    cfg = ensemble.config
    reports = []
    for q in queries:
        if not math.isclose(q.x0, cfg.x0, rel_tol=1e-12, abs_tol=1e-12):
            raise ValueError(f"query x0={q.x0} does not match ensemble x0={cfg.x0}")
        if not math.isclose(q.beta, cfg.beta, rel_tol=1e-12):
            raise ValueError(f"query beta={q.beta} does not match ensemble beta={cfg.beta}")
        h = ensemble.horizon_index(q.t)
        j = ensemble.threshold_index(q.x)
        mean, se = _mean_se(ensemble.counts[:, h, j].astype(float))
        reports.append(
            _equality_report(
                f"first_moment[t={q.t:g},x={q.x:g}]",
                oracle.expected_count_above(q),
                mean,
                se,
                ensemble.n_ok,
                {"x0": q.x0, "beta": q.beta},
            )
        )
    return reports


def _spine_weighted_samples(seed: int, beta: float, t: float, x: float, n: int) -> np.ndarray:
    stream = RngStream(seed, _AUX_STREAM_BASE)
    out = np.empty(n)
    for i in range(n):
        draw = sample_joint_position_localtime(stream, t)
        out[i] = math.exp(beta * draw.local_time) if draw.position >= x else 0.0
    return out


def verify_many_to_one(
    config: SimConfig, x: float, n: int, ensemble: Ensemble | None = None
) -> VerificationReport:
    """Three-way check of the many-to-one identity at the last horizon.

    Left side: particle-system mean of the count above x.  Right side: mean
    of exp(beta * local_time) over single weighted paths from the origin.
    Anchor: the closed form.  Passes only if all three pairwise z-scores
    stay within the equality band.  Origin starts only: the weighted-path
    sampler is constructed from 0.
    """
    if x < 0.0:
        raise ValueError(f"threshold must be >= 0, got {x}")
    if config.x0 != 0.0:
        raise ValueError("many-to-one verification requires x0 = 0")
    t = config.horizons[-1]
    closed = oracle.expected_count_origin(t, x, config.beta)

    if ensemble is None:
        ensemble = run_replicates(config, n, thresholds=(x,))
    left = ensemble.counts[:, ensemble.horizon_index(t), ensemble.threshold_index(x)]
    left_mean, left_se = _mean_se(left.astype(float))

    weighted = _spine_weighted_samples(config.seed, config.beta, t, x, n)
    right_mean, right_se = _mean_se(weighted)

    z_left = _z(left_mean, closed, left_se)
    z_right = _z(right_mean, closed, right_se)
    z_cross = _z(left_mean, right_mean, math.hypot(left_se, right_se))
    verdict = "pass" if max(abs(z_left), abs(z_right), abs(z_cross)) <= Z_MAX else "fail"
    return VerificationReport(
        name=f"many_to_one[t={t:g},x={x:g}]",
        oracle_value=closed,
        mc_estimate=left_mean,
        std_error=left_se,
        z_score=z_left,
        n=ensemble.n_ok,
        verdict=verdict,
        metadata={
            "test": "three_way_z",
            "z_max": Z_MAX,
            "weighted_path_estimate": right_mean,
            "weighted_path_std_error": right_se,
            "weighted_path_n": n,
            "z_weighted_vs_closed": z_right,
            "z_particles_vs_weighted": z_cross,
        },
    )


def verify_martingale(ensemble: Ensemble) -> list[VerificationReport]:
    """Mean of M_t must equal exp(-beta |x0|) at every horizon and be flat in t.

    Cross-horizon agreement is tested on paired per-replicate differences.
    A non-monotone variance across horizons is flagged in metadata, never
    failed (second moments of a martingale are nondecreasing only in
    expectation; the sample ordering is noisy).
    """
    cfg = ensemble.config
    target = math.exp(-cfg.beta * abs(cfg.x0))
    variances = [float(np.var(ensemble.m_t[:, h], ddof=1)) for h in range(len(ensemble.times))]
    reports = []
    for h, t in enumerate(ensemble.times):
        mean, se = _mean_se(ensemble.m_t[:, h])
        reports.append(
            _equality_report(
                f"martingale_mean[t={t:g}]",
                target,
                mean,
                se,
                ensemble.n_ok,
                {"variance": variances[h]},
            )
        )
    for i in range(len(ensemble.times)):
        for j in range(i + 1, len(ensemble.times)):
            diff = ensemble.m_t[:, j] - ensemble.m_t[:, i]
            mean, se = _mean_se(diff)
            reports.append(
                _equality_report(
                    f"martingale_consistency[t1={ensemble.times[i]:g},t2={ensemble.times[j]:g}]",
                    0.0,
                    mean,
                    se,
                    ensemble.n_ok,
                    {
                        "paired": True,
                        "variance_nondecreasing": variances[j] >= variances[i],
                    },
                    deep_tail_switch=False,
                )
            )
    return reports


def verify_moment_bounds(
    ensemble: Ensemble,
    queries: list[MomentQuery],
    two_time: list[TwoTimeQuery],
) -> list[VerificationReport]:
    """One-sided checks of the second-, cross- and two-time-moment bounds."""
    reports = []
    for q in queries:
        h = ensemble.horizon_index(q.t)
        j = ensemble.threshold_index(q.x)
        c = ensemble.counts[:, h, j].astype(float)
        mean, se = _mean_se(c * c)
        reports.append(
            _bound_report(
                f"second_moment[t={q.t:g},x={q.x:g}]",
                oracle.second_moment_bound(q),
                mean,
                se,
                ensemble.n_ok,
            )
        )
        mean, se = _mean_se(c * ensemble.population[:, h].astype(float))
        reports.append(
            _bound_report(
                f"cross_moment[t={q.t:g},x={q.x:g}]",
                oracle.cross_moment_bound(q),
                mean,
                se,
                ensemble.n_ok,
            )
        )
    for q in two_time:
        hs = ensemble.horizon_index(q.s)
        ht = ensemble.horizon_index(q.t)
        jx = ensemble.threshold_index(q.x)
        jy = ensemble.threshold_index(q.y)
        prod = ensemble.counts[:, hs, jx].astype(float) * ensemble.counts[:, ht, jy].astype(float)
        mean, se = _mean_se(prod)
        bound = oracle.two_time_bound(q)
        reports.append(
            _bound_report(
                f"two_time_moment[s={q.s:g},t={q.t:g},x={q.x:g},y={q.y:g}]",
                bound.total,
                mean,
                se,
                ensemble.n_ok,
                {"leading": bound.leading, "e1": bound.e1, "e2": bound.e2, "e3": bound.e3, "e4": bound.e4},
            )
        )
    return reports


def verification_sweep(
    config: SimConfig,
    n: int,
    targets: frozenset[str] | set[str] = frozenset({"all"}),
    two_time: list[TwoTimeQuery] | None = None,
) -> list[VerificationReport]:
    """The full verification battery on one ensemble with one global seed.

    Targets: any of {"moments", "martingale", "bounds", "many-to-one"} or
    {"all"}.  The grids are the module defaults (a custom two-time grid may
    be supplied); the ensemble horizons and thresholds are their union.
    The many-to-one check (origin starts only) reuses the same ensemble for
    its particle side.
    """
    known = {"moments", "martingale", "bounds", "many-to-one", "all"}
    unknown = set(targets) - known
    if unknown:
        raise ValueError(f"unknown verification targets: {sorted(unknown)}")
    wants = lambda name: "all" in targets or name in targets

    if wants("many-to-one") and "many-to-one" in targets and config.x0 != 0.0:
        raise ValueError("many-to-one verification requires x0 = 0")

    sweep_cfg = replace(config, horizons=DEFAULT_MOMENT_TIMES, mode="exact")
    ensemble = run_replicates(sweep_cfg, n, thresholds=DEFAULT_MOMENT_LEVELS)
    beta, x0 = config.beta, config.x0
    reports: list[VerificationReport] = []

    if wants("moments"):
        queries = [
            MomentQuery(x0=x0, t=t, x=x, beta=beta)
            for t in DEFAULT_MOMENT_TIMES
            for x in DEFAULT_MOMENT_LEVELS
        ]
        reports.extend(verify_first_moment(ensemble, queries))
        for h, t in enumerate(ensemble.times):
            mean, se = _mean_se(ensemble.population[:, h].astype(float))
            reports.append(
                _equality_report(
                    f"population_mean[t={t:g}]",
                    oracle.expected_population(x0, t, beta),
                    mean,
                    se,
                    ensemble.n_ok,
                )
            )
    if wants("martingale"):
        reports.extend(verify_martingale(ensemble))
    if wants("bounds"):
        queries = [MomentQuery(x0=x0, t=t, x=x, beta=beta) for t, x in DEFAULT_BOUND_QUERIES]
        if two_time is None:
            two_time = [
                TwoTimeQuery(x0=x0, s=s, t=t, x=x, y=y, beta=beta)
                for s, t, x, y in DEFAULT_TWO_TIME_QUERIES
            ]
        reports.extend(verify_moment_bounds(ensemble, queries, two_time))
    if wants("many-to-one") and config.x0 == 0.0:
        m2o_cfg = replace(sweep_cfg, horizons=(MANY_TO_ONE_TIME,))
        reports.append(verify_many_to_one(m2o_cfg, MANY_TO_ONE_LEVEL, n, ensemble=ensemble))
    return reports


def estimate_m_infinity(config: SimConfig, t_proxy: float, n: int) -> np.ndarray:
    """Samples of M_t at a late proxy time standing in for the martingale limit."""
    if 0.5 * config.beta**2 * t_proxy < M_PROXY_MIN_EXPONENT:
        raise ValueError(
            f"t_proxy too small: need beta^2 * t_proxy / 2 >= {M_PROXY_MIN_EXPONENT}"
        )
    proxy_cfg = replace(config, horizons=(t_proxy,), mode="exact", dt=None, epsilon=None)
    ensemble = run_replicates(proxy_cfg, n)
    return ensemble.m_t[:, 0].copy()


def default_t_proxy(beta: float) -> float:
    return 2.0 * M_PROXY_MIN_EXPONENT / (beta * beta)


@dataclass
class LimitLawReport:
    """Per-horizon KS distances to the proxy limit CDF, with trend verdicts."""

    horizons: tuple[float, ...]
    n: int
    ks_distance: tuple[float, ...]
    ks_diff: tuple[float, ...]  # consecutive differences
    ks_diff_sd: tuple[float, ...]  # bootstrap SDs of those differences
    medians: tuple[float, ...]
    t_proxy: float
    m_proxy_mean: float
    verdicts: dict

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def to_dict(self) -> dict:
        return {
            "study": "limit_law",
            "horizons": list(self.horizons),
            "n": self.n,
            "ks_distance": list(self.ks_distance),
            "ks_diff": list(self.ks_diff),
            "ks_diff_sd": list(self.ks_diff_sd),
            "medians": list(self.medians),
            "t_proxy": self.t_proxy,
            "m_proxy_mean": self.m_proxy_mean,
            "verdicts": self.verdicts,
        }


def _reference_cdf_at(xs: np.ndarray, beta: float, m_samples: np.ndarray) -> np.ndarray:
    """w_limit_cdf evaluated at many points, chunked to bound memory."""
    weights = np.exp(-beta * xs)
    out = np.empty(len(xs))
    chunk = max(1, 10_000_000 // max(len(m_samples), 1))
    for i in range(0, len(xs), chunk):
        out[i : i + chunk] = np.mean(
            np.exp(-np.outer(weights[i : i + chunk], m_samples)), axis=1
        )
    return out


def _ks_from_sorted(ref_sorted: np.ndarray) -> float:
    n = len(ref_sorted)
    grid_hi = np.arange(1, n + 1) / n
    grid_lo = np.arange(0, n) / n
    return float(np.max(np.maximum(grid_hi - ref_sorted, ref_sorted - grid_lo)))


def limit_law_study(config: SimConfig, horizons: list[float], n: int) -> LimitLawReport:
    """Compare the law of R_t - beta t/2 to the limit CDF built from M_t samples.

    Asserts only trends: the KS distance to the reference must be
    nonincreasing along the ladder within a bootstrapped band, and the
    recentred median must stay inside a fixed window.
    """
    if len(horizons) < 2:
        raise ValueError("limit-law study needs at least 2 horizons")
    if n < 1000:
        raise ValueError(f"limit-law study needs n >= 1000, got {n}")
    cfg = replace(config, horizons=tuple(horizons))
    ensemble = run_replicates(cfg, n)
    beta = cfg.beta

    t_proxy = max(default_t_proxy(beta), cfg.horizons[-1])
    proxy_cfg = replace(cfg, seed=cfg.seed + _PROXY_SEED_OFFSET)
    m_samples = estimate_m_infinity(proxy_cfg, t_proxy, n)

    n_h = len(cfg.horizons)
    recentred = ensemble.r_t - 0.5 * beta * np.asarray(ensemble.times)
    order = np.argsort(recentred, axis=0)
    ref_vals = np.empty_like(recentred)
    ks = []
    for h in range(n_h):
        xs_sorted = recentred[order[:, h], h]
        ref_sorted = _reference_cdf_at(xs_sorted, beta, m_samples)
        ks.append(_ks_from_sorted(ref_sorted))
        ref_vals[order[:, h], h] = ref_sorted  # reference CDF at each raw sample

    rng = np.random.default_rng(cfg.seed + 2 * _PROXY_SEED_OFFSET)
    n_ok = ensemble.n_ok
    boot_diffs = np.empty((BOOTSTRAP_SAMPLES, n_h - 1))
    for b in range(BOOTSTRAP_SAMPLES):
        idx = rng.integers(0, n_ok, n_ok)
        ks_b = [
            _ks_from_sorted(np.sort(ref_vals[idx, h]))
            for h in range(n_h)
        ]
        boot_diffs[b] = np.diff(ks_b)
    diff_sd = np.std(boot_diffs, axis=0, ddof=1)

    observed_diff = np.diff(ks)
    ks_ok = bool(np.all(observed_diff <= BOOTSTRAP_SLACK * np.maximum(diff_sd, 0.0)))
    medians = [float(np.median(recentred[:, h])) for h in range(n_h)]
    median_ok = all(abs(m) <= MEDIAN_WINDOW for m in medians)

    return LimitLawReport(
        horizons=cfg.horizons,
        n=n,
        ks_distance=tuple(ks),
        ks_diff=tuple(float(d) for d in observed_diff),
        ks_diff_sd=tuple(float(s) for s in diff_sd),
        medians=tuple(medians),
        t_proxy=t_proxy,
        m_proxy_mean=float(np.mean(m_samples)),
        verdicts={
            "ks_nonincreasing_within_band": ks_ok,
            "median_bounded": median_ok,
        },
    )


@dataclass
class FluctuationReport:
    """Tail-quantile trends of the recentred rightmost particle."""

    horizons: tuple[float, ...]
    n: int
    quantiles: dict  # level -> tuple per horizon
    envelopes: tuple[tuple[float, float, float] | None, ...]
    upper_rank_corr: float
    verdicts: dict

    @property
    def passed(self) -> bool:
        return all(self.verdicts.values())

    def to_dict(self) -> dict:
        return {
            "study": "fluctuations",
            "horizons": list(self.horizons),
            "n": self.n,
            "quantiles": {str(k): list(v) for k, v in self.quantiles.items()},
            "envelopes": [list(e) if e is not None else None for e in self.envelopes],
            "upper_rank_corr": self.upper_rank_corr,
            "verdicts": self.verdicts,
        }


FLUCTUATION_LEVELS = (0.001, 0.01, 0.5, 0.99, 0.999)


def fluctuation_study(config: SimConfig, horizons: list[float], n: int) -> FluctuationReport:
    """Qualitative checks of the limsup/liminf scale separation.

    The extreme upper quantile of R_t - beta t/2 must grow with log t
    (positive rank correlation along the ladder) while the extreme lower
    quantile must move less in magnitude, and the median must stay in a
    fixed window.  No finite-t constants are asserted.
    """
    from scipy.stats import spearmanr

    if len(horizons) < 2:
        raise ValueError("fluctuation study needs at least 2 horizons")
    if n < 1000:
        raise ValueError(f"fluctuation study needs n >= 1000, got {n}")
    cfg = replace(config, horizons=tuple(horizons))
    ensemble = run_replicates(cfg, n)
    beta = cfg.beta
    recentred = ensemble.r_t - 0.5 * beta * np.asarray(ensemble.times)

    quantiles = {
        level: tuple(float(v) for v in np.quantile(recentred, level, axis=0))
        for level in FLUCTUATION_LEVELS
    }
    envelopes = tuple(
        oracle.fluctuation_envelopes(t, beta) if t > math.e else None for t in cfg.horizons
    )

    log_t = np.log(np.asarray(cfg.horizons))
    corr = float(spearmanr(log_t, np.asarray(quantiles[0.999])).statistic)
    upper_span = abs(quantiles[0.999][-1] - quantiles[0.999][0])
    lower_span = abs(quantiles[0.001][-1] - quantiles[0.001][0])
    medians = quantiles[0.5]

    return FluctuationReport(
        horizons=cfg.horizons,
        n=n,
        quantiles=quantiles,
        envelopes=envelopes,
        upper_rank_corr=corr,
        verdicts={
            "upper_quantile_tracks_log_t": corr > 0.0,
            "lower_quantile_moves_less": lower_span < upper_span,
            "median_bounded": all(abs(m) <= MEDIAN_WINDOW for m in medians),
        },
    )


# ---------------------------------------------------------------------------
# Serialization (the fixed CSV/JSON surface)


def ensemble_csv_header(thresholds: tuple[float, ...]) -> list[str]:
    return ["replicate", "time", "population", "r_t", "m_t"] + [
        f"count_above@{x:g}" for x in thresholds
    ]


def write_ensemble_csv(ensemble: Ensemble, path) -> None:
    """One row per replicate per horizon, fixed column order, replicate-major."""
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ensemble_csv_header(ensemble.thresholds))
        for i, rep in enumerate(ensemble.replicate_ids):
            for h, t in enumerate(ensemble.times):
                writer.writerow(
                    [
                        int(rep),
                        repr(float(t)),
                        int(ensemble.population[i, h]),
                        repr(float(ensemble.r_t[i, h])),
                        repr(float(ensemble.m_t[i, h])),
                    ]
                    + [int(c) for c in ensemble.counts[i, h]]
                )
