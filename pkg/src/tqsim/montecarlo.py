"""Batched trial runs: counter-based randomness, frequency tables, audits.

Trial i always consumes row i of a fixed uniform table keyed by the seed, so
results are a pure function of (spec, strategy, trials, seed) no matter how
the work is chunked or how many workers chew on it.
"""
from __future__ import annotations

import math
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .engine import COVERAGE_ATOL, ResolutionStrategy
from .experiments import ExperimentSpec
from .program import classify_counts, compile_program

# Fixed chunk size: the work split never depends on the worker count.
CHUNK_TRIALS = 50_000

# Moving-average window for reading fringe visibility off an empirical
# histogram (full windows only, so the edges drop out).
EMPIRICAL_SMOOTHING = 3


@dataclass(frozen=True, slots=True)
class RunConfig:
    n_trials: int
    seed: int
    strategy: ResolutionStrategy = ResolutionStrategy.SEQUENTIAL
    workers: int = 1
    hierarchy_tie_break: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "strategy", ResolutionStrategy(self.strategy))
        if self.n_trials < 1:
            raise ValueError("n_trials must be at least 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


def trial_uniforms(seed: int, start: int, stop: int, padded_draws: int) -> np.ndarray:
    """Rows [start, stop) of the uniform table for this seed.

    The table is conceptually (trials, padded_draws); because the row width
    is a whole number of 4-draw counter blocks, any starting row is reached
    exactly by advancing the counter, and every split reproduces the same
    bytes as one big draw.
    """
    bg = np.random.Philox(key=seed)
    if padded_draws:
        bg.advance((start * padded_draws) // 4)
    return np.random.Generator(bg).random((stop - start, padded_draws))


def _count_chunk(args) -> np.ndarray:
    spec, strategy, tie_break, seed, start, stop = args
    program = compile_program(spec, strategy, tie_break)
    return classify_counts(program, trial_uniforms(seed, start, stop, program.padded_draws))


@dataclass(frozen=True, slots=True)
class Histogram:
    bin_centers: tuple[float, ...]
    counts: tuple[int, ...]

    def probabilities(self) -> tuple[float, ...]:
        total = sum(self.counts)
        if total == 0:
            return tuple(0.0 for _ in self.counts)
        return tuple(c / total for c in self.counts)


@dataclass(frozen=True, slots=True)
class FrequencyTable:
    """Counts per outcome, per condition, per emitter state, plus the screen
    histogram when the arrangement can produce one."""

    n_trials: int
    counts: dict[str, int]
    conditional_counts: dict[str, dict[str, int]]
    emitter_state_counts: dict[str, int]
    histogram: Histogram | None


@dataclass(frozen=True, slots=True)
class ConsistencyReport:
    bilking_violations: int
    emitter_state_outcome_mismatches: int
    weight_sum_max_error: float

    def clean(self) -> bool:
        return (
            self.bilking_violations == 0
            and self.emitter_state_outcome_mismatches == 0
            and self.weight_sum_max_error <= COVERAGE_ATOL
        )


_MISMATCH_PREFIXES = ("outcome-mismatch", "emitter-state-mismatch")


def run_experiment(spec: ExperimentSpec, config: RunConfig) -> tuple[FrequencyTable, ConsistencyReport]:
    """Run ``config.n_trials`` trials and aggregate; deterministic in the seed.

    Worker processes split the fixed-size chunks between them; the merge is
    an integer sum, so the result is identical for any worker count.
    """
    program = compile_program(spec, config.strategy, config.hierarchy_tie_break)
    n = config.n_trials
    spans = [(a, min(a + CHUNK_TRIALS, n)) for a in range(0, n, CHUNK_TRIALS)]
    tasks = [(spec, config.strategy, config.hierarchy_tie_break, config.seed, a, b) for a, b in spans]
    if config.workers <= 1 or len(tasks) <= 1:
        parts = [_count_chunk(t) for t in tasks]
    else:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=config.workers, mp_context=ctx) as pool:
            parts = list(pool.map(_count_chunk, tasks))
    leaf_counts = np.sum(parts, axis=0)

    counts: dict[str, int] = {}
    cond: dict[str, dict[str, int]] = {}
    emitter: dict[str, int] = {}
    has_bins = any(leaf.bin_index is not None for leaf in program.leaves)
    hist = np.zeros(spec.screen.bins, dtype=np.int64) if has_bins else None
    bilking = 0
    mismatches = 0
    weight_err = 0.0
    for leaf, c in zip(program.leaves, leaf_counts):
        c = int(c)
        if c == 0:
            continue
        counts[leaf.outcome] = counts.get(leaf.outcome, 0) + c
        for condition in leaf.conditions:
            bucket = cond.setdefault(condition, {})
            bucket[leaf.outcome] = bucket.get(leaf.outcome, 0) + c
        label = leaf.ledger.emitter_state.label
        emitter[label] = emitter.get(label, 0) + c
        if leaf.bin_index is not None:
            hist[leaf.bin_index] += c
        if any(v.startswith(_MISMATCH_PREFIXES) for v in leaf.violations):
            mismatches += c
        if any(not v.startswith(_MISMATCH_PREFIXES) for v in leaf.violations):
            bilking += c
        weight_err = max(weight_err, leaf.weight_sum_error)

    histogram = None
    if hist is not None:
        histogram = Histogram(
            tuple(float(x) for x in spec.screen.bin_centers()),
            tuple(int(x) for x in hist),
        )
    table = FrequencyTable(
        n_trials=n,
        counts=dict(sorted(counts.items())),
        conditional_counts={k: dict(sorted(v.items())) for k, v in sorted(cond.items())},
        emitter_state_counts=dict(sorted(emitter.items())),
        histogram=histogram,
    )
    report = ConsistencyReport(bilking, mismatches, weight_err)
    return table, report


def frequency(table: FrequencyTable, outcome: str) -> tuple[float, float]:
    """Relative frequency of an outcome with its binomial standard error."""
    c = table.counts.get(outcome, 0)
    p = c / table.n_trials
    return p, math.sqrt(p * (1.0 - p) / table.n_trials)


def conditional_frequency(table: FrequencyTable, condition: str, outcome: str) -> tuple[float, float]:
    """Frequency of an outcome among the trials satisfying a condition."""
    bucket = table.conditional_counts.get(condition, {})
    total = sum(bucket.values())
    if total == 0:
        raise ValueError("empty conditional")
    p = bucket.get(outcome, 0) / total
    return p, math.sqrt(p * (1.0 - p) / total)


def visibility(values: Sequence[float], smooth_window: int = 1) -> float:
    """(max - min) / (max + min) of a non-negative profile.

    ``smooth_window`` first applies a centered moving average (odd width,
    full windows only) to tame per-bin shot noise.
    """
    vals = np.asarray(values, dtype=float)
    if vals.ndim != 1 or vals.size < 3:
        raise ValueError("visibility needs at least 3 bins")
    if smooth_window < 1 or smooth_window % 2 == 0:
        raise ValueError("smooth_window must be odd and positive")
    if not np.any(vals > 0):
        raise ValueError("visibility undefined for an all-zero profile")
    if smooth_window > 1:
        vals = np.convolve(vals, np.ones(smooth_window) / smooth_window, mode="valid")
    hi = float(vals.max())
    lo = float(vals.min())
    return (hi - lo) / (hi + lo)


@dataclass(frozen=True, slots=True)
class ComparisonReport:
    passed: bool
    tolerance: float
    deviations: dict[str, float]


def compare_to_expected(
    table: FrequencyTable, expected: Mapping[str, float], tolerance: float
) -> ComparisonReport:
    """Per-outcome |empirical - expected| against a flat tolerance."""
    if abs(math.fsum(expected.values()) - 1.0) > COVERAGE_ATOL:
        raise ValueError("expected probabilities must sum to 1")
    deviations = {}
    for outcome in sorted(set(expected) | set(table.counts)):
        p, _ = frequency(table, outcome)
        deviations[outcome] = abs(p - float(expected.get(outcome, 0.0)))
    return ComparisonReport(
        passed=all(d <= tolerance for d in deviations.values()),
        tolerance=tolerance,
        deviations=deviations,
    )


# -- serialization ------------------------------------------------------------


def run_payload(
    spec: ExperimentSpec, config: RunConfig, table: FrequencyTable, report: ConsistencyReport
) -> dict:
    """JSON-ready summary of one run.

    Deliberately excludes the worker count (and anything else that cannot
    change the numbers), so equal seeds serialize to equal bytes.
    """
    freq = {}
    for outcome, c in table.counts.items():
        p, se = frequency(table, outcome)
        freq[outcome] = {"count": c, "estimate": p, "stderr": se}
    conditionals = {}
    for condition, bucket in table.conditional_counts.items():
        total = sum(bucket.values())
        conditionals[condition] = {
            "count": total,
            "outcomes": {o: {"count": c, "estimate": c / total} for o, c in bucket.items()},
        }
    payload = {
        "experiment": spec.name,
        "strategy": config.strategy.value,
        "trials": table.n_trials,
        "seed": config.seed,
        "hierarchy_tie_break": config.hierarchy_tie_break,
        "frequencies": freq,
        "conditionals": conditionals,
        "emitter_states": {
            label: {"count": c, "estimate": c / table.n_trials}
            for label, c in table.emitter_state_counts.items()
        },
        "consistency": {
            "bilking_violations": report.bilking_violations,
            "emitter_state_outcome_mismatches": report.emitter_state_outcome_mismatches,
            "weight_sum_max_error": report.weight_sum_max_error,
        },
        "histogram": None,
    }
    if table.histogram is not None:
        payload["histogram"] = {
            "bin_centers": list(table.histogram.bin_centers),
            "counts": list(table.histogram.counts),
            "probabilities": list(table.histogram.probabilities()),
        }
    return payload


def histogram_csv(histogram: Histogram) -> str:
    lines = ["bin_center,count,probability"]
    for center, count, prob in zip(
        histogram.bin_centers, histogram.counts, histogram.probabilities()
    ):
        lines.append(f"{center!r},{count},{prob!r}")
    return "\n".join(lines) + "\n"
