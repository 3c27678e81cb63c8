"""Multi-trial search: random search and regularized evolution.

Both loops evaluate candidates through an *evaluator* (any callable mapping a
ModelIr to ModelMetrics, e.g. the in-process cost model or a PPE client),
score them with a soft latency-constrained reward ``q * (latency / T) ** w``,
keep a quality/latency pareto archive and write one log record per trial.

Identical candidates are looked up in a memo table instead of re-evaluated.
Failed evaluations are logged with reward -inf and the search carries on.
"""

from __future__ import annotations

import json
import logging
import math
import random
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

from .cost_model import AcceleratorConfig, ModelMetrics, model_metrics, quantized
from .core_ir import ModelIr
from .errors import EvaluatorUnavailable, NasForgeError, ValidationError
from .pareto import ParetoArchive, ParetoPoint
from .search_space import Candidate, SearchSpace, enumerate_space, materialize, mutate, sample_random, space_size

log = logging.getLogger(__name__)


def quality_proxy(model: ModelIr, metrics: ModelMetrics) -> float:
    """Stand-in for trained accuracy: grows with log parameter and MAC counts."""
    return 10.0 * math.log1p(metrics.params / 1e6) + 5.0 * math.log1p(metrics.macs / 1e9)


@dataclass(frozen=True)
class Objective:
    latency_target_us: float
    reward_exponent: float = -0.07
    quality: Callable = field(default=quality_proxy, compare=False)

    def __post_init__(self):
        if not self.latency_target_us > 0:
            raise ValidationError(f"latency target must be positive, got {self.latency_target_us}")


def reward(q: float, latency_us: float, obj: Objective) -> float:
    if not latency_us > 0:
        raise ValidationError(f"latency must be positive, got {latency_us}")
    return q * (latency_us / obj.latency_target_us) ** obj.reward_exponent


class InProcessEvaluator:
    """Cost model in the calling process.

    Metrics are passed through the wire quantization so results match a
    remote PPE evaluation number for number.
    """

    def __init__(self, cfg: AcceleratorConfig):
        self.cfg = cfg

    def __call__(self, model: ModelIr) -> ModelMetrics:
        return quantized(model_metrics(model, self.cfg), per_op=False)


@dataclass(frozen=True)
class TrialRecord:
    trial_id: int
    candidate: Candidate
    metrics: Optional[dict]
    quality: Optional[float]
    reward: float
    timestamp: float
    worker_id: str
    model: str = ""
    error: Optional[str] = None

    @property
    def ok(self):
        return self.error is None

    @property
    def latency_us(self):
        return self.metrics["latency_us"] if self.metrics else None

    def to_dict(self):
        return {
            "trial_id": self.trial_id,
            "candidate": self.candidate.to_dict(),
            "model": self.model,
            "metrics": self.metrics,
            "quality": self.quality,
            "reward": self.reward if math.isfinite(self.reward) else None,
            "timestamp": self.timestamp,
            "worker_id": self.worker_id,
            "error": self.error,
        }

    @classmethod
    def from_dict(cls, doc):
        r = doc["reward"]
        return cls(
            trial_id=doc["trial_id"],
            candidate=Candidate.from_dict(doc["candidate"]),
            metrics=doc["metrics"],
            quality=doc["quality"],
            reward=-math.inf if r is None else r,
            timestamp=doc["timestamp"],
            worker_id=doc["worker_id"],
            model=doc.get("model", ""),
            error=doc.get("error"),
        )

    def to_line(self):
        return json.dumps(self.to_dict(), separators=(",", ":"), allow_nan=False)


@dataclass
class SearchResult:
    best: Optional[TrialRecord]
    archive: ParetoArchive
    log: list


class _Trials:
    """Single owner of memo, archive, log and trial numbering."""

    def __init__(self, space, obj, evaluator, workers=1, log_path=None, wall_clock=False):
        self.space = space
        self.obj = obj
        self.evaluator = evaluator
        self.workers = max(1, workers)
        self.memo = {}
        self.archive = ParetoArchive()
        self.log = []
        self.best = None
        self.wall_clock = wall_clock
        self._sink = open(log_path, "w", encoding="utf-8") if log_path else None

    def close(self):
        if self._sink:
            self._sink.close()
            self._sink = None

    def _evaluate(self, cand):
        model = materialize(cand, self.space)
        try:
            metrics = self.evaluator(model)
        except EvaluatorUnavailable:
            raise
        except Exception as exc:  # evaluator failures become failed trials
            log.warning("evaluation of %s failed: %s", cand.key(), exc)
            return model, None, f"{type(exc).__name__}: {exc}"
        return model, metrics, None

    def run_batch(self, cands):
        """Evaluate candidates (concurrently if allowed) and record them in order."""
        fresh = []
        for c in cands:
            if c not in self.memo and c not in fresh:
                fresh.append(c)
        if self.workers > 1 and len(fresh) > 1:
            with ThreadPoolExecutor(self.workers) as pool:
                results = list(pool.map(self._evaluate, fresh))
        else:
            results = [self._evaluate(c) for c in fresh]
        self.memo.update(zip(fresh, results))
        return [self._record(c) for c in cands]

    def _record(self, cand):
        model, metrics, error = self.memo[cand]
        trial_id = len(self.log)
        if metrics is None:
            q, r, totals = None, -math.inf, None
        else:
            q = self.obj.quality(model, metrics)
            r = reward(q, metrics.latency_us, self.obj)
            totals = metrics.totals()
        rec = TrialRecord(
            trial_id=trial_id,
            candidate=cand,
            metrics=totals,
            quality=q,
            reward=r,
            timestamp=time.time() if self.wall_clock else float(trial_id),
            worker_id=f"w{trial_id % self.workers}",
            model=model.name,
            error=error,
        )
        self.log.append(rec)
        if metrics is not None:
            self.archive.insert(ParetoPoint(q, metrics.latency_us, rec))
        if self.best is None or rec.reward > self.best.reward:
            self.best = rec
        if self._sink:
            self._sink.write(rec.to_line() + "\n")
            self._sink.flush()
        return rec

    def result(self):
        return SearchResult(self.best, self.archive, self.log)


def run_random_search(space: SearchSpace, budget: int, obj: Objective, evaluator, seed: int,
                      workers: int = 1, dedup: bool = False, log_path=None, wall_clock=False) -> SearchResult:
    """Sample ``budget`` candidates uniformly and evaluate them.

    With ``dedup`` the candidates are distinct (capped at the space size).
    """
    if budget < 1:
        raise ValidationError("budget must be >= 1")
    rng = random.Random(seed)
    cands = []
    if dedup:
        target = min(budget, space_size(space))
        seen = set()
        attempts = 0
        while len(cands) < target:
            attempts += 1
            if attempts > 1000 * target:
                raise NasForgeError("could not draw enough distinct candidates")
            c = sample_random(space, rng.getrandbits(64))
            if c not in seen:
                seen.add(c)
                cands.append(c)
    else:
        cands = [sample_random(space, rng.getrandbits(64)) for _ in range(budget)]
    trials = _Trials(space, obj, evaluator, workers, log_path, wall_clock)
    try:
        trials.run_batch(cands)
    finally:
        trials.close()
    return trials.result()


def run_evolution(space: SearchSpace, budget: int, population: int, sample: int, obj: Objective, evaluator,
                  seed: int, workers: int = 1, log_path=None, wall_clock=False) -> SearchResult:
    """Regularized (aging) evolution.

    Seeds ``population`` random members, then repeatedly draws ``sample``
    members uniformly, mutates the highest-reward one, evaluates the child,
    appends it and retires the oldest member.
    """
    if not budget >= population >= sample >= 1:
        raise ValidationError("need budget >= population >= sample >= 1")
    rng = random.Random(seed)
    trials = _Trials(space, obj, evaluator, workers, log_path, wall_clock)
    try:
        initial = [sample_random(space, rng.getrandbits(64)) for _ in range(population)]
        pop = deque(trials.run_batch(initial))
        while len(trials.log) < budget:
            picks = rng.sample(range(len(pop)), sample)
            parent = max((pop[i] for i in picks), key=lambda r: (r.reward, -r.trial_id))
            child = mutate(parent.candidate, space, rng.getrandbits(64))
            pop.append(trials.run_batch([child])[0])
            pop.popleft()
    finally:
        trials.close()
    return trials.result()


def exhaustive_search(space: SearchSpace, obj: Objective, evaluator) -> TrialRecord:
    """Evaluate every candidate; the reference optimum for small spaces."""
    trials = _Trials(space, obj, evaluator)
    trials.run_batch(list(enumerate_space(space)))
    return trials.best


# -- persistence -----------------------------------------------------------------


def persist_log(records, path, append=False):
    with open(path, "a" if append else "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(rec.to_line() + "\n")


@dataclass
class LoadedLog:
    records: list
    warnings: list


def load_log(path) -> LoadedLog:
    """Read a trial log; unreadable lines are skipped with a warning naming the line."""
    records, warnings = [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                records.append(TrialRecord.from_dict(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                msg = f"{path}:{lineno}: corrupt trial record skipped ({exc})"
                log.warning(msg)
                warnings.append(msg)
    return LoadedLog(records, warnings)


def archive_from_log(records) -> ParetoArchive:
    archive = ParetoArchive()
    for rec in sorted(records, key=lambda r: r.trial_id):
        if rec.ok and rec.metrics:
            archive.insert(ParetoPoint(rec.quality, rec.metrics["latency_us"], rec))
    return archive


def best_of(records) -> Optional[TrialRecord]:
    best = None
    for rec in sorted(records, key=lambda r: r.trial_id):
        if best is None or rec.reward > best.reward:
            best = rec
    return best
