"""Nondominated archive over (quality: maximise, latency: minimise)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum


class InsertStatus(str, Enum):
    KEPT = "Kept"
    DOMINATED = "Dominated"


@dataclass(frozen=True)
class ParetoPoint:
    quality: float
    latency_us: float
    payload: object = field(default=None, compare=False)

    @property
    def objectives(self):
        return (self.quality, self.latency_us)


def dominates(a: ParetoPoint, b: ParetoPoint) -> bool:
    """``a`` is at least as good on both axes and strictly better on one."""
    return (
        a.quality >= b.quality
        and a.latency_us <= b.latency_us
        and (a.quality > b.quality or a.latency_us < b.latency_us)
    )


class ParetoArchive:
    """Incrementally maintained front. Points equal on both axes are kept once
    (the first one inserted wins)."""

    def __init__(self, points=()):
        self._points = []
        for p in points:
            self.insert(p)

    def insert(self, point: ParetoPoint) -> InsertStatus:
        if not (math.isfinite(point.quality) and math.isfinite(point.latency_us)):
            raise ValueError(f"archive points must be finite, got {point.objectives}")
        for p in self._points:
            if dominates(p, point) or p.objectives == point.objectives:
                return InsertStatus.DOMINATED
        self._points = [p for p in self._points if not dominates(point, p)]
        self._points.append(point)
        return InsertStatus.KEPT

    @property
    def points(self):
        return list(self._points)

    def front(self):
        """Members sorted by increasing latency (quality increases along it)."""
        return sorted(self._points, key=lambda p: (p.latency_us, -p.quality))

    def __len__(self):
        return len(self._points)

    def __iter__(self):
        return iter(self._points)

    def objective_set(self):
        return {p.objectives for p in self._points}


def pareto_insert(archive: ParetoArchive, point: ParetoPoint):
    status = archive.insert(point)
    return archive, status


def brute_force_front(points):
    """Reference front by exhaustive pairwise comparison (keeps the first of
    any exact duplicates)."""
    points = list(points)
    out = []
    for i, p in enumerate(points):
        if any(q.objectives == p.objectives for q in points[:i]):
            continue
        if not any(dominates(q, p) for q in points):
            out.append(p)
    return out
