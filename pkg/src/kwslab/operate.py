"""Threshold selection and scenario-grounded operating-point translation:
false alarms, misses, and detections per hour under an assumed event rate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UndefinedOperatingPointError, ValidationError
from .metrics import PRPoint


@dataclass(frozen=True)
class Scenario:
    name: str
    lambda_per_hour: float

    def __post_init__(self):
        if self.lambda_per_hour <= 0:
            raise ValidationError("lambda_per_hour must be > 0")


ASSISTIVE = Scenario("assistive", 2.0)
HANDS_FREE = Scenario("hands_free", 10.0)


@dataclass(frozen=True)
class OperatingPoint:
    threshold: float
    precision: float
    recall: float
    scenario: Scenario
    fa_per_hour: float
    misses_per_hour: float
    detections_per_hour: float
    feasible: bool = True

    def to_dict(self) -> dict:
        return {
            "threshold": self.threshold,
            "precision": self.precision,
            "recall": self.recall,
            "scenario": self.scenario.name,
            "lambda_per_hour": self.scenario.lambda_per_hour,
            "fa_per_hour": self.fa_per_hour,
            "misses_per_hour": self.misses_per_hour,
            "detections_per_hour": self.detections_per_hour,
            "feasible": self.feasible,
        }


def _split_rate(lam: float, detections: float):
    """Adjust (detections, misses) within a ulp of (lam*R, lam*(1-R)) so that
    detections + misses == lam holds bit-exactly. Round-to-nearest-even ties
    can make lam unreachable for a given detections value, in which case
    detections is realigned by one ulp and the complement retried."""
    for _ in range(64):
        misses = lam - detections
        total = detections + misses
        if total == lam:
            return detections, misses
        compensated = misses - (total - lam)
        if detections + compensated == lam:
            return detections, compensated
        detections = float(np.nextafter(detections, 0.0))
    raise ArithmeticError("could not split the event rate exactly")


def translate(precision: float, recall: float, scenario: Scenario):
    """(FA/h, Misses/h, Detections/h) for a (P, R) pair at event rate lambda.

    FA/h = R * lambda * (1/P - 1). Detections and misses are each within one
    ulp of lambda*R and lambda*(1-R), paired so their sum is exactly lambda.
    """
    if precision <= 0:
        raise UndefinedOperatingPointError("FA/h undefined at zero precision")
    if not 0 < precision <= 1 or not 0 <= recall <= 1:
        raise ValidationError("need P in (0, 1] and R in [0, 1]")
    lam = scenario.lambda_per_hour
    fa = recall * lam * (1.0 / precision - 1.0)
    detections, misses = _split_rate(lam, lam * recall)
    return fa, misses, detections


def _as_operating_point(point: PRPoint, scenario: Scenario, feasible: bool) -> OperatingPoint:
    fa, misses, detections = translate(point.precision, point.recall, scenario)
    return OperatingPoint(
        threshold=point.threshold,
        precision=point.precision,
        recall=point.recall,
        scenario=scenario,
        fa_per_hour=fa,
        misses_per_hour=misses,
        detections_per_hour=detections,
        feasible=feasible,
    )


def _translatable(curve):
    """Curve points with nonzero precision, paired with their FA/h."""
    out = []
    for point in curve:
        if point.precision > 0:
            fa = point.recall * 1.0 * (1.0 / point.precision - 1.0)  # per unit lambda
            out.append((point, fa))
    if not out:
        raise UndefinedOperatingPointError("no curve point has nonzero precision")
    return out


def select_threshold_max_recall(curve, scenario: Scenario, fa_budget: float) -> OperatingPoint:
    """Max recall subject to FA/h <= budget; ties prefer higher precision,
    then higher threshold. With no qualifying point, the minimal-FA/h point
    is returned flagged infeasible."""
    lam = scenario.lambda_per_hour
    candidates = _translatable(curve)
    qualifying = [(p, fa * lam) for p, fa in candidates if fa * lam <= fa_budget]
    if qualifying:
        best, _ = max(qualifying, key=lambda pf: (pf[0].recall, pf[0].precision, pf[0].threshold))
        return _as_operating_point(best, scenario, feasible=True)
    fallback, _ = min(candidates, key=lambda pf: (pf[1], -pf[0].recall, -pf[0].threshold))
    return _as_operating_point(fallback, scenario, feasible=False)


def select_threshold_min_fa(curve, scenario: Scenario, target_recall: float) -> OperatingPoint:
    """Min FA/h subject to recall >= target; ties prefer higher threshold.
    With no qualifying point, the max-recall point is returned flagged
    infeasible."""
    candidates = _translatable(curve)
    qualifying = [(p, fa) for p, fa in candidates if p.recall >= target_recall]
    if qualifying:
        best, _ = min(qualifying, key=lambda pf: (pf[1], -pf[0].threshold))
        return _as_operating_point(best, scenario, feasible=True)
    fallback, _ = max(candidates, key=lambda pf: (pf[0].recall, -pf[1], pf[0].threshold))
    return _as_operating_point(fallback, scenario, feasible=False)


def empirical_fp_per_hour(scores, labels, tau: float, window_s: float) -> float:
    """False positives at tau divided by the labelled coverage
    n * window_s / 3600 (window-time, not wall time)."""
    if window_s <= 0:
        raise ValidationError("window_s must be > 0")
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValidationError("scores and labels must be equal-length vectors")
    fp = int(np.sum((scores >= tau) & (labels == 0)))
    hours = scores.size * window_s / 3600.0
    return fp / hours


def recall_vs_fa_curve(curve, scenario: Scenario) -> list[tuple[float, float]]:
    """Translated (FA/h, recall) points sorted by FA/h, recall forced
    non-decreasing by the upper envelope."""
    lam = scenario.lambda_per_hour
    points = sorted(
        ((fa * lam, p.recall) for p, fa in _translatable(curve)),
        key=lambda fr: (fr[0], fr[1]),
    )
    best = 0.0
    enveloped = []
    for fa, recall in points:
        best = max(best, recall)
        enveloped.append((fa, best))
    return enveloped
