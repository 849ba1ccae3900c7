"""Selective prediction: threshold routing, error/cost sweeps, operating points.

The routing rule accepts a prediction only when every per-character confidence
clears the threshold; everything else goes to the manual queue. The sweep
quantifies the trade-off between residual error and human workload, charging
a configurable human error rate on the manual share.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .domain import DomainError
from .models import ClassConfidence, ManualRoute, SequencePrediction


@dataclass(frozen=True)
class DecisionPolicy:
    """Accept iff all per-character confidences clear the threshold.

    The boundary is inclusive (>= threshold accepts) by default; the sweep
    grid step makes the distinction immaterial, but it is configurable.
    """

    threshold: float
    human_error_rate: float = 0.03
    inclusive: bool = True

    def __post_init__(self):
        if not 0.0 <= self.threshold <= 1.0:
            raise DomainError("threshold must be in [0, 1]")
        if not 0.0 <= self.human_error_rate < 1.0:
            raise DomainError("human_error_rate must be in [0, 1)")

    def accepts(self, confidences: Sequence[float]) -> bool:
        if not confidences:
            return False
        lo = min(confidences)
        return lo >= self.threshold if self.inclusive else lo > self.threshold


@dataclass(frozen=True)
class Auto:
    value: str


@dataclass(frozen=True)
class Manual:
    reason: str  # low_confidence | malformed | unsegmentable


Prediction = Union[SequencePrediction, ClassConfidence, ManualRoute]


def route(pred: Prediction, policy: DecisionPolicy) -> Union[Auto, Manual]:
    if isinstance(pred, ManualRoute):
        return Manual(reason=pred.reason)
    if isinstance(pred, ClassConfidence):
        if policy.accepts([pred.confidence]):
            return Auto(value=pred.label)
        return Manual(reason="low_confidence")
    if pred.is_malformed:
        return Manual(reason="malformed")
    if policy.accepts(pred.confidences):
        return Auto(value=pred.value)
    return Manual(reason="low_confidence")


@dataclass(frozen=True)
class DecisionCurve:
    """Threshold sweep rows: (threshold, manual fraction, auto error, total error)."""

    thresholds: tuple[float, ...]
    manual_fraction: tuple[float, ...]
    auto_error: tuple[float, ...]
    total_error: tuple[float, ...]
    human_error_rate: float

    def rows(self):
        return zip(self.thresholds, self.manual_fraction, self.auto_error, self.total_error)


def default_grid(step: float = 0.01) -> tuple[float, ...]:
    n = int(round(1.0 / step))
    return tuple(round(i * step, 10) for i in range(n + 1))


def sweep(
    scored: Sequence[tuple[Sequence[float], bool]],
    thresholds: Optional[Sequence[float]] = None,
    human_error_rate: float = 0.03,
    inclusive: bool = True,
) -> DecisionCurve:
    """Evaluate the routing rule at every threshold.

    ``scored`` pairs each item's per-character confidences with whether the
    prediction was correct. Items with no confidences (unsegmentable or
    malformed) are always manual. ``auto_error`` is 0 when nothing is
    accepted; ``total_error`` mixes auto error with the human error rate
    weighted by the manual fraction.
    """
    if not scored:
        raise DomainError("sweep needs at least one scored item")
    grid = tuple(thresholds) if thresholds is not None else default_grid()
    n = len(scored)
    min_conf = np.array(
        [min(c) if len(c) else -np.inf for c, _ in scored], dtype=np.float64
    )
    correct = np.array([bool(ok) for _, ok in scored])

    mf, ae, te = [], [], []
    for t in grid:
        auto = min_conf >= t if inclusive else min_conf > t
        n_auto = int(auto.sum())
        manual_fraction = 1.0 - n_auto / n
        auto_error = float((~correct[auto]).sum() / n_auto) if n_auto else 0.0
        total = (1.0 - manual_fraction) * auto_error + manual_fraction * human_error_rate
        mf.append(manual_fraction)
        ae.append(auto_error)
        te.append(total)
    return DecisionCurve(
        thresholds=grid,
        manual_fraction=tuple(mf),
        auto_error=tuple(ae),
        total_error=tuple(te),
        human_error_rate=human_error_rate,
    )


@dataclass(frozen=True)
class ThresholdChoice:
    threshold: float
    feasible: bool
    manual_fraction: float
    total_error: float


def pick_threshold(
    curve: DecisionCurve,
    max_manual_fraction: float = 1.0,
    max_total_error: float = 1.0,
) -> ThresholdChoice:
    """Smallest threshold meeting both constraints; otherwise the total-error
    minimizer, flagged infeasible."""
    rows = list(curve.rows())
    if not rows:
        raise DomainError("empty decision curve")
    for t, mf, _, te in rows:
        if mf <= max_manual_fraction and te <= max_total_error:
            return ThresholdChoice(threshold=t, feasible=True, manual_fraction=mf, total_error=te)
    t, mf, _, te = min(rows, key=lambda r: (r[3], r[0]))
    return ThresholdChoice(threshold=t, feasible=False, manual_fraction=mf, total_error=te)


@dataclass(frozen=True)
class ManualComposition:
    """How the manual queue divides into already-correct vs incorrect predictions."""

    n_correct_sent: int
    n_wrong_sent: int
    fraction_correct: float
    fraction_wrong: float
    extrapolated_correct: Optional[float] = None
    extrapolated_wrong: Optional[float] = None


def manual_composition(
    scored: Sequence[tuple[Sequence[float], bool]],
    threshold: float,
    population: Optional[int] = None,
    inclusive: bool = True,
) -> ManualComposition:
    """Split the manual-routed items by prediction correctness; optionally
    extrapolate the counts to a larger population's manual queue size."""
    n_correct = n_wrong = 0
    for confs, ok in scored:
        lo = min(confs) if len(confs) else -np.inf
        accepted = lo >= threshold if inclusive else lo > threshold
        if not accepted:
            if ok:
                n_correct += 1
            else:
                n_wrong += 1
    sent = n_correct + n_wrong
    fc = n_correct / sent if sent else 0.0
    fw = n_wrong / sent if sent else 0.0
    ec = ew = None
    if population is not None:
        ec, ew = fc * population, fw * population
    return ManualComposition(n_correct, n_wrong, fc, fw, ec, ew)


def write_curve_csv(curve: DecisionCurve, path: str | Path) -> None:
    """Delimited export, directly plottable as error-vs-manual curves."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["threshold", "manual_fraction", "auto_error", "total_error"])
        for t, mf, ae, te in curve.rows():
            w.writerow([f"{t:.4f}", f"{mf:.6f}", f"{ae:.6f}", f"{te:.6f}"])


def read_curve_csv(path: str | Path) -> DecisionCurve:
    ts, mfs, aes, tes = [], [], [], []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            ts.append(float(row["threshold"]))
            mfs.append(float(row["manual_fraction"]))
            aes.append(float(row["auto_error"]))
            tes.append(float(row["total_error"]))
    return DecisionCurve(tuple(ts), tuple(mfs), tuple(aes), tuple(tes), human_error_rate=0.0)
