"""Split conformal prediction on top of any fitted binary scorer.

The nonconformity of a (row, label) pair is ``1 - P(label)``, where
``P(1)`` is the model's decision score and ``P(0) = 1 - P(1)``. Ties with
calibration scores count towards the p-value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError, LeakageError
from .cv_engine import Violation

DEFAULT_EPSILON = 0.1


@dataclass(frozen=True, eq=False)
class ConformalCalibration:
    model: object
    scores: np.ndarray
    epsilon: float = DEFAULT_EPSILON

    @property
    def n_cal(self) -> int:
        return int(self.scores.shape[0])


def nonconformity(model, rows, labels) -> np.ndarray:
    p1 = np.asarray(model.decision_score(np.atleast_2d(np.asarray(rows, dtype=float))), dtype=float)
    labels = np.asarray(labels)
    return np.clip(np.where(labels == 1, 1.0 - p1, p1), 0.0, 1.0)


def calibrate(f, rows, labels, ids=None, epsilon: float = DEFAULT_EPSILON) -> ConformalCalibration:
    """Score calibration subjects against their true labels.

    When ``ids`` are given and the model records the ids it was fitted on
    (``fit_ids``), any overlap raises :class:`LeakageError`.
    """
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    labels = np.asarray(labels).astype(int)
    if rows.shape[0] == 0:
        raise DataError("empty calibration set")
    if rows.shape[0] != labels.shape[0]:
        raise DataError(f"{rows.shape[0]} calibration rows but {labels.shape[0]} labels")
    if not 0 < epsilon < 1:
        raise DataError(f"epsilon must be in (0, 1), got {epsilon}")
    fit_ids = getattr(f, "fit_ids", None)
    if ids is not None and fit_ids:
        overlap = sorted(set(ids) & set(fit_ids))
        if overlap:
            raise LeakageError([Violation(-1, -1, -1, -1, "calibrate", tuple(overlap))])
    scores = np.sort(nonconformity(f, rows, labels))
    scores.setflags(write=False)
    return ConformalCalibration(f, scores, float(epsilon))


def p_value_from_score(cal: ConformalCalibration, s_new: float) -> float:
    # scores are sorted: count of entries >= s_new via a left bisection
    n_ge = cal.n_cal - int(np.searchsorted(cal.scores, s_new, side="left"))
    return (n_ge + 1) / (cal.n_cal + 1)


def p_value(cal: ConformalCalibration, row, label: int) -> float:
    s_new = float(nonconformity(cal.model, row, [label])[0])
    return p_value_from_score(cal, s_new)


def prediction_set(cal: ConformalCalibration, row, epsilon: float | None = None) -> list[int]:
    """Labels whose p-value exceeds ``epsilon``; may be empty or both."""
    eps = cal.epsilon if epsilon is None else epsilon
    if not 0 < eps < 1:
        raise DataError(f"epsilon must be in (0, 1), got {eps}")
    return [lab for lab in (0, 1) if p_value(cal, row, lab) > eps]
