"""Rollout diagnostics: goal feature-distance curves and outcome categories."""

from __future__ import annotations

import numpy as np
from scipy.stats import spearmanr

SUCCESS = "Success"
PARTIAL = "PartialSuccess"
FAILURE = "Failure"
PARTIAL_FRACTION = 0.1


def feature_distance_curve(rollout, goal_image, psi):
    """Per-observation embedding distance to the goal image."""
    obs = np.stack(rollout.observations)
    if len(obs) < 2:
        raise ValueError("need at least two observations")
    g = psi(np.asarray(goal_image)[None])[0]
    return [float(d) for d in np.linalg.norm(psi(obs) - g, axis=1)]


def time_correlation(curve):
    """Spearman rank correlation of a curve against its time index."""
    curve = np.asarray(curve, dtype=np.float64)
    if np.ptp(curve) == 0:
        return 0.0
    return float(spearmanr(np.arange(len(curve)), curve).statistic)


def classify_outcome(rollout, goal, scene):
    """Success, PartialSuccess or Failure for ``goal`` on a rollout from ``scene``."""
    idx = [o.id for o in scene.objects].index(goal.object_id)
    obj = scene.objects[idx]
    q = obj.q + float(rollout.displacements[idx])
    reached = q >= goal.threshold if goal.opening else q <= goal.threshold
    if reached:
        return SUCCESS
    span = obj.q_max - obj.q_min
    if abs(float(rollout.displacements[idx])) >= PARTIAL_FRACTION * span:
        return PARTIAL
    return FAILURE
