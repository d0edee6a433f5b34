"""Data collection, ranking, elite fitting and the explore / goal-reaching loop."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InsufficientData, OutOfWorkspace
from ..geometry import sample_gmm
from ..model import infer_full
from ..world import N_WAYPOINTS, CameraPose, execute_affordance, render, rotation_class
from .features import EnvChangeModel, env_change

RANDOM_TAU_MAX = 3.0


@dataclass
class World:
    """A resettable task: the initial scene, its camera and the goals to score."""

    scene: object
    camera: CameraPose = field(default_factory=CameraPose)
    goals: tuple = ()
    grasp_radius: float = 3.0
    rotation_policy: str = "trajectory"

    def reset(self):
        return self.scene

    def image(self):
        return render(self.scene, self.camera)

    def clamp(self, c):
        lo, hi = self.scene.bounds
        return np.clip(c, lo, hi)

    def choose_rotation(self, tau, rng):
        if self.rotation_policy == "random":
            return int(rng.integers(3))
        return rotation_class(np.asarray(tau).sum(axis=0))

    def execute(self, c, tau, rng, rollout_id=0, source="", rotation=None):
        c = self.clamp(np.asarray(c, dtype=np.float64))
        rot = self.choose_rotation(tau, rng) if rotation is None else rotation
        record, _ = execute_affordance(self.reset(), self.camera, c, tau, rot, rng, goals=self.goals,
                                       grasp_radius=self.grasp_radius, rollout_id=rollout_id, source=source)
        return record


@dataclass(frozen=True)
class EliteDistribution:
    mean_c: np.ndarray
    mean_tau: np.ndarray
    std_c: float = 2.0
    std_tau: float = 1.0

    def sample(self, rng):
        c = self.mean_c + rng.normal(0.0, 1.0, size=2) * self.std_c
        tau = self.mean_tau + rng.normal(0.0, 1.0, size=(N_WAYPOINTS, 2)) * self.std_tau
        return c, tau


def fit_elite(top, std_c=2.0, std_tau=1.0):
    """Mean ``(c, tau)`` of the given (top-ranked) rollouts."""
    if not top:
        raise InsufficientData("no rollouts to fit")
    c = np.mean([r.contact for r in top], axis=0)
    tau = np.mean([np.asarray(r.waypoints).reshape(-1) for r in top], axis=0).reshape(N_WAYPOINTS, 2)
    return EliteDistribution(c, tau, std_c, std_tau)


class ModelPolicy:
    """Stochastic ``(c, tau)`` proposals from a trained affordance network."""

    def __init__(self, net, n_queries=16):
        self.net = net
        self.n_queries = n_queries

    def propose(self, image, rng):
        gmm, tau = infer_full(self.net, image, self.n_queries, rng)
        return sample_gmm(gmm, rng), tau


def random_action(world, rng, tau_max=RANDOM_TAU_MAX):
    lo, hi = world.scene.bounds
    return rng.uniform(lo, hi, size=2), rng.uniform(-tau_max, tau_max, size=(N_WAYPOINTS, 2))


def collect(world, source, n, p=1.0, rng=None, model=None, elite=None, start_id=0):
    """Execute ``n`` rollouts from a reset scene.

    ``source`` is ``"model"`` (mix model proposals with probability ``p`` and
    elite samples otherwise), ``"elite"`` (elite samples only) or
    ``"random"``.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    image = world.image()
    out = []
    for i in range(n):
        if source == "random":
            c, tau, tag = *random_action(world, rng), "random"
        elif source == "elite" or (source == "model" and elite is not None and rng.random() >= p):
            c, tau = elite.sample(rng)
            tag = "elite"
        elif source == "model":
            c, tau = model.propose(image, rng)
            tag = "model"
        else:
            raise ValueError(f"unknown policy source {source!r}")
        try:
            out.append(world.execute(c, tau, rng, rollout_id=start_id + i, source=tag))
        except OutOfWorkspace:
            out.append(world.execute(world.clamp(c), tau, rng, rollout_id=start_id + i, source=tag))
    return out


# -------------------------------------------------------------------------- ranking


def goal_distance(rollout, goal_embedding, psi, metric="min"):
    """Squared feature distance to the goal: min over observations, or final image."""
    if metric == "min":
        feats = psi(np.stack(rollout.observations))
        return float(np.min(np.sum((feats - goal_embedding) ** 2, axis=1)))
    if metric == "final":
        f = psi(rollout.terminal_image[None])[0]
        return float(np.sum((f - goal_embedding) ** 2))
    raise ValueError(f"unknown goal metric {metric!r}")


def rank_by_goal(dataset, goal_image, psi, metric="min"):
    """Ascending goal distance; ties keep rollout-id order."""
    if not dataset:
        raise InsufficientData("empty dataset")
    g = psi(np.asarray(goal_image)[None])[0]
    keyed = [(goal_distance(r, g, psi, metric), r.rollout_id, r) for r in dataset]
    keyed.sort(key=lambda t: (t[0], t[1]))
    return [r for _, _, r in keyed]


def exploration_score(rollout, phi, psi=None):
    return env_change(phi, rollout.observations[0], rollout.observations[-1],
                      rollout.observation_masks[0], rollout.observation_masks[-1], psi)


def rank_by_exploration(dataset, phi=None, psi=None):
    """Descending environment change between first and last observation."""
    if not dataset:
        raise InsufficientData("empty dataset")
    phi = phi or EnvChangeModel()
    keyed = [(-exploration_score(r, phi, psi), r.rollout_id, r) for r in dataset]
    keyed.sort(key=lambda t: (t[0], t[1]))
    return [r for _, _, r in keyed]


def knn_execute(dataset, goal_image, psi, world, k=10, rng=None, metric="min"):
    """Re-execute the ``k`` nearest rollouts to the goal; return their success rate."""
    if len(dataset) < k:
        raise InsufficientData(f"need {k} rollouts, have {len(dataset)}")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    top = rank_by_goal(dataset, goal_image, psi, metric)[:k]
    wins = 0
    for r in top:
        rec = world.execute(r.contact, r.waypoints, rng, rotation=r.rotation)
        wins += rec.any_success
    return wins / k


# -------------------------------------------------------------------------- loop


@dataclass
class IterationStats:
    iteration: int
    n_rollouts: int
    success_rate: float
    mean_env_change: float
    n_from_model: int


def run_paradigm_loop(world, policy, mode="explore", goal_image=None, psi=None, phi=None, j=2, n0=30, ns=30,
                      k=10, p=0.35, rng=None, std_c=2.0, std_tau=1.0, goal_metric="min", initial_source="model"):
    """Iterated collect / rank / elite-fit loop for exploration or goal reaching.

    Returns ``(dataset, stats)`` with one :class:`IterationStats` for the
    initial batch and one per fitting iteration. In explore mode the success
    rate counts any configured goal reached (coincidental success); in goal
    mode it is the rate for the conditioned goal.
    """
    if n0 < k or ns < k:
        raise InsufficientData("n0 and ns must be at least k")
    if mode == "goal" and (goal_image is None or psi is None):
        raise ValueError("goal mode needs a goal image and an embedding")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    phi = phi or EnvChangeModel()

    def summarize(it, batch):
        sr = float(np.mean([r.any_success for r in batch])) if batch else 0.0
        ec = float(np.mean([exploration_score(r, phi) for r in batch])) if batch else 0.0
        return IterationStats(it, len(batch), sr, ec, sum(r.source == "model" for r in batch))

    dataset = collect(world, initial_source, n0, 1.0, rng, model=policy)
    stats = [summarize(0, dataset)]
    for it in range(1, j + 1):
        if mode == "explore":
            ranked = rank_by_exploration(dataset, phi)
        elif mode == "goal":
            ranked = rank_by_goal(dataset, goal_image, psi, goal_metric)
        else:
            raise ValueError(f"unknown mode {mode!r}")
        elite = fit_elite(ranked[:k], std_c, std_tau)
        source = "model" if policy is not None else "elite"
        batch = collect(world, source, ns, p, rng, model=policy, elite=elite, start_id=len(dataset))
        dataset = dataset + batch
        stats.append(summarize(it, batch))
    return dataset, stats
