"""Discretized affordance action space and a value-based learner over it."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np
import torch
from sklearn.cluster import KMeans
from torch import nn

from ..geometry import fit_gmm_em
from ..model import query
from ..world import N_WAYPOINTS


@dataclass(frozen=True)
class DiscreteActionMap:
    """Cross product of ``N_c`` contact centers and ``N_tau`` trajectory centers.

    Action ``a`` maps to contact ``a // N_tau`` and trajectory ``a % N_tau``.
    """

    contact_centers: np.ndarray
    trajectory_centers: np.ndarray

    @property
    def n_contacts(self):
        return len(self.contact_centers)

    @property
    def n_trajectories(self):
        return len(self.trajectory_centers)

    def __len__(self):
        return self.n_contacts * self.n_trajectories

    def action(self, a):
        if not 0 <= a < len(self):
            raise IndexError(f"action {a} outside table of {len(self)}")
        ci, ti = divmod(int(a), self.n_trajectories)
        return self.contact_centers[ci], self.trajectory_centers[ti]

    def table(self):
        return [self.action(a) for a in range(len(self))]


def build_action_space(net, image, q=2000, n_c=4, n_tau=4, seed=0, fixed_std=None):
    """Query the model ``q`` times and cluster contacts and trajectories."""
    if q < n_c or q < n_tau:
        raise ValueError("q must be at least n_c and n_tau")
    rng = np.random.default_rng(seed)
    means, wps = query(net, image, q, rng)
    pick = rng.integers(means.shape[1], size=q)
    contacts = means[np.arange(q), pick]
    std = 0.02 * np.asarray(image).shape[1] if fixed_std is None else fixed_std
    gmm = fit_gmm_em(contacts, k=n_c, fixed_std=std, seed=seed)
    km = KMeans(n_clusters=n_tau, n_init=10, random_state=seed).fit(wps.reshape(q, -1))
    tau = km.cluster_centers_.reshape(n_tau, N_WAYPOINTS, 2)
    return DiscreteActionMap(np.asarray(gmm.means, dtype=np.float64), tau)


class QNetwork(nn.Module):
    """Action values from a state embedding; two hidden layers."""

    def __init__(self, state_dim, n_actions, hidden=64):
        super().__init__()
        self.body = nn.Sequential(
            nn.Linear(state_dim, hidden), nn.ReLU(), nn.Linear(hidden, hidden), nn.ReLU(), nn.Linear(hidden, n_actions)
        )

    def forward(self, x):
        return self.body(x)

    def values(self, state):
        with torch.no_grad():
            return self.body(torch.as_tensor(np.asarray(state, dtype=np.float64)).reshape(1, -1))[0].numpy()


@dataclass(frozen=True)
class DqnConfig:
    """Learner settings.

    ``reward_sign=-1`` rewards approaching the goal; ``+1`` is the literal
    distance reward. ``reward_scale="auto"`` divides by the goal distance of
    the initial image.
    """

    gamma: float = 0.0
    eps_start: float = 1.0
    eps_end: float = 0.1
    eps_fraction: float = 0.5
    replay_capacity: int = 2000
    batch_size: int = 32
    target_sync: int = 50
    learning_rate: float = 1e-3
    seed: int = 0
    reward_sign: float = -1.0
    reward_scale: object = "auto"
    window: int = 50

    def epsilon(self, step, steps):
        horizon = max(1, int(self.eps_fraction * steps))
        if step >= horizon:
            return self.eps_end
        return self.eps_start + (self.eps_end - self.eps_start) * step / horizon


def _goal_reward(psi_final, psi_goal, sign, scale):
    return sign * float(np.linalg.norm(psi_final - psi_goal)) / scale


def dqn_train(world, action_map, goal_image, psi, steps, config=None):
    """Single-action episodes from the reset scene with replay and a target net.

    Returns ``(qnet, success_curve, action_counts)``; the curve is the rolling
    goal-success rate over ``config.window`` steps.
    """
    if steps < 1:
        raise ValueError("steps must be at least 1")
    cfg = config or DqnConfig()
    rng = np.random.default_rng(cfg.seed)
    g = psi(np.asarray(goal_image)[None])[0]
    image = world.image()
    s0 = psi(image[None])[0]
    if cfg.reward_scale == "auto":
        scale = float(np.linalg.norm(s0 - g)) or 1.0
    else:
        scale = float(cfg.reward_scale)
    n_actions = len(action_map)
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        qnet = QNetwork(len(s0), n_actions).double()
        target = QNetwork(len(s0), n_actions).double()
    target.load_state_dict(qnet.state_dict())
    opt = torch.optim.Adam(qnet.parameters(), lr=cfg.learning_rate)
    replay = deque(maxlen=cfg.replay_capacity)
    wins = deque(maxlen=cfg.window)
    curve, counts = [], np.zeros(n_actions, dtype=np.int64)
    for step in range(steps):
        world.reset()
        if rng.random() < cfg.epsilon(step, steps):
            a = int(rng.integers(n_actions))
        else:
            a = int(np.argmax(qnet.values(s0)))
        counts[a] += 1
        c, tau = action_map.action(a)
        rec = world.execute(c, tau, rng, rollout_id=step, source="dqn")
        s1 = psi(rec.terminal_image[None])[0]
        replay.append((s0, a, s1, _goal_reward(s1, g, cfg.reward_sign, scale)))
        wins.append(rec.any_success)
        curve.append(float(np.mean(wins)))

        idx = rng.integers(len(replay), size=min(cfg.batch_size, len(replay)))
        s, acts, s_next, r = zip(*(replay[i] for i in idx))
        s = torch.from_numpy(np.stack(s))
        y = torch.tensor(r, dtype=torch.float64)
        if cfg.gamma:
            with torch.no_grad():
                y = y + cfg.gamma * target(torch.from_numpy(np.stack(s_next))).max(dim=1).values
        pred = qnet(s).gather(1, torch.tensor(acts).reshape(-1, 1))[:, 0]
        loss = ((pred - y) ** 2).mean()
        opt.zero_grad()
        loss.backward()
        opt.step()
        if (step + 1) % cfg.target_sync == 0:
            target.load_state_dict(qnet.state_dict())
    return qnet, curve, counts


def greedy_action(qnet, world, psi):
    return int(np.argmax(qnet.values(psi(world.image()[None])[0])))


def evaluate_actions(world, action_map, actions, rng=None):
    """Goal-success rate of executing each listed action from a reset scene."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    wins = [world.execute(*action_map.action(a), rng, rollout_id=i, source="eval").any_success
            for i, a in enumerate(actions)]
    return float(np.mean(wins)) if wins else 0.0


def goal_achieving_actions(world, action_map, rng=None):
    """Indices whose noiseless execution reaches a goal."""
    return [a for a in range(len(action_map)) if evaluate_actions(world, action_map, [a], rng) == 1.0]
