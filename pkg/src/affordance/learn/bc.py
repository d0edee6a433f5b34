"""Conditional latent-variable behavior cloning over ``(c, tau)`` actions."""

from __future__ import annotations

import numpy as np
import torch
from sklearn.base import BaseEstimator
from torch import nn

from ..errors import InsufficientData
from ..world import N_WAYPOINTS
from .paradigms import rank_by_goal

ACTION_DIM = 2 + 2 * N_WAYPOINTS
_C_SCALE = 64.0
_TAU_SCALE = 4.0


def _mlp(d_in, d_out, hidden=64):
    return nn.Sequential(nn.Linear(d_in, hidden), nn.ReLU(), nn.Linear(hidden, hidden), nn.ReLU(), nn.Linear(hidden, d_out))


def pack_action(c, tau):
    return np.concatenate([np.asarray(c) / _C_SCALE, np.asarray(tau).reshape(-1) / _TAU_SCALE])


def unpack_action(a):
    a = np.asarray(a)
    return a[:2] * _C_SCALE, a[2:].reshape(N_WAYPOINTS, 2) * _TAU_SCALE


class _Cvae(nn.Module):
    def __init__(self, ctx_dim, latent_dim, hidden):
        super().__init__()
        self.latent_dim = latent_dim
        self.enc = _mlp(ctx_dim + ACTION_DIM, 2 * latent_dim, hidden)
        self.dec = _mlp(ctx_dim + latent_dim, ACTION_DIM, hidden)

    def forward(self, ctx, act):
        mu, logvar = self.enc(torch.cat([ctx, act], dim=1)).chunk(2, dim=1)
        z = mu + torch.randn_like(mu) * torch.exp(0.5 * logvar)
        return self.dec(torch.cat([ctx, z], dim=1)), mu, logvar


class BcPolicy(BaseEstimator):
    """CVAE policy ``pi(c, tau | image)``; the image embedding is the context.

    Parameters
    ----------
    latent_dim : int, default=4
    hidden : int, default=64
        Width of the two hidden layers of encoder and decoder.
    beta : float, default=1e-3
        KL weight.
    epochs : int, default=500
        Full-batch Adam steps.
    """

    def __init__(self, latent_dim=4, hidden=64, beta=1e-3, epochs=500, learning_rate=1e-3, random_state=0):
        self.latent_dim = latent_dim
        self.hidden = hidden
        self.beta = beta
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.random_state = random_state

    def fit(self, contexts, actions):
        ctx = np.asarray(contexts, dtype=np.float64)
        act = np.asarray(actions, dtype=np.float64)
        if ctx.shape[0] == 0:
            raise InsufficientData("no training pairs")
        self.ctx_mean_ = ctx.mean(axis=0)
        self.ctx_scale_ = ctx.std(axis=0) + 1.0
        x = torch.from_numpy((ctx - self.ctx_mean_) / self.ctx_scale_)
        y = torch.from_numpy(act)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(self.random_state)
            self.net_ = _Cvae(ctx.shape[1], self.latent_dim, self.hidden).double()
            opt = torch.optim.Adam(self.net_.parameters(), lr=self.learning_rate)
            self.loss_curve_ = []
            for _ in range(self.epochs):
                opt.zero_grad()
                recon, mu, logvar = self.net_(x, y)
                rec = ((recon - y) ** 2).sum(dim=1).mean()
                kl = (-0.5 * (1 + logvar - mu**2 - logvar.exp()).sum(dim=1)).mean()
                loss = rec + self.beta * kl
                loss.backward()
                opt.step()
                self.loss_curve_.append(float(loss.detach()))
        return self

    def sample(self, context, rng):
        """Decode one action for ``context`` with a prior latent draw from ``rng``."""
        ctx = (np.asarray(context, dtype=np.float64).reshape(1, -1) - self.ctx_mean_) / self.ctx_scale_
        z = rng.normal(size=(1, self.latent_dim))
        with torch.no_grad():
            a = self.net_.dec(torch.from_numpy(np.concatenate([ctx, z], axis=1)))[0].numpy()
        return unpack_action(a)


def bc_train(dataset, goal_image, psi, k=20, epochs=500, seed=0, **params):
    """Fit a policy on the ``k`` rollouts nearest the goal."""
    if len(dataset) < k:
        raise InsufficientData(f"need {k} rollouts, have {len(dataset)}")
    top = rank_by_goal(dataset, goal_image, psi)[:k]
    ctx = psi(np.stack([r.initial_image for r in top]))
    acts = np.stack([pack_action(r.contact, r.waypoints) for r in top])
    return BcPolicy(epochs=epochs, random_state=seed, **params).fit(ctx, acts)


def bc_execute(policy, world, psi, runs=10, rng=None):
    """Success rate of ``runs`` policy samples on reset scenes."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    ctx = psi(world.image()[None])[0]
    wins = 0
    for i in range(runs):
        c, tau = policy.sample(ctx, rng)
        wins += world.execute(c, tau, rng, rollout_id=i, source="bc").any_success
    return wins / runs
