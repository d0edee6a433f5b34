"""Heatmap + trajectory affordance network.

A small stride-2 conv encoder produces a spatial latent ``z``; a transposed
conv decoder turns ``z`` into one heatmap per contact mode whose spatial
softmax expectation is the predicted contact mean; a dense head maps the
flattened ``z`` to five relative waypoints.

Layers, autograd and Adam come from torch. The spatial softmax, the matched
contact loss and the trajectory loss are implemented here.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.optimize import linear_sum_assignment
from sklearn.base import BaseEstimator
from torch import nn

from .errors import EmptyDataset, SchemaError, ShapeMismatch
from .extract import crop_side
from .geometry import fit_gmm_em

N_MODES = 5
N_WAYPOINTS = 5
CHECKPOINT_MAGIC = "affordance-checkpoint/1"

torch.set_num_threads(1)


# -------------------------------------------------------------------------- configs


@dataclass
class ModelConfig:
    crop_size: int = 38
    channels: tuple = (8, 16, 32)
    hidden: int = 64
    n_modes: int = N_MODES
    temperature: float = 1.0
    attention: bool = False


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    epochs: int = 60
    batch_size: int = 32
    seed: int = 0
    lambda_traj: float = 1.0
    max_steps: int | None = None

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")


@dataclass
class AffordancePrediction:
    means: np.ndarray
    heatmaps: np.ndarray
    waypoints: np.ndarray


@dataclass
class LossCurve:
    epoch: list = field(default_factory=list)
    contact: list = field(default_factory=list)
    traj: list = field(default_factory=list)

    def total(self, lambda_traj=1.0):
        return [c + lambda_traj * t for c, t in zip(self.contact, self.traj)]

    def to_csv(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("epoch,contact_loss,traj_loss\n")
            for e, c, t in zip(self.epoch, self.contact, self.traj):
                fh.write(f"{e},{c:.10g},{t:.10g}\n")


# -------------------------------------------------------------------------- network


def _encoder_sizes(crop_size, n_layers=3):
    sizes = [crop_size]
    for _ in range(n_layers):
        sizes.append((sizes[-1] + 1) // 2)
    return sizes


def soft_argmax(logits, temperature=1.0):
    """Spatial softmax over the last two axes and the expected ``(x, y)``.

    ``logits`` has shape ``(..., H, W)``; returns ``(probs, points)`` with
    ``points`` of shape ``(..., 2)``.
    """
    h, w = logits.shape[-2:]
    flat = logits.reshape(*logits.shape[:-2], h * w) / temperature
    probs = torch.softmax(flat, dim=-1).reshape(logits.shape)
    xs = torch.arange(w, dtype=logits.dtype)
    ys = torch.arange(h, dtype=logits.dtype)
    x = (probs.sum(dim=-2) * xs).sum(dim=-1)
    y = (probs.sum(dim=-1) * ys).sum(dim=-1)
    return probs, torch.stack([x, y], dim=-1)


class AffordanceNet(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        cfg = config or ModelConfig()
        self.config = cfg
        c1, c2, c3 = cfg.channels
        s = _encoder_sizes(cfg.crop_size)
        self.latent_shape = (c3, s[3], s[3])
        self.encoder = nn.Sequential(
            nn.Conv2d(1, c1, 3, 2, 1), nn.SiLU(),
            nn.Conv2d(c1, c2, 3, 2, 1), nn.SiLU(),
            nn.Conv2d(c2, c3, 3, 2, 1), nn.SiLU(),
        )
        # output_padding picks the odd/even size so the decoder retraces the encoder
        self.decoder = nn.Sequential(
            nn.ConvTranspose2d(c3, c2, 3, 2, 1, output_padding=s[2] - (2 * s[3] - 1)), nn.SiLU(),
            nn.ConvTranspose2d(c2, c1, 3, 2, 1, output_padding=s[1] - (2 * s[2] - 1)), nn.SiLU(),
            nn.ConvTranspose2d(c1, cfg.n_modes, 3, 2, 1, output_padding=s[0] - (2 * s[1] - 1)),
        )
        self.attention = nn.MultiheadAttention(c3, 4, batch_first=True) if cfg.attention else None
        self.traj_head = nn.Sequential(
            nn.Linear(c3 * s[3] * s[3], cfg.hidden), nn.SiLU(),
            nn.Linear(cfg.hidden, cfg.hidden), nn.SiLU(),
            nn.Linear(cfg.hidden, 2 * N_WAYPOINTS),
        )

    def encode(self, x):
        return self.encoder(x - 0.5)

    def forward(self, x):
        """``x``: ``(B, 1, S, S)`` crops in [0, 1]. Returns ``(logits, means, waypoints)``."""
        z = self.encode(x)
        logits = self.decoder(z)
        _, means = soft_argmax(logits, self.config.temperature)
        feats = z
        if self.attention is not None:
            tokens = z.flatten(2).transpose(1, 2)
            attended, _ = self.attention(tokens, tokens, tokens, need_weights=False)
            feats = (tokens + attended).transpose(1, 2).reshape(z.shape)
        waypoints = self.traj_head(feats.flatten(1)).reshape(-1, N_WAYPOINTS, 2)
        return logits, means, waypoints


def build_net(config=None, seed=0):
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        net = AffordanceNet(config).double()
    return net


def _as_batch(crops, size):
    arr = np.asarray(crops, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.shape[-2:] != (size, size):
        raise ShapeMismatch(f"expected {size}x{size} crops, got {arr.shape[-2:]}")
    return torch.from_numpy(arr.reshape(-1, 1, size, size).copy())


def forward(net, crop):
    """Run the network on one crop and return numpy outputs."""
    with torch.no_grad():
        logits, means, wps = net(_as_batch(crop, net.config.crop_size))
        probs, _ = soft_argmax(logits, net.config.temperature)
    return AffordancePrediction(means[0].numpy(), probs[0].numpy(), wps[0].numpy())


# -------------------------------------------------------------------------- losses


def match_modes(pred, target):
    """Min-cost assignment (squared L2) of targets to predicted modes.

    Returns ``(pred_idx, target_idx)``; every target is matched.
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    cost = ((pred[:, None, :] - target[None, :, :]) ** 2).sum(-1)
    rows, cols = linear_sum_assignment(cost)
    return rows, cols


def contact_loss_t(pred, target):
    """Differentiable matched contact loss for one sample (torch tensors)."""
    rows, cols = match_modes(pred.detach().numpy(), target.detach().numpy())
    # vector_norm has a zero subgradient at zero residual; sqrt would give NaN
    return torch.linalg.vector_norm(pred[rows] - target[cols], dim=-1).mean()


def traj_loss_t(pred, target):
    return torch.linalg.vector_norm((pred - target).reshape(-1))


def loss_contact(pred_means, target_means):
    """Mean L2 distance between optimally matched predicted and target means."""
    return float(contact_loss_t(torch.as_tensor(np.asarray(pred_means, dtype=np.float64)),
                                torch.as_tensor(np.asarray(target_means, dtype=np.float64))))


def loss_traj(pred_waypoints, target_waypoints):
    """L2 norm of the stacked waypoint residual."""
    a = np.asarray(pred_waypoints, dtype=np.float64).reshape(-1)
    b = np.asarray(target_waypoints, dtype=np.float64).reshape(-1)
    return float(np.linalg.norm(a - b))


def batch_losses(net, batch):
    """Mean contact and trajectory losses of ``net`` over a list of samples."""
    x = _as_batch([s.crop for s in batch], net.config.crop_size)
    _, means, wps = net(x)
    lc = torch.stack([contact_loss_t(means[i], torch.from_numpy(np.asarray(s.target_means, dtype=np.float64)))
                      for i, s in enumerate(batch)]).mean()
    lt = torch.stack([traj_loss_t(wps[i], torch.from_numpy(np.asarray(s.target_waypoints, dtype=np.float64)))
                      for i, s in enumerate(batch)]).mean()
    return lc, lt


def total_loss(net, batch, lambda_traj=1.0):
    lc, lt = batch_losses(net, batch)
    return lc + lambda_traj * lt


def backward(net, batch, lambda_traj=1.0):
    """Analytic gradients of the total loss, keyed by parameter name."""
    if not batch:
        raise EmptyDataset("batch is empty")
    net.zero_grad()
    loss = total_loss(net, batch, lambda_traj)
    loss.backward()
    grads = {n: (p.grad.detach().numpy().copy() if p.grad is not None else np.zeros(tuple(p.shape)))
             for n, p in net.named_parameters()}
    net.zero_grad()
    return grads


def finite_difference_check(net, batch, n_coords=100, eps=1e-4, lambda_traj=1.0, rng=None):
    """Analytic vs central-difference gradients on randomly chosen coordinates.

    Returns ``(analytic, numeric, rel_error)`` arrays of length ``n_coords``;
    the relative error uses ``max(|a|, |n|, 1e-8)`` as its denominator.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    grads = backward(net, batch, lambda_traj)
    params = list(net.named_parameters())
    sizes = np.array([p.numel() for _, p in params])
    flat = rng.choice(int(sizes.sum()), size=n_coords, replace=False)
    bounds = np.cumsum(sizes)
    analytic, numeric = [], []
    with torch.no_grad():
        for f in flat:
            i = int(np.searchsorted(bounds, f, side="right"))
            j = int(f - (bounds[i - 1] if i else 0))
            name, p = params[i]
            view = p.view(-1)
            orig = view[j].item()
            view[j] = orig + eps
            up = float(total_loss(net, batch, lambda_traj))
            view[j] = orig - eps
            down = float(total_loss(net, batch, lambda_traj))
            view[j] = orig
            analytic.append(grads[name].reshape(-1)[j])
            numeric.append((up - down) / (2 * eps))
    a, n = np.array(analytic), np.array(numeric)
    rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
    return a, n, rel


# -------------------------------------------------------------------------- training


def cosine_lr(base, step, total):
    return base * 0.5 * (1.0 + math.cos(math.pi * min(step, total) / max(total, 1)))


def train(samples, config=None, model_config=None, net=None, callback=None):
    """Adam with a cosine-decayed step size. Returns ``(net, LossCurve)``."""
    if not samples:
        raise EmptyDataset("no training samples")
    cfg = config or TrainConfig()
    if net is None:
        mcfg = model_config or ModelConfig(crop_size=samples[0].crop.shape[0])
        net = build_net(mcfg, cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    n = len(samples)
    bs = min(cfg.batch_size, n)
    steps_per_epoch = math.ceil(n / bs)
    total_steps = cfg.max_steps or cfg.epochs * steps_per_epoch
    opt = torch.optim.Adam(net.parameters(), lr=cfg.learning_rate)
    curve = LossCurve()
    step = 0
    epoch = 0
    while step < total_steps:
        order = rng.permutation(n)
        sum_c = sum_t = 0.0
        count = 0
        for start in range(0, n, bs):
            if step >= total_steps:
                break
            batch = [samples[i] for i in order[start : start + bs]]
            for g in opt.param_groups:
                g["lr"] = cosine_lr(cfg.learning_rate, step, total_steps)
            opt.zero_grad()
            lc, lt = batch_losses(net, batch)
            (lc + cfg.lambda_traj * lt).backward()
            lc, lt = lc.detach(), lt.detach()
            if cfg.learning_rate > 0:
                opt.step()
            sum_c += float(lc) * len(batch)
            sum_t += float(lt) * len(batch)
            count += len(batch)
            step += 1
            if callback is not None:
                callback(step, float(lc), float(lt))
        curve.epoch.append(epoch)
        curve.contact.append(sum_c / count)
        curve.traj.append(sum_t / count)
        epoch += 1
    return net, curve


# -------------------------------------------------------------------------- inference


def predict_crops(net, crops, chunk=256):
    """Batched forward pass: returns ``(means (B, K, 2), waypoints (B, 5, 2))``."""
    x = _as_batch(crops, net.config.crop_size)
    means, wps = [], []
    with torch.no_grad():
        for i in range(0, x.shape[0], chunk):
            _, m, w = net(x[i : i + chunk])
            means.append(m.numpy())
            wps.append(w.numpy())
    return np.concatenate(means), np.concatenate(wps)


def sample_crops(image, side, n, rng):
    h, w = image.shape
    ox = rng.integers(0, w - side + 1, size=n)
    oy = rng.integers(0, h - side + 1, size=n)
    crops = np.stack([image[y : y + side, x : x + side] for x, y in zip(ox, oy)])
    return crops, np.column_stack([ox, oy]).astype(np.float64)


def query(net, image, n_queries, rng):
    """Per-query contact means (image coords) and waypoints from random crops."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    side = net.config.crop_size
    crops, offsets = sample_crops(np.asarray(image, dtype=np.float64), side, n_queries, rng)
    means, wps = predict_crops(net, crops)
    return means + offsets[:, None, :], wps


def infer_full(net, image, n_queries=16, rng=None, fixed_std=None, seed=0):
    """Aggregate predictions over random crops of a full image.

    Returns ``(contact Gmm2D, mean waypoints)``.
    """
    if n_queries < 1:
        raise ValueError("n_queries must be at least 1")
    means, wps = query(net, image, n_queries, rng)
    pts = means.reshape(-1, 2)
    std = 0.02 * np.asarray(image).shape[1] if fixed_std is None else fixed_std
    gmm = fit_gmm_em(pts, k=min(N_MODES, len(pts)), fixed_std=std, seed=seed)
    return gmm, wps.mean(axis=0)


def encode_images(net, images):
    """Flattened encoder latents of full images (any size)."""
    arr = np.asarray(images, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    x = torch.from_numpy(arr[:, None].copy())
    with torch.no_grad():
        return net.encode(x).flatten(1).numpy()


# -------------------------------------------------------------------------- checkpoints


def save_checkpoint(path, net, extra=None):
    """JSON header line followed by the flat little-endian float32 parameters."""
    layers, chunks = [], []
    for name, t in net.state_dict().items():
        layers.append({"name": name, "shape": list(t.shape)})
        chunks.append(t.detach().numpy().astype("<f4").reshape(-1))
    cfg = asdict(net.config)
    cfg["channels"] = list(cfg["channels"])
    header = {"format": CHECKPOINT_MAGIC, "model": cfg, "layers": layers, "extra": extra or {}}
    blob = np.concatenate(chunks) if chunks else np.zeros(0, "<f4")
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8") + b"\n")
        fh.write(blob.tobytes())


def load_checkpoint(path):
    raw = Path(path).read_bytes()
    nl = raw.index(b"\n")
    header = json.loads(raw[:nl].decode("utf-8"))
    if header.get("format") != CHECKPOINT_MAGIC:
        raise SchemaError(f"{path}: not an affordance checkpoint")
    m = header["model"]
    m["channels"] = tuple(m["channels"])
    net = build_net(ModelConfig(**m))
    flat = np.frombuffer(raw[nl + 1 :], dtype="<f4")
    state, pos = {}, 0
    for layer in header["layers"]:
        size = int(np.prod(layer["shape"])) if layer["shape"] else 1
        if pos + size > flat.size:
            raise SchemaError(f"{path}: parameter data truncated at {layer['name']}")
        state[layer["name"]] = torch.from_numpy(flat[pos : pos + size].astype(np.float64).reshape(layer["shape"]))
        pos += size
    net.load_state_dict(state)
    return net, header.get("extra", {})


# -------------------------------------------------------------------------- estimator


class AffordanceModel(BaseEstimator):
    """Estimator facade over :class:`AffordanceNet`.

    ``fit`` takes a list of training samples; ``predict`` takes crops and
    returns ``(means, waypoints)``; ``infer`` aggregates over random crops of
    a full image.
    """

    def __init__(self, crop_size=38, learning_rate=1e-3, epochs=60, batch_size=32, lambda_traj=1.0,
                 temperature=1.0, attention=False, random_state=0):
        self.crop_size = crop_size
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.lambda_traj = lambda_traj
        self.temperature = temperature
        self.attention = attention
        self.random_state = random_state

    def _configs(self):
        mc = ModelConfig(crop_size=self.crop_size, temperature=self.temperature, attention=self.attention)
        tc = TrainConfig(self.learning_rate, self.epochs, self.batch_size, self.random_state, self.lambda_traj)
        return mc, tc

    def fit(self, samples, y=None):
        mc, tc = self._configs()
        if samples and samples[0].crop.shape[0] != mc.crop_size:
            raise ShapeMismatch(f"samples are {samples[0].crop.shape[0]}px, model expects {mc.crop_size}px")
        self.net_, self.loss_curve_ = train(samples, tc, mc)
        return self

    @classmethod
    def from_net(cls, net):
        est = cls(crop_size=net.config.crop_size, temperature=net.config.temperature, attention=net.config.attention)
        est.net_ = net
        return est

    def predict(self, crops):
        return predict_crops(self.net_, crops)

    def infer(self, image, n_queries=16, rng=None):
        return infer_full(self.net_, image, n_queries, rng)

    def query(self, image, n_queries, rng=None):
        return query(self.net_, image, n_queries, rng)

    def encode(self, images):
        return encode_images(self.net_, images)

    def crop_fraction_for(self, image_size):
        return self.crop_size / image_size


def default_crop_size(image_size=64, crop_fraction=0.6):
    return crop_side(image_size, crop_fraction)
