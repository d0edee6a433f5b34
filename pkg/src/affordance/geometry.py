"""Numerical primitives: homographies, fixed-covariance GMMs, spatial softmax
and Savitzky-Golay smoothing.

Points are plain ``numpy`` arrays with a trailing axis of length 2 holding
``(x, y)`` pixel coordinates, ``x`` along columns and ``y`` along rows.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import savgol_filter
from scipy.special import logsumexp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils import check_array, check_random_state
from sklearn.utils.validation import check_is_fitted

from .errors import (
    BadWindow,
    DegenerateConfiguration,
    DegenerateProjection,
    EmptyInput,
    InsufficientCorrespondences,
)

_DET_EPS = 1e-12
_DENOM_EPS = 1e-12


def check_points(points, name="points", allow_empty=False):
    """Validate and convert ``points`` into a finite ``(n, 2)`` float array."""
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1 and arr.size == 0:
        arr = arr.reshape(0, 2)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"{name} must have shape (n, 2), got {arr.shape}")
    if arr.shape[0] == 0:
        if allow_empty:
            return arr
        raise EmptyInput(f"{name} is empty")
    return check_array(arr, dtype=np.float64, input_name=name)


# --------------------------------------------------------------------------
# Homographies


@dataclass(frozen=True, eq=False)
class Homography:
    """An invertible 3x3 projective transform, stored normalized."""

    m: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=np.float64).reshape(3, 3)
        if not np.all(np.isfinite(m)):
            raise DegenerateProjection("homography has non-finite entries")
        if abs(m[2, 2]) > _DET_EPS:
            m = m / m[2, 2]
        else:
            norm = np.linalg.norm(m)
            if norm == 0:
                raise DegenerateProjection("homography is the zero matrix")
            m = m / norm
        if abs(np.linalg.det(m)) <= _DET_EPS:
            raise DegenerateProjection("homography is singular")
        m.setflags(write=False)
        object.__setattr__(self, "m", m)

    @classmethod
    def identity(cls):
        return cls(np.eye(3))

    @classmethod
    def from_similarity(cls, translation=(0.0, 0.0), rotation=0.0, scale=1.0):
        c, s = np.cos(rotation), np.sin(rotation)
        tx, ty = translation
        return cls(np.array([[scale * c, -scale * s, tx], [scale * s, scale * c, ty], [0.0, 0.0, 1.0]]))

    def inverse(self):
        return Homography(np.linalg.inv(self.m))

    def __call__(self, p):
        return apply_homography(self, p)

    def __matmul__(self, other):
        return compose(self, other)

    def allclose(self, other, atol=1e-9):
        return bool(np.allclose(self.m, other.m, atol=atol, rtol=0.0))

    def __repr__(self):
        return f"Homography({np.array2string(self.m, precision=6)})"


def apply_homography(h, p):
    """Map point(s) ``p`` of shape ``(2,)`` or ``(n, 2)`` through ``h``."""
    p = np.asarray(p, dtype=np.float64)
    single = p.ndim == 1
    pts = p.reshape(-1, 2)
    hom = pts @ h.m[:, :2].T + h.m[:, 2]
    w = hom[:, 2]
    if np.any(np.abs(w) <= _DENOM_EPS):
        raise DegenerateProjection("projected point has a vanishing homogeneous coordinate")
    out = hom[:, :2] / w[:, None]
    return out[0] if single else out


def compose(ha, hb):
    """Homography equivalent to applying ``hb`` first, then ``ha``."""
    m = ha.m @ hb.m
    if abs(np.linalg.det(m / np.abs(m).max())) <= _DET_EPS:
        raise DegenerateProjection("composed homography is singular")
    return Homography(m)


def _hartley_normalizer(pts):
    centroid = pts.mean(axis=0)
    mean_dist = np.mean(np.linalg.norm(pts - centroid, axis=1))
    if mean_dist <= 1e-12:
        raise DegenerateConfiguration("all points coincide")
    s = np.sqrt(2.0) / mean_dist
    return np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])


def estimate_homography(src, dst):
    """Normalized direct linear transform from point correspondences.

    Parameters
    ----------
    src, dst : array-like of shape (n, 2)
        Corresponding points, ``dst ~ H src``. At least four are required.

    Returns
    -------
    Homography
    """
    src = check_points(src, "src", allow_empty=True)
    dst = check_points(dst, "dst", allow_empty=True)
    if src.shape != dst.shape:
        raise ValueError("src and dst must have the same shape")
    n = src.shape[0]
    if n < 4:
        raise InsufficientCorrespondences(f"need at least 4 correspondences, got {n}")

    t_src = _hartley_normalizer(src)
    t_dst = _hartley_normalizer(dst)
    a = apply_homography(Homography(t_src), src)
    b = apply_homography(Homography(t_dst), dst)

    rows = np.zeros((2 * n, 9))
    x, y = a[:, 0], a[:, 1]
    u, v = b[:, 0], b[:, 1]
    rows[0::2, 0:3] = np.column_stack([x, y, np.ones(n)])
    rows[0::2, 6:9] = -u[:, None] * np.column_stack([x, y, np.ones(n)])
    rows[1::2, 3:6] = np.column_stack([x, y, np.ones(n)])
    rows[1::2, 6:9] = -v[:, None] * np.column_stack([x, y, np.ones(n)])

    _, s, vt = np.linalg.svd(rows)
    # one-dimensional null space required; collinear or duplicated sources widen it
    if s.size < 9:
        s = np.concatenate([s, np.zeros(9 - s.size)])
    if s[7] <= 1e-10 * s[0]:
        raise DegenerateConfiguration("correspondences do not determine a unique homography")
    h_norm = vt[-1].reshape(3, 3)
    m = np.linalg.inv(t_dst) @ h_norm @ t_src
    try:
        return Homography(m)
    except DegenerateProjection as exc:
        raise DegenerateConfiguration(str(exc)) from exc


class HomographyEstimator(TransformerMixin, BaseEstimator):
    """Estimator wrapper: ``fit(src, dst)`` then ``transform(points)``."""

    def fit(self, X, y):
        self.homography_ = estimate_homography(X, y)
        return self

    def transform(self, X):
        check_is_fitted(self, "homography_")
        return apply_homography(self.homography_, check_points(X, "X"))

    def inverse_transform(self, X):
        check_is_fitted(self, "homography_")
        return apply_homography(self.homography_.inverse(), check_points(X, "X"))


# --------------------------------------------------------------------------
# Gaussian mixtures with a fixed isotropic covariance


@dataclass(frozen=True, eq=False)
class Gmm2D:
    means: np.ndarray
    weights: np.ndarray
    fixed_std: float
    log_likelihoods: tuple = field(default=(), repr=False)

    def __post_init__(self):
        means = np.array(self.means, dtype=np.float64).reshape(-1, 2)
        weights = np.array(self.weights, dtype=np.float64).reshape(-1)
        if means.shape[0] < 1 or means.shape[0] != weights.shape[0]:
            raise ValueError("means and weights must be non-empty and of equal length")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be nonnegative and sum to 1")
        if not self.fixed_std > 0:
            raise ValueError("fixed_std must be positive")
        means.setflags(write=False)
        weights.setflags(write=False)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "fixed_std", float(self.fixed_std))

    @property
    def k(self):
        return self.means.shape[0]

    def centroid(self):
        """Weighted mean of the component means."""
        return self.weights @ self.means


def _log_gauss(points, means, std):
    d2 = ((points[:, None, :] - means[None, :, :]) ** 2).sum(axis=-1)
    return -0.5 * d2 / std**2 - np.log(2.0 * np.pi * std**2)


def _farthest_point_init(points, k, rng):
    idx = [int(rng.integers(points.shape[0]))]
    d = np.linalg.norm(points - points[idx[0]], axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(d))
        idx.append(nxt)
        d = np.minimum(d, np.linalg.norm(points - points[nxt], axis=1))
    return points[idx].copy()


def gmm_log_likelihood(points, means, weights, std):
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    return float(logsumexp(_log_gauss(points, means, std) + log_w, axis=1).sum())


def fit_gmm_em(points, k=5, fixed_std=1.28, max_iters=200, tol=1e-6, seed=0):
    """Fit means and mixing weights by EM with covariances held at ``fixed_std**2 * I``.

    Fewer points than components clamps ``k`` to the number of points. The
    returned mixture carries the per-iteration log-likelihood trace.
    """
    points = check_points(points)
    if k < 1:
        raise ValueError("k must be at least 1")
    if not fixed_std > 0:
        raise ValueError("fixed_std must be positive")
    k = min(int(k), points.shape[0])
    rng = np.random.default_rng(seed)

    means = _farthest_point_init(points, k, rng)
    weights = np.full(k, 1.0 / k)
    with np.errstate(divide="ignore"):
        log_w = np.log(weights)
    log_p = _log_gauss(points, means, fixed_std) + log_w
    ll = float(logsumexp(log_p, axis=1).sum())
    history = [ll]
    for _ in range(max_iters):
        log_norm = logsumexp(log_p, axis=1, keepdims=True)
        resp = np.exp(log_p - log_norm)
        nk = resp.sum(axis=0)
        alive = nk > 1e-300
        means = means.copy()
        means[alive] = (resp[:, alive].T @ points) / nk[alive, None]
        weights = nk / nk.sum()
        weights = weights / weights.sum()
        with np.errstate(divide="ignore"):
            log_w = np.log(weights)
        log_p = _log_gauss(points, means, fixed_std) + log_w
        new_ll = float(logsumexp(log_p, axis=1).sum())
        history.append(new_ll)
        if abs(new_ll - ll) < tol:
            break
        ll = new_ll
    return Gmm2D(means, weights, fixed_std, tuple(history))


def sample_gmm(g, rng, size=None):
    """Draw one point (or ``size`` points) from ``g``."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    n = 1 if size is None else int(size)
    comp = rng.choice(g.k, size=n, p=g.weights)
    pts = g.means[comp] + rng.normal(0.0, g.fixed_std, size=(n, 2))
    return pts[0] if size is None else pts


class FixedCovGaussianMixture(BaseEstimator):
    """Mixture of isotropic Gaussians sharing a fixed, known standard deviation.

    Only the means and mixing weights are estimated, by EM.

    Parameters
    ----------
    n_components : int, default=5
    fixed_std : float, default=1.28
        Shared standard deviation in pixels (2% of a 64 px image).
    max_iter : int, default=200
    tol : float, default=1e-6
        Stop once the absolute log-likelihood change drops below this.
    random_state : int, default=0
        Seed for farthest-point initialization.
    """

    def __init__(self, n_components=5, fixed_std=1.28, max_iter=200, tol=1e-6, random_state=0):
        self.n_components = n_components
        self.fixed_std = fixed_std
        self.max_iter = max_iter
        self.tol = tol
        self.random_state = random_state

    def fit(self, X, y=None):
        g = fit_gmm_em(X, self.n_components, self.fixed_std, self.max_iter, self.tol, self.random_state)
        self.gmm_ = g
        self.means_ = np.array(g.means)
        self.weights_ = np.array(g.weights)
        self.log_likelihoods_ = np.array(g.log_likelihoods)
        self.n_iter_ = len(g.log_likelihoods) - 1
        return self

    def _log_prob(self, X):
        check_is_fitted(self, "gmm_")
        X = check_points(X, "X")
        with np.errstate(divide="ignore"):
            return _log_gauss(X, self.means_, self.fixed_std) + np.log(self.weights_)

    def predict_proba(self, X):
        lp = self._log_prob(X)
        return np.exp(lp - logsumexp(lp, axis=1, keepdims=True))

    def predict(self, X):
        return np.argmax(self._log_prob(X), axis=1)

    def score_samples(self, X):
        return logsumexp(self._log_prob(X), axis=1)

    def score(self, X, y=None):
        return float(np.mean(self.score_samples(X)))

    def sample(self, n_samples=1, random_state=None):
        check_is_fitted(self, "gmm_")
        rng = np.random.default_rng(check_random_state(random_state).randint(2**31))
        return sample_gmm(self.gmm_, rng, size=n_samples)


# --------------------------------------------------------------------------
# Heatmaps and signals


def spatial_softmax(logits, temperature=1.0):
    """Softmax over every pixel of a 2D grid and the expected ``(x, y)`` location.

    Returns
    -------
    probs : ndarray of shape (H, W)
    expected : ndarray of shape (2,)
        ``sum p(row, col) * (col, row)``.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2:
        raise ValueError("logits must be a 2D grid")
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    z = logits / temperature
    z = z - z.max()
    p = np.exp(z)
    p /= p.sum()
    h, w = p.shape
    x = float(p.sum(axis=0) @ np.arange(w))
    y = float(p.sum(axis=1) @ np.arange(h))
    return p, np.array([x, y])


def savgol_smooth(signal, window=7, polyorder=3):
    """Local least-squares polynomial smoothing with mirror-padded ends.

    The ends are padded by point reflection about the end samples
    (``2 x[0] - x[k]``), so linear trends run through the boundary unchanged.
    """
    sig = np.asarray(signal, dtype=np.float64).reshape(-1)
    if window < 1 or window % 2 == 0:
        raise BadWindow(f"window must be a positive odd integer, got {window}")
    if not 0 <= polyorder < window:
        raise BadWindow(f"polyorder must satisfy 0 <= polyorder < window, got {polyorder}")
    if sig.size < window:
        raise BadWindow(f"signal of length {sig.size} is shorter than the window {window}")
    half = window // 2
    padded = np.pad(sig, half, mode="reflect", reflect_type="odd") if half else sig
    out = savgol_filter(padded, window, polyorder, mode="constant")
    return out[half : half + sig.size]
