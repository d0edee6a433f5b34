"""Affordance labels from interaction episodes.

A label is a contact-point GMM plus five relative post-contact waypoints,
expressed in the last frame before the hand appears.
"""

from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.ndimage import binary_erosion
from sklearn.base import BaseEstimator

from .errors import CropInfeasible, Discard, NoContact, OutOfFrame
from .geometry import Homography, apply_homography, compose, estimate_homography, fit_gmm_em, savgol_smooth
from .world import N_WAYPOINTS, box_mask, frame_to_frame

log = logging.getLogger(__name__)

CONTACT_WINDOW = 7
CONTACT_POLYORDER = 3
CONTACT_THRESHOLD = 0.75
N_CONTACT_MODES = 5


@dataclass(frozen=True, eq=False)
class AffordanceLabel:
    reference_frame: int
    contact_gmm: object
    waypoints: np.ndarray
    crop_policy: str = "none"
    episode_id: str = ""
    start: np.ndarray | None = None

    @property
    def means(self):
        return self.contact_gmm.means

    def to_record(self):
        return {
            "episode_id": self.episode_id,
            "reference_frame": self.reference_frame,
            "means": np.asarray(self.contact_gmm.means).tolist(),
            "weights": np.asarray(self.contact_gmm.weights).tolist(),
            "waypoints": np.asarray(self.waypoints).tolist(),
        }


@dataclass(frozen=True, eq=False)
class TrainingSample:
    crop: np.ndarray
    crop_offset: np.ndarray
    target_means: np.ndarray
    target_waypoints: np.ndarray
    episode_id: str = ""


# -------------------------------------------------------------------------- contact time


@lru_cache(maxsize=None)
def _filter_lag(window, polyorder, threshold):
    """Frames between a clean 0->1 step and the smoothed signal first reaching ``threshold``."""
    step = np.zeros(4 * window)
    step[2 * window :] = 1.0
    smoothed = savgol_smooth(step, window, polyorder)
    return int(np.argmax(smoothed >= threshold) - 2 * window)


def detect_contact_time(flags, window=CONTACT_WINDOW, polyorder=CONTACT_POLYORDER, threshold=CONTACT_THRESHOLD):
    """First contact frame from a noisy binary contact signal.

    The flags are Savitzky-Golay smoothed and thresholded; the crossing index
    is shifted back by the filter's own step-response delay so a clean step
    at ``t`` is reported as ``t``.
    """
    flags = np.asarray(flags, dtype=np.float64).reshape(-1)
    smoothed = savgol_smooth(flags, window, polyorder)
    above = np.nonzero(smoothed >= threshold)[0]
    if above.size == 0:
        raise NoContact("smoothed contact signal never reaches the threshold")
    return max(int(above[0]) - _filter_lag(window, polyorder, threshold), 0)


# -------------------------------------------------------------------------- contact points


def hand_mask(frame):
    if frame.hand is None:
        return np.zeros(frame.image.shape, dtype=bool)
    return box_mask(frame.hand.center, frame.hand.half_size, frame.image.shape[0])


def object_mask(frame):
    """Rasterized in-contact object box for ``frame`` (empty without one)."""
    h, w = frame.image.shape
    m = np.zeros((h, w), dtype=bool)
    if frame.hand is None or frame.hand.object_box is None:
        return m
    x0, y0, x1, y1 = frame.hand.object_box
    ys, xs = np.mgrid[0:h, 0:w]
    m[(xs >= x0) & (xs <= x1) & (ys >= y0) & (ys <= y1)] = True
    return m


def extract_contact_points(frame, hand_mask, object_mask):
    """Hand-boundary pixels (8-connected) that fall inside the object's bounding box."""
    hand_mask = np.asarray(hand_mask, dtype=bool)
    if not hand_mask.any():
        raise ValueError("hand mask is empty")
    boundary = hand_mask & ~binary_erosion(hand_mask, structure=np.ones((3, 3), bool), border_value=0)
    obj = np.asarray(object_mask, dtype=bool)
    if not obj.any():
        return np.zeros((0, 2))
    rows = np.nonzero(obj.any(axis=1))[0]
    cols = np.nonzero(obj.any(axis=0))[0]
    box = np.zeros_like(obj)
    box[rows[0] : rows[-1] + 1, cols[0] : cols[-1] + 1] = True
    ys, xs = np.nonzero(boundary & box)
    return np.column_stack([xs, ys]).astype(np.float64)


# -------------------------------------------------------------------------- egomotion


def compensate_egomotion(points_per_frame, homographies):
    """Map ``(frame_index, point)`` pairs into reference coordinates."""
    out = [apply_homography(homographies[t], p) for t, p in points_per_frame]
    return np.array(out).reshape(-1, 2)


def frame_homographies(episode, reference, mode="estimated"):
    """Per-frame homographies taking frame-``t`` pixels into the reference frame.

    ``mode="exact"`` uses the recorded camera poses; ``"estimated"`` chains DLT
    fits on the tracked landmark correspondences of consecutive frames.
    """
    frames = episode.frames
    n = len(frames)
    if mode == "exact":
        ref_cam = frames[reference].camera
        return [frame_to_frame(f.camera, ref_cam) for f in frames]
    if mode != "estimated":
        raise ValueError(f"unknown homography mode {mode!r}")
    hs = [None] * n
    hs[reference] = Homography.identity()
    for t in range(reference + 1, n):
        step = estimate_homography(frames[t].features, frames[t - 1].features)
        hs[t] = compose(hs[t - 1], step)
    for t in range(reference - 1, -1, -1):
        step = estimate_homography(frames[t].features, frames[t + 1].features)
        hs[t] = compose(hs[t + 1], step)
    return hs


# -------------------------------------------------------------------------- labels


def select_reference_frame(episode):
    """``(index, crop_policy)`` of the hand-free frame that labels are mapped onto."""
    present = [f.hand is not None for f in episode.frames]
    if not any(present):
        raise NoContact("no hand in any frame")
    entry = present.index(True)
    if entry > 0:
        return entry - 1, "none"
    if detect_contact_time(episode.contact_flags) == 0:
        raise Discard("hand is in contact from the first frame")
    return 0, "mask-hand"


def reference_image(episode, label):
    """Reference-frame image with the crop policy applied."""
    fr = episode.frames[label.reference_frame]
    img = fr.image.copy()
    if label.crop_policy == "mask-hand" and fr.hand is not None:
        m = hand_mask(fr)
        img[m] = np.median(img[~m])
    return img


def extract_label(episode, *, k=N_CONTACT_MODES, fixed_std=None, homography_mode="estimated", seed=0,
                  window=CONTACT_WINDOW, polyorder=CONTACT_POLYORDER, threshold=CONTACT_THRESHOLD):
    """Contact GMM and relative waypoints for one episode.

    Raises
    ------
    NoContact, Discard, OutOfFrame
    """
    flags = episode.contact_flags
    tc = detect_contact_time(flags, window, polyorder, threshold)
    frames = episode.frames
    if tc + N_WAYPOINTS >= len(frames):
        raise Discard(f"only {len(frames) - tc - 1} post-contact frames")
    if any(frames[t].hand is None for t in range(tc, tc + N_WAYPOINTS + 1)):
        raise Discard("hand missing during the post-contact window")
    ref, policy = select_reference_frame(episode)
    h, w = frames[ref].image.shape
    pts = extract_contact_points(frames[tc], hand_mask(frames[tc]), object_mask(frames[tc]))
    if pts.shape[0] == 0:
        raise Discard("hand boundary does not meet the object box")

    hs = frame_homographies(episode, ref, homography_mode)
    pts_ref = apply_homography(hs[tc], pts)
    std = 0.02 * w if fixed_std is None else fixed_std
    gmm = fit_gmm_em(pts_ref, k=k, fixed_std=std, seed=seed)
    track = compensate_egomotion([(t, frames[t].hand.center) for t in range(tc, tc + N_WAYPOINTS + 1)], hs)
    disp = np.diff(track, axis=0)

    limit = np.array([w - 1, h - 1])
    absolute = track[0] + np.cumsum(disp, axis=0)
    for name, p in (("contact mean", gmm.means), ("waypoint", absolute), ("trajectory start", track[:1])):
        if np.any(p < 0) or np.any(p > limit):
            raise OutOfFrame(f"{name} outside the reference frame")
    return AffordanceLabel(ref, gmm, disp, policy, episode.episode_id, track[0])


class LabelExtractor(BaseEstimator):
    """Batch label extraction with discard accounting.

    After :meth:`transform`, ``counts_`` holds the number of extracted and
    discarded (by reason) episodes.
    """

    def __init__(self, n_modes=N_CONTACT_MODES, fixed_std=None, homography_mode="estimated", random_state=0,
                 window=CONTACT_WINDOW, polyorder=CONTACT_POLYORDER, threshold=CONTACT_THRESHOLD):
        self.n_modes = n_modes
        self.window = window
        self.polyorder = polyorder
        self.threshold = threshold
        self.fixed_std = fixed_std
        self.homography_mode = homography_mode
        self.random_state = random_state

    def fit(self, episodes=None, y=None):
        return self

    def transform(self, episodes):
        labels, counts = [], Counter({"extracted": 0, "NoContact": 0, "Discard": 0, "OutOfFrame": 0})
        for ep in episodes:
            try:
                lab = extract_label(ep, k=self.n_modes, fixed_std=self.fixed_std,
                                    homography_mode=self.homography_mode, seed=self.random_state,
                                    window=self.window, polyorder=self.polyorder, threshold=self.threshold)
            except (NoContact, Discard, OutOfFrame) as exc:
                counts[type(exc).__name__] += 1
                log.debug("skipping %s: %s", ep.episode_id, exc)
                continue
            counts["extracted"] += 1
            labels.append((ep, lab))
        self.counts_ = dict(counts)
        return labels


# -------------------------------------------------------------------------- crops


def crop_side(size, crop_fraction):
    return max(1, int(round(crop_fraction * size)))


def make_training_samples(pairs, crop_fraction=0.6, samples_per_label=4, rng=None):
    """Random square crops that contain every contact mean of each label.

    ``pairs`` holds ``(episode, label)`` or ``(image, label)`` tuples.
    """
    if not 0 < crop_fraction <= 1:
        raise ValueError("crop_fraction must lie in (0, 1]")
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    out = []
    for src, lab in pairs:
        img = src if isinstance(src, np.ndarray) else reference_image(src, lab)
        h, w = img.shape
        side = crop_side(min(h, w), crop_fraction)
        means = np.asarray(lab.means)
        lo = np.maximum(np.ceil(means.max(axis=0) - (side - 1)), 0).astype(int)
        hi = np.minimum(np.floor(means.min(axis=0)), [w - side, h - side]).astype(int)
        if np.any(lo > hi):
            raise CropInfeasible(f"contact means span more than the {side}px crop")
        for _ in range(samples_per_label):
            ox = int(rng.integers(lo[0], hi[0] + 1))
            oy = int(rng.integers(lo[1], hi[1] + 1))
            off = np.array([ox, oy], dtype=np.float64)
            out.append(TrainingSample(img[oy : oy + side, ox : ox + side].copy(), off, means - off,
                                      np.asarray(lab.waypoints, dtype=np.float64).copy(), lab.episode_id))
    return out
