"""Deterministic 2D articulated-object world.

The world is viewed top-down through a similarity camera. World units equal
pixels under the canonical (identity) camera, so the default 64x64 image
covers the world square ``[0, 63] x [0, 63]``.

Two things happen here: a scripted "human" opens objects while the camera
drifts (producing :class:`Episode` videos), and a robot executes ``(c, tau)``
affordance actions (producing :class:`RolloutRecord` traces).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import OutOfWorkspace, UnknownObject
from .geometry import Homography, apply_homography

IMAGE_SIZE = 64
GRASP_RADIUS = 3.0
N_WAYPOINTS = 5
N_LANDMARKS = 8
HAND_HALF = 3
GRIPPER_HALF = 2

# Rendered intensities, on the 8-bit grid so PGM round-trips are exact.
BG_LEVEL = 0.2
CABINET_LEVEL = 0.35
BODY_LEVEL = 0.6
HANDLE_LEVEL = 0.95
HAND_LEVEL = 0.75
GRIPPER_LEVEL = 0.05

ROTATION_CLASSES_DEG = (0.0, 45.0, 90.0)


def _perp(v):
    return np.array([-v[1], v[0]])


def _rot(theta):
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def rotation_class(direction):
    """Discrete gripper rotation (0, 1, 2) matching a motion direction.

    Directions are folded into ``[0, 90]`` degrees (sign and mirror
    invariant) and snapped to the nearest of 0/45/90 degrees.
    """
    d = np.asarray(direction, dtype=np.float64)
    if not np.any(np.abs(d) > 1e-12):
        return 0
    ang = np.degrees(np.arctan2(abs(d[1]), abs(d[0])))
    return int(np.argmin([abs(ang - a) for a in ROTATION_CLASSES_DEG]))


# --------------------------------------------------------------------------
# Scene description


@dataclass(frozen=True, eq=False)
class ArticulatedObject:
    """A drawer (``prismatic``) or door (``revolute``) with a single handle.

    ``anchor`` is the cabinet center for drawers and the hinge for doors.
    ``axis`` is the opening direction for drawers and the closed-panel
    direction (hinge to tip) for doors; ``spin`` (+1/-1) is the door's
    opening sense.
    """

    id: str
    kind: str
    anchor: np.ndarray
    axis: np.ndarray
    joint_range: tuple
    q: float = 0.0
    length: float = 14.0
    width: float = 18.0
    spin: int = 1

    def __post_init__(self):
        if self.kind not in ("prismatic", "revolute"):
            raise ValueError(f"unknown object kind {self.kind!r}")
        axis = np.asarray(self.axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        object.__setattr__(self, "anchor", np.asarray(self.anchor, dtype=np.float64))
        object.__setattr__(self, "axis", axis)
        lo, hi = (float(v) for v in self.joint_range)
        object.__setattr__(self, "joint_range", (lo, hi))
        object.__setattr__(self, "q", float(np.clip(self.q, lo, hi)))

    @property
    def q_min(self):
        return self.joint_range[0]

    @property
    def q_max(self):
        return self.joint_range[1]

    def with_q(self, q):
        return replace(self, q=float(np.clip(q, self.q_min, self.q_max)))

    # geometry at joint state q -------------------------------------------
    def panel_dir(self, q=None):
        q = self.q if q is None else q
        if self.kind == "prismatic":
            return self.axis
        return _rot(self.spin * q) @ self.axis

    def opening_normal(self, q=None):
        """Door side that swings forward: the handle's tangent direction."""
        return self.spin * _perp(self.panel_dir(q))

    @property
    def handle_offset(self):
        """Handle center relative to the anchor at ``q = 0``."""
        if self.kind == "prismatic":
            return self.axis * (self.length / 2 + 1.0)
        return self.axis * (self.length - 4.0) + self.opening_normal(0.0) * 2.5

    def handle_position(self, q=None):
        q = self.q if q is None else q
        if self.kind == "prismatic":
            return self.anchor + self.handle_offset + q * self.axis
        return self.anchor + _rot(self.spin * q) @ self.handle_offset

    def handle_rect(self, q=None):
        """``(center, unit_u, half_u, half_v)`` of the handle footprint."""
        if self.kind == "prismatic":
            return self.handle_position(q), self.axis, 1.0, 4.0
        return self.handle_position(q), self.panel_dir(q), 3.5, 1.0

    def body_rects(self, q=None):
        """Static and moving body rectangles as ``(rect, level)`` pairs."""
        q = self.q if q is None else q
        if self.kind == "prismatic":
            half = (self.length / 2, self.width / 2)
            return [
                ((self.anchor, self.axis, *half), CABINET_LEVEL),
                ((self.anchor + q * self.axis, self.axis, *half), BODY_LEVEL),
            ]
        closed = (self.anchor + self.axis * self.length / 2, self.axis, self.length / 2, 2.5)
        u = self.panel_dir(q)
        panel = (self.anchor + u * self.length / 2, u, self.length / 2, 1.5)
        return [(closed, CABINET_LEVEL), (panel, BODY_LEVEL)]

    def required_rotation(self):
        if self.kind == "prismatic":
            return rotation_class(self.axis)
        return rotation_class(self.opening_normal(0.0))

    def opening_direction(self):
        """Image-space direction the handle moves when opening from rest."""
        return self.axis if self.kind == "prismatic" else self.opening_normal()

    def project_motion(self, q0, grasp_world, target_world):
        """Joint state whose handle best follows the gripper moving to ``target``."""
        if self.kind == "prismatic":
            q = q0 + float((target_world - grasp_world) @ self.axis)
        else:
            a = grasp_world - self.anchor
            b = target_world - self.anchor
            if np.linalg.norm(b) < 1e-9 or np.linalg.norm(a) < 1e-9:
                return q0
            dang = np.arctan2(a[0] * b[1] - a[1] * b[0], a @ b)
            q = q0 + self.spin * dang
        return float(np.clip(q, self.q_min, self.q_max))

    def to_dict(self):
        return {
            "id": self.id,
            "kind": self.kind,
            "anchor": self.anchor.tolist(),
            "axis": self.axis.tolist(),
            "joint_range": list(self.joint_range),
            "q": self.q,
            "length": self.length,
            "width": self.width,
            "spin": self.spin,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            id=d["id"],
            kind=d["kind"],
            anchor=np.asarray(d["anchor"]),
            axis=np.asarray(d["axis"]),
            joint_range=tuple(d["joint_range"]),
            q=d["q"],
            length=d.get("length", 14.0),
            width=d.get("width", 18.0),
            spin=d.get("spin", 1),
        )


@dataclass(frozen=True, eq=False)
class Scene:
    objects: tuple
    background_seed: int = 0
    size: int = IMAGE_SIZE

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise ValueError("object ids must be unique")

    @property
    def bounds(self):
        return 0.0, float(self.size - 1)

    def object(self, object_id):
        for o in self.objects:
            if o.id == object_id:
                return o
        raise UnknownObject(object_id)

    def with_q(self, object_id, q):
        self.object(object_id)
        return replace(self, objects=tuple(o.with_q(q) if o.id == object_id else o for o in self.objects))

    def joint_states(self):
        return np.array([o.q for o in self.objects])

    def landmarks(self):
        """Fixed world feature points used for frame-to-frame matching."""
        rng = np.random.default_rng([self.background_seed, 7919])
        return rng.uniform(4.0, self.size - 5.0, size=(N_LANDMARKS, 2))

    def to_dict(self):
        return {"objects": [o.to_dict() for o in self.objects], "background_seed": self.background_seed, "size": self.size}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(ArticulatedObject.from_dict(o) for o in d["objects"]), d["background_seed"], d.get("size", IMAGE_SIZE))


@dataclass(frozen=True)
class CameraPose:
    """Similarity transform from world to image: ``img = scale * R(rotation) @ w + translation``."""

    translation: tuple = (0.0, 0.0)
    rotation: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("camera scale must be positive")
        object.__setattr__(self, "translation", (float(self.translation[0]), float(self.translation[1])))
        object.__setattr__(self, "rotation", float(self.rotation))
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def homography(self):
        return Homography.from_similarity(self.translation, self.rotation, self.scale)

    def to_image(self, w):
        return apply_homography(self.homography, w)

    def to_world(self, p):
        return apply_homography(self.homography.inverse(), p)

    def to_dict(self):
        return {"translation": list(self.translation), "rotation": self.rotation, "scale": self.scale}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["translation"]), d["rotation"], d["scale"])


def frame_to_frame(src_camera, dst_camera):
    """Exact image-to-image homography taking ``src`` pixels to ``dst`` pixels."""
    return dst_camera.homography @ src_camera.homography.inverse()


# --------------------------------------------------------------------------
# Rendering


def _pixel_grid(size):
    ys, xs = np.mgrid[0:size, 0:size].astype(np.float64)
    return np.stack([xs, ys], axis=-1)


def _in_rect(pts, rect):
    center, u, hu, hv = rect
    d = pts - center
    v = _perp(u)
    return (np.abs(d @ u) <= hu) & (np.abs(d @ v) <= hv)


def _background(world_pts, seed):
    rng = np.random.default_rng([seed, 104729])
    val = np.full(world_pts.shape[:-1], BG_LEVEL)
    for _ in range(3):
        k = rng.uniform(0.05, 0.25, size=2) * rng.choice([-1, 1], size=2)
        phase = rng.uniform(0, 2 * np.pi)
        val += 0.03 * np.sin(world_pts @ k + phase)
    return val


def box_pixels(center, half, size=IMAGE_SIZE):
    """Integer pixel extent ``(x0, y0, x1, y1)`` of a box on the rounded center, clipped."""
    cx, cy = int(np.round(center[0])), int(np.round(center[1]))
    x0, x1 = max(cx - half, 0), min(cx + half, size - 1)
    y0, y1 = max(cy - half, 0), min(cy + half, size - 1)
    return x0, y0, x1, y1


def box_mask(center, half, size=IMAGE_SIZE):
    m = np.zeros((size, size), dtype=bool)
    x0, y0, x1, y1 = box_pixels(center, half, size)
    if x0 <= x1 and y0 <= y1:
        m[y0 : y1 + 1, x0 : x1 + 1] = True
    return m


def _quantize(img):
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def render(scene, camera=None, hand=None, gripper=None):
    """Render ``scene`` seen through ``camera``.

    ``hand`` and ``gripper`` are optional image-space box centers drawn on top.
    The result is a ``(size, size)`` float grid quantized to 1/255 steps.
    """
    camera = camera or CameraPose()
    size = scene.size
    world = apply_homography(camera.homography.inverse(), _pixel_grid(size).reshape(-1, 2)).reshape(size, size, 2)
    img = _background(world, scene.background_seed)
    for obj in scene.objects:
        for rect, level in obj.body_rects():
            img[_in_rect(world, rect)] = level
        img[_in_rect(world, obj.handle_rect())] = HANDLE_LEVEL
    if hand is not None:
        img[box_mask(hand, HAND_HALF, size)] = HAND_LEVEL
    if gripper is not None:
        img[box_mask(gripper, GRIPPER_HALF, size)] = GRIPPER_LEVEL
    return _quantize(img)


def gripper_mask(scene, camera=None, gripper=None):
    """Exact binary mask of gripper pixels (all zero when no gripper)."""
    if gripper is None:
        return np.zeros((scene.size, scene.size), dtype=bool)
    return box_mask(gripper, GRIPPER_HALF, scene.size)


def handle_bbox(scene, camera, object_id, q=None):
    """Axis-aligned image-space bounding box ``(x0, y0, x1, y1)`` of a handle."""
    obj = scene.object(object_id)
    center, u, hu, hv = obj.handle_rect(q)
    v = _perp(u)
    corners = np.array([center + su * hu * u + sv * hv * v for su in (-1, 1) for sv in (-1, 1)])
    img = camera.to_image(corners)
    return (float(img[:, 0].min()), float(img[:, 1].min()), float(img[:, 0].max()), float(img[:, 1].max()))


def distance_to_handle(obj, point, q=None):
    center, u, hu, hv = obj.handle_rect(q)
    d = np.asarray(point) - center
    du = max(abs(d @ u) - hu, 0.0)
    dv = max(abs(d @ _perp(u)) - hv, 0.0)
    return float(np.hypot(du, dv))


# --------------------------------------------------------------------------
# Episodes (scripted human video)


@dataclass(frozen=True, eq=False)
class HandObservation:
    center: np.ndarray
    half_size: int
    contact: int
    object_box: tuple | None = None


@dataclass(frozen=True, eq=False)
class Frame:
    image: np.ndarray
    camera: CameraPose
    hand: HandObservation | None = None
    features: np.ndarray | None = None


@dataclass(frozen=True, eq=False)
class GroundTruth:
    t_contact: int
    contact_points: np.ndarray
    post_contact_track: np.ndarray
    target_id: str
    hand_entry: int
    scene: Scene | None = None


@dataclass(eq=False)
class Episode:
    frames: list
    ground_truth: GroundTruth | None = None
    episode_id: str = "ep0000"

    def __len__(self):
        return len(self.frames)

    @property
    def contact_flags(self):
        return np.array([0 if f.hand is None else f.hand.contact for f in self.frames], dtype=int)


def _ring_pixels(center, half, size):
    x0, y0, x1, y1 = box_pixels(center, half, size)
    pts = [(x, y) for y in range(y0, y1 + 1) for x in range(x0, x1 + 1) if x in (x0, x1) or y in (y0, y1)]
    return np.array(pts, dtype=np.float64).reshape(-1, 2)


def _egomotion_camera(base, u, amp, dirs):
    """Smooth drift; ``u`` in [0, 1] ramps the displacement up over the episode."""
    tx = base.translation[0] + amp * u * dirs[0] + 0.25 * amp * np.sin(np.pi * u) * dirs[1]
    ty = base.translation[1] + amp * u * dirs[2] + 0.25 * amp * np.sin(np.pi * u) * dirs[3]
    rot = base.rotation + 0.006 * amp * u * dirs[4]
    scale = base.scale * (1.0 + 0.006 * amp * u * dirs[5])
    return CameraPose((tx, ty), rot, scale)


def script_human_episode(
    scene,
    target_id,
    noise=(0.0, 0.0, 0.0),
    rng=None,
    *,
    hand_entry=None,
    approach_frames=None,
    drag_fraction=1.0,
    hold_frames=2,
    base_camera=None,
    camera_pan=None,
    episode_id="ep0000",
):
    """Script a hand that reaches the target handle and opens the object.

    Parameters
    ----------
    noise : (contact_flip_rate, hand_jitter_px, egomotion_amplitude)
    hand_entry : int, optional
        First frame with a visible hand (random in 3..5 by default).
    drag_fraction : float
        Fraction of the remaining joint range opened by the drag; 0 keeps the
        hand still after contact.
    camera_pan : (dx, dy), optional
        Extra per-frame camera translation applied once the hand is in view.

    The camera stays at ``base_camera`` until the hand enters, then drifts.
    Ground truth is recorded before any noise is applied.
    """
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    flip_rate, jitter, ego_amp = (float(v) for v in noise)
    base = base_camera or CameraPose()
    obj = scene.object(target_id)
    size = scene.size

    e = int(rng.integers(3, 6)) if hand_entry is None else int(hand_entry)
    a = int(rng.integers(4, 7)) if approach_frames is None else int(approach_frames)
    tc = e + a
    n_frames = tc + 1 + N_WAYPOINTS + hold_frames
    dirs = rng.uniform(-1.0, 1.0, size=6)
    jit = rng.normal(0.0, 1.0, size=(n_frames, 2)) * jitter

    h0 = obj.handle_position()
    start = np.clip(h0 + obj.opening_direction() * 22.0, -2.0, size + 1.0)
    q_span = drag_fraction * (obj.q_max - obj.q)
    q_path = [obj.q + q_span * j / N_WAYPOINTS for j in range(N_WAYPOINTS + 1)]

    frames, hand_world, cameras, qs = [], [], [], []
    for t in range(n_frames):
        if t < e:
            q, hw = obj.q, None
        elif t < tc:
            q, hw = obj.q, start + (h0 - start) * ((t - e) / a)
        else:
            q = q_path[min(t - tc, N_WAYPOINTS)]
            hw = obj.handle_position(q)
        cam = base
        if t >= e:
            u = (t - e + 1) / (n_frames - e)
            cam = _egomotion_camera(base, u, ego_amp, dirs)
            if camera_pan is not None:
                tx, ty = cam.translation
                cam = replace(cam, translation=(tx + camera_pan[0] * (t - e + 1), ty + camera_pan[1] * (t - e + 1)))
        cameras.append(cam)
        hand_world.append(hw)
        qs.append(q)

    clean_flags = np.array([1 if t >= tc else 0 for t in range(n_frames)])
    flips = rng.random(n_frames) < flip_rate
    flags = np.where(hand_world_present(hand_world), clean_flags ^ flips, 0)

    landmarks = scene.landmarks()
    for t in range(n_frames):
        sc = scene.with_q(target_id, qs[t])
        cam = cameras[t]
        hand = None
        if hand_world[t] is not None:
            center = cam.to_image(hand_world[t]) + jit[t]
            hand = HandObservation(center, HAND_HALF, int(flags[t]), handle_bbox(sc, cam, target_id))
        img = render(sc, cam, hand=None if hand is None else hand.center)
        frames.append(Frame(img, cam, hand, cam.to_image(landmarks)))

    # ground truth in frame-0 pixels
    to0 = lambda t, p: apply_homography(frame_to_frame(cameras[t], cameras[0]), p)  # noqa: E731
    hc = cameras[tc].to_image(hand_world[tc])
    ring = _ring_pixels(hc, HAND_HALF, size)
    x0, y0, x1, y1 = handle_bbox(scene.with_q(target_id, qs[tc]), cameras[tc], target_id)
    inside = (ring[:, 0] >= x0) & (ring[:, 0] <= x1) & (ring[:, 1] >= y0) & (ring[:, 1] <= y1)
    contact_pts = to0(tc, ring[inside]) if inside.any() else np.zeros((0, 2))
    track = np.array([to0(t, cameras[t].to_image(hand_world[t])) for t in range(tc, tc + N_WAYPOINTS + 1)])
    gt = GroundTruth(tc, contact_pts, track, target_id, e, scene)
    return Episode(frames, gt, episode_id)


def hand_world_present(hand_world):
    return np.array([h is not None for h in hand_world])


# --------------------------------------------------------------------------
# Robot execution


@dataclass(frozen=True)
class GoalSpec:
    object_id: str
    threshold: float
    opening: bool = True

    @classmethod
    def parse(cls, text):
        """Parse ``OBJECT:THRESHOLD``; a leading ``<`` on the threshold means closing."""
        name, _, thr = text.partition(":")
        if not name or not thr:
            raise ValueError(f"goal must look like OBJECT:THRESHOLD, got {text!r}")
        opening = not thr.startswith("<")
        return cls(name, float(thr.lstrip("<")), opening)

    def __str__(self):
        return f"{self.object_id}:{'' if self.opening else '<'}{self.threshold:g}"


def goal_predicate(scene, goal):
    """Closed-interval test of a single joint against a goal threshold."""
    q = scene.object(goal.object_id).q
    return q >= goal.threshold if goal.opening else q <= goal.threshold


@dataclass(eq=False)
class RolloutRecord:
    initial_image: np.ndarray
    observations: list
    observation_masks: list
    contact: np.ndarray
    waypoints: np.ndarray
    rotation: int
    terminal_image: np.ndarray
    displacements: np.ndarray
    success: dict = field(default_factory=dict)
    grasped: str | None = None
    rollout_id: int = 0
    source: str = ""

    def __post_init__(self):
        if len(self.observations) < 2:
            raise ValueError("a rollout needs at least two observations")
        if np.asarray(self.waypoints).shape != (N_WAYPOINTS, 2):
            raise ValueError("a rollout needs exactly five waypoints")

    @property
    def any_success(self):
        return any(self.success.values())


def execute_affordance(
    scene,
    camera,
    c,
    tau,
    rotation_choice,
    rng=None,
    *,
    goals=(),
    grasp_radius=GRASP_RADIUS,
    motion_noise=0.0,
    rollout_id=0,
    source="",
):
    """Move the gripper to ``c``, grasp, and follow the relative waypoints ``tau``.

    The grasp succeeds only within ``grasp_radius`` of a handle and with the
    object's required rotation class. A grasped handle follows each waypoint
    projected onto its joint constraint. Returns ``(record, new_scene)``.
    """
    camera = camera or CameraPose()
    c = np.asarray(c, dtype=np.float64).reshape(2)
    tau = np.asarray(tau, dtype=np.float64).reshape(N_WAYPOINTS, 2)
    lo, hi = scene.bounds
    c_w = camera.to_world(c)
    if not np.all(np.isfinite(c_w)) or np.any(c_w < lo) or np.any(c_w > hi):
        raise OutOfWorkspace(f"contact point {c.tolist()} maps outside the workspace")
    if motion_noise > 0:
        rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
        tau = tau + rng.normal(0.0, motion_noise, size=tau.shape)
    targets_w = np.clip(camera.to_world(c + np.cumsum(tau, axis=0)), lo, hi)

    grasped = None
    best = None
    for obj in scene.objects:
        d = distance_to_handle(obj, c_w)
        if d <= grasp_radius and (best is None or d < best):
            best, grasped = d, obj
    if grasped is not None and grasped.required_rotation() != int(rotation_choice):
        grasped = None

    initial = render(scene, camera)
    start = scene
    obs = [render(scene, camera, gripper=c)]
    masks = [gripper_mask(scene, camera, c)]
    for g_w in targets_w:
        if grasped is not None:
            q = grasped.project_motion(grasped.q, c_w, g_w)
            scene = scene.with_q(grasped.id, q)
            g_img = camera.to_image(c_w + scene.object(grasped.id).handle_position() - grasped.handle_position())
        else:
            g_img = camera.to_image(g_w)
        obs.append(render(scene, camera, gripper=g_img))
        masks.append(gripper_mask(scene, camera, g_img))

    record = RolloutRecord(
        initial_image=initial,
        observations=obs,
        observation_masks=masks,
        contact=c,
        waypoints=tau,
        rotation=int(rotation_choice),
        terminal_image=render(scene, camera),
        displacements=scene.joint_states() - start.joint_states(),
        success={str(g): bool(goal_predicate(scene, g)) for g in goals},
        grasped=None if grasped is None else grasped.id,
        rollout_id=rollout_id,
        source=source,
    )
    return record, scene


# --------------------------------------------------------------------------
# Scene construction


def drawer_scene(background_seed=0, anchor=(32.0, 22.0), axis=(0.0, 1.0), q_max=12.0):
    """The single-drawer benchmark scene used by the paradigm experiments."""
    return Scene((ArticulatedObject("drawer", "prismatic", np.array(anchor), np.array(axis), (0.0, q_max)),), background_seed)


def two_drawer_scene(background_seed=0, q_max=12.0):
    """Two drawers with perpendicular axes; goals on one make most actions fail."""
    return Scene(
        (
            ArticulatedObject("left", "prismatic", np.array([16.0, 14.0]), np.array([0.0, 1.0]), (0.0, q_max)),
            ArticulatedObject("right", "prismatic", np.array([40.0, 44.0]), np.array([1.0, 0.0]), (0.0, q_max)),
        ),
        background_seed,
    )


_CARDINAL = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])


def _candidate_object(rng, oid, size):
    axis = _CARDINAL[rng.integers(4)]
    if rng.random() < 0.7:
        obj = ArticulatedObject(oid, "prismatic", rng.uniform(12, size - 13, size=2), axis, (0.0, float(rng.uniform(10, 13))),
                                length=float(rng.uniform(12, 16)), width=float(rng.uniform(14, 20)))
    else:
        obj = ArticulatedObject(oid, "revolute", rng.uniform(10, size - 11, size=2), axis, (0.0, np.pi / 2),
                                length=float(rng.uniform(14, 18)), spin=int(rng.choice([-1, 1])))
    return obj


def _footprint(obj, q):
    pts = []
    for rect, _ in obj.body_rects(q):
        center, u, hu, hv = rect
        v = _perp(u)
        pts.extend(center + su * hu * u + sv * hv * v for su in (-1, 1) for sv in (-1, 1))
    c, u, hu, hv = obj.handle_rect(q)
    v = _perp(u)
    pts.extend(c + su * hu * u + sv * hv * v for su in (-1, 1) for sv in (-1, 1))
    pts = np.array(pts)
    return pts.min(axis=0), pts.max(axis=0)


def _fits(obj, size, margin=2.0):
    for q in (obj.q_min, obj.q_max):
        lo, hi = _footprint(obj, q)
        if np.any(lo < margin) or np.any(hi > size - 1 - margin):
            return False
    return True


def _overlap(a, b, gap=2.0):
    alo, ahi = _footprint(a, a.q_min)
    blo, bhi = _footprint(b, b.q_min)
    return bool(np.all(alo - gap < bhi) and np.all(blo - gap < ahi))


def random_scene(rng, n_objects=1, size=IMAGE_SIZE, background_seed=None):
    """Random non-overlapping drawers/doors with cardinal orientations."""
    rng = np.random.default_rng(rng) if not isinstance(rng, np.random.Generator) else rng
    seed = int(rng.integers(2**31)) if background_seed is None else background_seed
    objects = []
    for i in range(n_objects):
        for _ in range(200):
            cand = _candidate_object(rng, f"obj{i}", size)
            if _fits(cand, size) and not any(_overlap(cand, o) for o in objects):
                objects.append(cand)
                break
    return Scene(tuple(objects), seed, size)
