"""On-disk formats: binary PGM images and JSON-lines indices.

A dataset directory holds an ``index.jsonl`` (one record per line) and an
``images/`` folder of P5 PGM files referenced by relative path.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import SchemaError
from .world import CameraPose, Episode, Frame, GroundTruth, HandObservation, RolloutRecord, Scene


def write_pgm(path, image):
    img = np.asarray(image, dtype=np.float64)
    data = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


def read_pgm(path):
    raw = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end : end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end].decode("ascii"))
        pos = end
    pos += 1
    if tokens[0] != "P5":
        raise SchemaError(f"{path}: not a binary PGM (P5) file")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 255:
        raise SchemaError(f"{path}: only 8-bit PGM is supported")
    data = np.frombuffer(raw[pos : pos + w * h], dtype=np.uint8)
    if data.size != w * h:
        raise SchemaError(f"{path}: truncated image data")
    return data.reshape(h, w).astype(np.float64) / 255.0


def write_jsonl(path, records):
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True, separators=(",", ":")) + "\n")


def read_jsonl(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                out.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{n}: invalid JSON ({exc.msg})") from exc
    return out


def _require(rec, keys, where):
    for k in keys:
        if k not in rec:
            raise SchemaError(f"{where}: missing field {k!r}")


# -------------------------------------------------------------------------- episodes


def save_episodes(directory, episodes):
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for ep in episodes:
        frames = []
        for t, fr in enumerate(ep.frames):
            rel = f"images/{ep.episode_id}_{t:03d}.pgm"
            write_pgm(directory / rel, fr.image)
            entry = {"image": rel, "camera": fr.camera.to_dict(), "hand": None, "features": None}
            if fr.hand is not None:
                entry["hand"] = {
                    "center": np.asarray(fr.hand.center).tolist(),
                    "half_size": fr.hand.half_size,
                    "contact": int(fr.hand.contact),
                    "object_box": None if fr.hand.object_box is None else list(fr.hand.object_box),
                }
            if fr.features is not None:
                entry["features"] = np.asarray(fr.features).tolist()
            frames.append(entry)
        rec = {"episode_id": ep.episode_id, "frames": frames}
        if ep.ground_truth is not None:
            gt = ep.ground_truth
            rec["ground_truth"] = {
                "t_contact": gt.t_contact,
                "contact_points": np.asarray(gt.contact_points).tolist(),
                "post_contact_track": np.asarray(gt.post_contact_track).tolist(),
                "target_id": gt.target_id,
                "hand_entry": gt.hand_entry,
                "scene": None if gt.scene is None else gt.scene.to_dict(),
            }
        records.append(rec)
    write_jsonl(directory / "index.jsonl", records)


def load_episodes(directory, allow_ground_truth=False):
    """Load a dataset; hidden ground truth is only attached when explicitly allowed."""
    directory = Path(directory)
    index = directory / "index.jsonl"
    if not index.exists():
        raise FileNotFoundError(f"{index} does not exist")
    episodes = []
    for rec in read_jsonl(index):
        _require(rec, ("episode_id", "frames"), str(index))
        frames = []
        for entry in rec["frames"]:
            _require(entry, ("image", "camera"), f"{index}:{rec['episode_id']}")
            hand = None
            if entry.get("hand") is not None:
                hd = entry["hand"]
                box = hd.get("object_box")
                hand = HandObservation(np.asarray(hd["center"]), int(hd["half_size"]), int(hd["contact"]),
                                       None if box is None else tuple(box))
            feats = entry.get("features")
            frames.append(Frame(read_pgm(directory / entry["image"]), CameraPose.from_dict(entry["camera"]), hand,
                                None if feats is None else np.asarray(feats)))
        gt = None
        if allow_ground_truth and rec.get("ground_truth") is not None:
            g = rec["ground_truth"]
            gt = GroundTruth(int(g["t_contact"]), np.asarray(g["contact_points"]).reshape(-1, 2),
                             np.asarray(g["post_contact_track"]), g["target_id"], int(g["hand_entry"]),
                             None if g.get("scene") is None else Scene.from_dict(g["scene"]))
        episodes.append(Episode(frames, gt, rec["episode_id"]))
    return episodes


# -------------------------------------------------------------------------- rollouts


def save_rollouts(directory, rollouts):
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    records = []
    for r in rollouts:
        stem = f"images/r{r.rollout_id:05d}"
        write_pgm(directory / f"{stem}_initial.pgm", r.initial_image)
        write_pgm(directory / f"{stem}_terminal.pgm", r.terminal_image)
        obs = []
        for i, (o, m) in enumerate(zip(r.observations, r.observation_masks)):
            write_pgm(directory / f"{stem}_obs{i}.pgm", o)
            write_pgm(directory / f"{stem}_mask{i}.pgm", m.astype(np.float64))
            obs.append({"image": f"{stem}_obs{i}.pgm", "mask": f"{stem}_mask{i}.pgm"})
        records.append({
            "rollout_id": r.rollout_id,
            "source": r.source,
            "initial_image": f"{stem}_initial.pgm",
            "terminal_image": f"{stem}_terminal.pgm",
            "observations": obs,
            "contact": np.asarray(r.contact).tolist(),
            "waypoints": np.asarray(r.waypoints).tolist(),
            "rotation": r.rotation,
            "displacements": np.asarray(r.displacements).tolist(),
            "success": r.success,
            "grasped": r.grasped,
        })
    write_jsonl(directory / "index.jsonl", records)


def load_rollouts(directory):
    directory = Path(directory)
    out = []
    for rec in read_jsonl(directory / "index.jsonl"):
        _require(rec, ("rollout_id", "observations", "contact", "waypoints"), str(directory))
        out.append(RolloutRecord(
            initial_image=read_pgm(directory / rec["initial_image"]),
            observations=[read_pgm(directory / o["image"]) for o in rec["observations"]],
            observation_masks=[read_pgm(directory / o["mask"]) > 0.5 for o in rec["observations"]],
            contact=np.asarray(rec["contact"]),
            waypoints=np.asarray(rec["waypoints"]),
            rotation=int(rec["rotation"]),
            terminal_image=read_pgm(directory / rec["terminal_image"]),
            displacements=np.asarray(rec["displacements"]),
            success=dict(rec["success"]),
            grasped=rec.get("grasped"),
            rollout_id=int(rec["rollout_id"]),
            source=rec.get("source", ""),
        ))
    return out
