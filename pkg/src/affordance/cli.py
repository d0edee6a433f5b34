"""Command-line entry point: gen-data, extract, train, paradigm, report."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataio, report
from .config import dump_config, load_config
from .errors import (
    AffordanceError,
    ConfigError,
    EmptyDataset,
    InsufficientData,
    IoError,
    SchemaError,
    ShapeMismatch,
    UnknownObject,
)
from .extract import LabelExtractor, TrainingSample, make_training_samples
from .model import ModelConfig, TrainConfig, build_net, load_checkpoint, save_checkpoint, train
from .world import GoalSpec, drawer_scene, random_scene, render, script_human_episode, two_drawer_scene

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4
MODES = ("imitate", "explore", "goal", "dqn")
SCENES = {"drawer": drawer_scene, "two-drawer": two_drawer_scene}
OUTCOME_COLUMNS = ("run_id", "paradigm", "rollout_id", "source", "outcome")


def _out_dir(path):
    p = Path(path)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create output directory {p}: {exc}") from exc
    if not p.is_dir():
        raise IoError(f"output path {p} is not a directory")
    return p


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


# -------------------------------------------------------------------------- verbs


def cmd_gen_data(cfg, out):
    """Scripted human episodes plus a manifest with the config hash and seed."""
    out = _out_dir(out)
    w = cfg.world
    rng = np.random.default_rng(cfg.seed)
    episodes = []
    for i in range(w.n_episodes):
        scene = random_scene(rng, n_objects=int(rng.integers(1, w.max_objects + 1)))
        episodes.append(script_human_episode(scene, scene.objects[0].id, (w.flip_prob, w.jitter, w.ego_amplitude),
                                             rng=rng, episode_id=f"ep{i:05d}"))
    try:
        dataio.save_episodes(out, episodes)
    except OSError as exc:
        raise IoError(f"cannot write episodes under {out}: {exc}") from exc
    (out / "config.ini").write_text(dump_config(cfg.with_overrides(out_dir="")), encoding="utf-8")
    _write_json(out / "manifest.json", {"config_sha256": cfg.digest(), "seed": cfg.seed, "n_episodes": len(episodes)})
    return {"episodes": len(episodes)}


def cmd_extract(cfg, data_dir, out):
    """Labels and training crops; prints extraction and discard counts."""
    try:
        episodes = dataio.load_episodes(data_dir)
    except FileNotFoundError as exc:
        raise IoError(str(exc)) from exc
    out = _out_dir(out)
    e = cfg.extract
    ex = LabelExtractor(n_modes=e.n_modes, homography_mode=e.homography_mode, random_state=cfg.seed,
                        window=e.window, polyorder=e.polyorder, threshold=e.threshold)
    pairs = ex.transform(episodes)
    dataio.write_jsonl(out / "labels.jsonl", [lab.to_record() for _, lab in pairs])
    samples = make_training_samples(pairs, e.crop_fraction, e.samples_per_label, rng=cfg.seed) if pairs else []
    (out / "samples").mkdir(exist_ok=True)
    records = []
    for i, s in enumerate(samples):
        rel = f"samples/s{i:06d}.pgm"
        dataio.write_pgm(out / rel, s.crop)
        records.append({"crop": rel, "offset": s.crop_offset.tolist(), "means": s.target_means.tolist(),
                        "waypoints": s.target_waypoints.tolist(), "episode_id": s.episode_id})
    dataio.write_jsonl(out / "samples.jsonl", records)
    counts = {"extracted": ex.counts_["extracted"], "discarded_no_contact": ex.counts_["NoContact"],
              "discarded_out_of_frame": ex.counts_["OutOfFrame"], "discarded_other": ex.counts_["Discard"],
              "samples": len(samples)}
    _write_json(out / "counts.json", counts)
    return counts


def load_samples(directory):
    directory = Path(directory)
    index = directory / "samples.jsonl"
    if not index.exists():
        raise IoError(f"{index} does not exist")
    out = []
    for rec in dataio.read_jsonl(index):
        for key in ("crop", "offset", "means", "waypoints"):
            if key not in rec:
                raise SchemaError(f"{index}: missing field {key!r}")
        out.append(TrainingSample(dataio.read_pgm(directory / rec["crop"]), np.asarray(rec["offset"], dtype=np.float64),
                                  np.asarray(rec["means"], dtype=np.float64),
                                  np.asarray(rec["waypoints"], dtype=np.float64), rec.get("episode_id", "")))
    return out


def cmd_train(cfg, samples_dir, out):
    """Checkpoint and per-epoch loss CSV."""
    samples = load_samples(samples_dir)
    if not samples:
        raise EmptyDataset(f"no samples in {samples_dir}")
    m = cfg.model
    if samples[0].crop.shape[0] != m.crop_size:
        raise ShapeMismatch(f"samples are {samples[0].crop.shape[0]}px, config expects {m.crop_size}px")
    out = _out_dir(out)
    mc = ModelConfig(crop_size=m.crop_size, channels=tuple(m.channels), hidden=m.hidden, attention=m.attention)
    tc = TrainConfig(m.learning_rate, m.epochs, m.batch_size, cfg.seed, m.lambda_traj)
    net, curve = train(samples, tc, mc, build_net(mc, cfg.seed))
    save_checkpoint(out / "model.ckpt", net, {"config_sha256": cfg.digest(), "seed": cfg.seed})
    curve.to_csv(out / "loss.csv")
    return {"epochs": len(curve.epoch), "final_contact_loss": curve.contact[-1], "final_traj_loss": curve.traj[-1]}


def _world_and_goal(cfg, goal_text):
    from .learn import World

    p = cfg.paradigm
    if p.scene not in SCENES:
        raise ConfigError(f"unknown scene {p.scene!r}; choose from {', '.join(SCENES)}")
    try:
        goal = GoalSpec.parse(goal_text or p.goal)
    except ValueError as exc:
        raise ConfigError(f"bad goal {goal_text or p.goal!r}: {exc}") from exc
    scene = SCENES[p.scene]()
    try:
        obj = scene.object(goal.object_id)
    except UnknownObject as exc:
        raise ConfigError(f"goal object {goal.object_id!r} is not in the {p.scene} scene") from exc
    world = World(scene, goals=(goal,))
    goal_q = obj.q_max if goal.opening else obj.q_min
    return world, goal, render(scene.with_q(goal.object_id, goal_q))


def cmd_paradigm(cfg, checkpoint, mode, goal_text, out):
    """Run one paradigm; write stats.csv and outcomes.csv."""
    from .learn import (
        DqnConfig,
        ModelPolicy,
        bc_execute,
        bc_train,
        build_action_space,
        classify_outcome,
        collect,
        dqn_train,
        knn_execute,
        make_embedding,
        run_paradigm_loop,
    )
    from .learn.action_space import evaluate_actions, greedy_action

    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    try:
        net, _ = load_checkpoint(checkpoint)
    except FileNotFoundError as exc:
        raise IoError(str(exc)) from exc
    p = cfg.paradigm
    world, goal, goal_image = _world_and_goal(cfg, goal_text)
    try:
        psi = make_embedding(p.embedding, net)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    policy = ModelPolicy(net, p.n_queries)
    run_id = f"seed{cfg.seed}"
    rng = np.random.default_rng(cfg.seed)
    stats, rollouts = [], []

    def row(metric, step, value):
        stats.append([run_id, mode, metric, step, f"{float(value):.10g}"])

    if mode in ("explore", "goal"):
        dataset, its = run_paradigm_loop(world, policy, mode, goal_image=goal_image, psi=psi, j=p.j, n0=p.n0, ns=p.ns,
                                         k=p.k, p=p.p, rng=rng, std_c=p.std_c, std_tau=p.std_tau,
                                         goal_metric=p.goal_metric)
        for s in its:
            row("success_rate", s.iteration, s.success_rate)
            row("mean_env_change", s.iteration, s.mean_env_change)
            row("n_from_model", s.iteration, s.n_from_model)
        rollouts = dataset
    elif mode == "imitate":
        aff = collect(world, "model", p.n_imitation, 1.0, rng, model=policy)
        rnd = collect(world, "random", p.n_imitation, rng=rng, start_id=p.n_imitation)
        knn_aff = knn_execute(aff, goal_image, psi, world, p.k, rng, p.goal_metric)
        knn_rnd = knn_execute(rnd, goal_image, psi, world, p.k, rng, p.goal_metric)
        bc = bc_train(aff, goal_image, psi, p.bc_k, p.bc_epochs, cfg.seed)
        row("knn_affordance", 0, knn_aff)
        row("knn_random", 0, knn_rnd)
        row("bc_affordance", 0, bc_execute(bc, world, psi, p.bc_runs, rng))
        rollouts = aff + rnd
    else:
        amap = build_action_space(net, world.image(), p.q, p.n_c, p.n_tau, cfg.seed)
        qnet, curve, counts = dqn_train(world, amap, goal_image, psi, p.dqn_steps,
                                        DqnConfig(seed=cfg.seed, reward_sign=p.dqn_reward_sign))
        for step, v in enumerate(curve):
            row("rolling_success", step, v)
        a = greedy_action(qnet, world, psi)
        row("greedy_action", p.dqn_steps, a)
        row("greedy_success", p.dqn_steps, evaluate_actions(world, amap, [a], rng))
        uniform = rng.integers(len(amap), size=p.n0)
        row("uniform_success", p.dqn_steps, evaluate_actions(world, amap, uniform, rng))
        rollouts = [world.execute(*amap.action(a), rng, rollout_id=i, source=f"action{a}")
                    for i, a in enumerate(range(len(amap)))]

    out = _out_dir(out)
    report.write_csv(out / "stats.csv", report.STATS_COLUMNS, stats)
    outcomes = [[run_id, mode, r.rollout_id, r.source, classify_outcome(r, goal, world.scene)] for r in rollouts]
    report.write_csv(out / "outcomes.csv", OUTCOME_COLUMNS, outcomes)
    return {"rows": len(stats), "rollouts": len(rollouts)}


def cmd_report(stats_files, out):
    """One SVG per metric and a summary table across all inputs."""
    rows = []
    for path in stats_files:
        if not Path(path).exists():
            raise IoError(f"{path} does not exist")
        rows.extend(report.read_stats(path))
    if not rows:
        raise EmptyDataset("no stats rows to report")
    out = _out_dir(out)
    written = []
    for metric, series in report.group_series(rows).items():
        named = {f"{paradigm}/{run}": pts for (paradigm, run), pts in series.items()}
        svg = report.line_plot_svg(named, title=metric, xlabel="iteration / step", ylabel=metric)
        name = f"{metric}.svg"
        (out / name).write_text(svg, encoding="utf-8")
        written.append(name)
    report.write_csv(out / "summary.csv", report.SUMMARY_COLUMNS, report.summary_rows(rows))
    return {"plots": len(written)}


# -------------------------------------------------------------------------- entry point


def build_parser():
    parser = argparse.ArgumentParser(prog="affordance", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", type=Path, default=None, help="INI run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        return p

    common(sub.add_parser("gen-data", help="generate scripted human episodes"))
    common(sub.add_parser("extract", help="extract affordance labels")).add_argument("data", type=Path)
    common(sub.add_parser("train", help="train the affordance model")).add_argument("samples", type=Path)
    pp = common(sub.add_parser("paradigm", help="run a robot-learning paradigm"))
    pp.add_argument("checkpoint", type=Path)
    pp.add_argument("--mode", choices=MODES, required=True)
    pp.add_argument("--goal", default=None, metavar="OBJECT:THRESHOLD")
    rp = common(sub.add_parser("report", help="plot stats CSVs"))
    rp.add_argument("stats", type=Path, nargs="+")
    return parser


def run(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    cfg = load_config(args.config).with_overrides(seed=args.seed, out_dir=args.out)
    out = Path(cfg.out_dir)
    if args.command == "gen-data":
        return cmd_gen_data(cfg, out)
    if args.command == "extract":
        return cmd_extract(cfg, args.data, out)
    if args.command == "train":
        return cmd_train(cfg, args.samples, out)
    if args.command == "paradigm":
        return cmd_paradigm(cfg, args.checkpoint, args.mode, args.goal, out)
    return cmd_report(args.stats, out)


def main(argv=None):
    try:
        result = run(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (IoError, SchemaError, EmptyDataset, InsufficientData, ShapeMismatch, UnknownObject, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (AffordanceError, RuntimeError, ValueError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(json.dumps(result, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
