"""Acceptance criteria, each at its stated tolerance.

Every test prints one ``ACCEPTANCE <n> PASS|FAIL`` line before asserting.
"""

import json
import time
from pathlib import Path

import numpy as np
import pytest

from affordance.cli import main
from affordance.errors import DegenerateConfiguration
from affordance.extract import (
    LabelExtractor,
    compensate_egomotion,
    detect_contact_time,
    extract_label,
    frame_homographies,
    make_training_samples,
)
from affordance.geometry import Homography, apply_homography, estimate_homography, fit_gmm_em
from affordance.learn import (
    DqnConfig,
    EncoderEmbedding,
    ModelPolicy,
    World,
    bc_execute,
    bc_train,
    build_action_space,
    collect,
    dqn_train,
    feature_distance_curve,
    knn_execute,
    run_paradigm_loop,
    time_correlation,
)
from affordance.learn.action_space import evaluate_actions, goal_achieving_actions, greedy_action
from affordance.model import (
    AffordanceModel,
    ModelConfig,
    TrainConfig,
    build_net,
    finite_difference_check,
    loss_contact,
    predict_crops,
    train,
)
from affordance.world import GoalSpec, drawer_scene, random_scene, render, script_human_episode, two_drawer_scene

pytestmark = pytest.mark.slow

DRAWER_GOAL = GoalSpec("drawer", 7.2)


def report(capsys, n, ok, detail, t0):
    with capsys.disabled():
        print(f"\nACCEPTANCE {n} {'PASS' if ok else 'FAIL'}: {detail} ({time.time() - t0:.1f}s)")
    assert ok, detail


def synthetic_samples(n_episodes, seed, noise=(0.0, 0.5, 3.0)):
    rng = np.random.default_rng(seed)
    eps = []
    for i in range(n_episodes):
        sc = random_scene(rng, n_objects=int(rng.integers(1, 3)))
        eps.append(script_human_episode(sc, sc.objects[0].id, noise, rng=rng, episode_id=f"ep{i:05d}"))
    pairs = LabelExtractor().transform(eps)
    return make_training_samples(pairs, 0.6, 4, rng=seed + 1)


@pytest.fixture(scope="session")
def trained_net():
    samples = synthetic_samples(400, 0)
    return AffordanceModel(epochs=60).fit(samples).net_


def drawer_world():
    return World(drawer_scene(), goals=(DRAWER_GOAL,))


def drawer_goal_image():
    return render(drawer_scene().with_q("drawer", 12.0))


# -------------------------------------------------------------------------- 1


def test_c1_gradient_oracle(capsys):
    t0 = time.time()
    worst = 0.0
    for seed in range(5):
        rng = np.random.default_rng(seed)
        net = build_net(ModelConfig(), seed)
        batch = synthetic_like_batch(rng)
        _, _, rel = finite_difference_check(net, batch, 100, 1e-4, rng=seed)
        worst = max(worst, float(rel.max()))
    ok = worst < 1e-4 and time.time() - t0 < 60
    report(capsys, 1, ok, f"max relative error {worst:.2e} over 5 seeds x 100 coords (< 1e-4)", t0)


def synthetic_like_batch(rng, n=4):
    from affordance.extract import TrainingSample

    return [TrainingSample(rng.random((38, 38)), np.zeros(2), rng.uniform(0, 37, (5, 2)), rng.normal(0, 2, (5, 2)))
            for _ in range(n)]


# -------------------------------------------------------------------------- 2


def test_c2_gmm_em(capsys):
    t0 = time.time()
    rng = np.random.default_rng(0)
    violations = 0
    for _ in range(1000):
        pts = rng.uniform(0, 64, size=(int(rng.integers(1, 60)), 2))
        ll = np.asarray(fit_gmm_em(pts, k=int(rng.integers(1, 6)), fixed_std=float(rng.uniform(0.5, 4))).log_likelihoods)
        violations += bool(np.any(np.diff(ll) < -1e-9 * np.maximum(1.0, np.abs(ll[1:]))))
    worst = 0.0
    for seed in range(20):
        r = np.random.default_rng(seed)
        ca, cb = r.uniform(5, 25, 2), r.uniform(40, 60, 2)
        a, b = r.normal(ca, 1.0, (200, 2)), r.normal(cb, 1.0, (200, 2))
        g = fit_gmm_em(np.vstack([a, b]), k=2, fixed_std=1.0, seed=seed)
        m = g.means[np.argsort(g.means[:, 0])]
        worst = max(worst, np.linalg.norm(m[0] - a.mean(0)), np.linalg.norm(m[1] - b.mean(0)))
    ok = violations == 0 and worst <= 0.5 and time.time() - t0 < 60
    report(capsys, 2, ok, f"{violations} LL decreases in 1000 fits; worst centroid error {worst:.3f} px", t0)


# -------------------------------------------------------------------------- 3


def test_c3_homography(capsys):
    t0 = time.time()
    worst_h = 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        m = np.eye(3) + rng.normal(0, 0.2, (3, 3))
        m[:2, 2] = rng.uniform(-10, 10, 2)
        m[2, :2] = rng.normal(0, 1e-3, 2)
        m[2, 2] = 1.0
        h = Homography(m)
        src = rng.uniform(0, 64, (8, 2))
        try:
            est = estimate_homography(src, apply_homography(h, src))
        except DegenerateConfiguration:
            worst_h = np.inf
            continue
        worst_h = max(worst_h, float(np.abs(est.m - h.m).max()))
    worst_exact = worst_est = 0.0
    for seed in range(20):
        ep = script_human_episode(drawer_scene(), "drawer", (0.0, 0.0, 4.0), rng=seed)
        gt = ep.ground_truth
        pts = [(t, ep.frames[t].hand.center) for t in range(gt.t_contact, gt.t_contact + 6)]
        exact = compensate_egomotion(pts, frame_homographies(ep, 0, "exact"))
        est = compensate_egomotion(pts, frame_homographies(ep, 0, "estimated"))
        worst_exact = max(worst_exact, float(np.abs(exact - gt.post_contact_track).max()))
        worst_est = max(worst_est, float(np.abs(est - gt.post_contact_track).max()))
    ok = worst_h <= 1e-6 and worst_exact <= 1e-6 and worst_est <= 0.5 and time.time() - t0 < 60
    report(capsys, 3, ok, f"planted {worst_h:.1e}; track exact {worst_exact:.1e}, estimated {worst_est:.3f} px", t0)


# -------------------------------------------------------------------------- 4


def test_c4_extraction(capsys):
    t0 = time.time()
    exact = 0
    for seed in range(100):
        ep = script_human_episode(drawer_scene(), "drawer", (0.05, 0.0, 0.0), rng=seed)
        try:
            exact += detect_contact_time(ep.contact_flags) == ep.ground_truth.t_contact
        except Exception:
            pass
    worst_c = worst_ang = 0.0
    s = drawer_scene()
    for seed in range(100):
        ep = script_human_episode(s, "drawer", rng=seed)
        lab = extract_label(ep)
        gt = ep.ground_truth
        worst_c = max(worst_c, float(np.linalg.norm(lab.contact_gmm.centroid() - gt.contact_points.mean(0))))
        total = lab.waypoints.sum(0)
        cosang = np.clip(total @ s.objects[0].axis / np.linalg.norm(total), -1, 1)
        worst_ang = max(worst_ang, float(np.degrees(np.arccos(cosang))))
    ok = exact >= 95 and worst_c <= 1.5 and worst_ang <= 1.0 and time.time() - t0 < 120
    report(capsys, 4, ok, f"noisy exact {exact}/100 (need 95); centroid {worst_c:.2f} px; axis {worst_ang:.2f} deg", t0)


# -------------------------------------------------------------------------- 5


def test_c5_overfit(capsys):
    t0 = time.time()
    rng = np.random.default_rng(0)
    one = synthetic_like_batch(rng, 1)
    losses = []
    train(one, TrainConfig(max_steps=500, seed=0), callback=lambda s, c, t: losses.append(c + t))
    ratio = losses[-1] / losses[0]
    samples = synthetic_samples(60, 5)[:200]
    net, _ = train(samples, TrainConfig(epochs=200, learning_rate=3e-3, seed=0))
    means, _ = predict_crops(net, np.stack([s.crop for s in samples]))
    err = float(np.mean([loss_contact(m, s.target_means) for m, s in zip(means, samples)]))
    ok = ratio < 0.05 and len(samples) == 200 and err < 3.0 and time.time() - t0 < 600
    report(capsys, 5, ok, f"1-sample loss ratio {ratio:.4f} (< 0.05); 200-sample contact error {err:.2f} px", t0)


# -------------------------------------------------------------------------- 6 and 7


def _random_rate(world, n, seed):
    return float(np.mean([r.any_success for r in collect(world, "random", n, rng=1000 + seed)]))


def test_c6_exploration(capsys, trained_net):
    t0 = time.time()
    w = drawer_world()
    policy = ModelPolicy(trained_net)
    model_rates, random_rates = [], []
    for seed in range(3):
        _, stats = run_paradigm_loop(w, policy, "explore", j=2, n0=30, ns=30, k=10, p=0.35, rng=seed)
        model_rates.append(np.mean([s.success_rate for s in stats]))
        random_rates.append(_random_rate(w, 90, seed))
    m, r = float(np.mean(model_rates)), float(np.mean(random_rates))
    ok = m > 0 and m >= 2 * r and time.time() - t0 < 900
    report(capsys, 6, ok, f"coincidental success model {m:.3f} vs random {r:.3f}", t0)


def test_c7_goal(capsys, trained_net):
    t0 = time.time()
    w = drawer_world()
    policy = ModelPolicy(trained_net)
    psi = EncoderEmbedding(trained_net)
    curves, random_rates = [], []
    for seed in range(3):
        _, stats = run_paradigm_loop(w, policy, "goal", drawer_goal_image(), psi, j=2, n0=30, ns=30, k=10, p=0.35,
                                     rng=seed)
        curves.append([s.success_rate for s in stats])
        random_rates.append(_random_rate(w, 30, seed))
    mean_curve = np.mean(curves, axis=0)
    r = float(np.mean(random_rates))
    monotone = bool(np.all(np.diff(mean_curve) >= 0))
    ok = monotone and mean_curve[-1] > 0 and mean_curve[-1] >= 1.5 * r and time.time() - t0 < 900
    per_seed = "; ".join(",".join(f"{v:.2f}" for v in c) for c in curves)
    report(capsys, 7, ok, f"seed-mean curve {np.round(mean_curve, 3).tolist()} (per seed {per_seed}); random {r:.3f}", t0)


# -------------------------------------------------------------------------- 8


def test_c8_imitation(capsys, trained_net):
    t0 = time.time()
    w = drawer_world()
    psi = EncoderEmbedding(trained_net)
    g = drawer_goal_image()
    rng = np.random.default_rng(0)
    aff = collect(w, "model", 100, 1.0, rng, model=ModelPolicy(trained_net))
    rnd = collect(w, "random", 100, rng=rng, start_id=100)
    knn_aff = knn_execute(aff, g, psi, w, 10, rng)
    knn_rnd = knn_execute(rnd, g, psi, w, 10, rng)
    bc = bc_execute(bc_train(aff, g, psi, 20, 500, 0), w, psi, 10, rng)
    ok = knn_aff > 0 and knn_aff >= 2 * knn_rnd and bc >= 0.5 * knn_aff and time.time() - t0 < 1200
    report(capsys, 8, ok, f"kNN affordance {knn_aff:.2f}, kNN random {knn_rnd:.2f}, BC {bc:.2f}", t0)


# -------------------------------------------------------------------------- 9


def test_c9_dqn(capsys, trained_net):
    t0 = time.time()
    scene = two_drawer_scene()
    goal = GoalSpec("left", 7.2)
    w = World(scene, goals=(goal,))
    g = render(scene.with_q("left", 12.0))
    psi = EncoderEmbedding(trained_net)
    greedy, uniform, used = [], [], []
    for seed in range(10):
        amap = build_action_space(trained_net, w.image(), 2000, 4, 4, seed)
        if not goal_achieving_actions(w, amap, seed):
            continue
        qnet, _, _ = dqn_train(w, amap, g, psi, 2000, DqnConfig(seed=seed))
        greedy.append(evaluate_actions(w, amap, [greedy_action(qnet, w, psi)], seed))
        uniform.append(evaluate_actions(w, amap, np.random.default_rng(seed).integers(len(amap), size=200), seed))
        used.append(seed)
        if len(used) == 3:
            break
    gs = float(np.mean(greedy)) if greedy else 0.0
    us = float(np.mean(uniform)) if uniform else 1.0
    ok = bool(used) and gs >= 0.8 and us <= 0.3 and time.time() - t0 < 600
    report(capsys, 9, ok, f"seeds {used}: greedy {gs:.2f} (>= 0.8), uniform {us:.3f} (<= 0.3)", t0)


# -------------------------------------------------------------------------- 10


def test_c10_feature_distance(capsys, trained_net):
    t0 = time.time()
    w = drawer_world()
    psi = EncoderEmbedding(trained_net)
    g = drawer_goal_image()
    rng = np.random.default_rng(0)
    wins = []
    while len(wins) < 20:
        wins.extend(r for r in collect(w, "model", 20, 1.0, rng, model=ModelPolicy(trained_net)) if r.any_success)
        if time.time() - t0 > 110:
            break
    rhos = [time_correlation(feature_distance_curve(r, g, psi)) for r in wins[:20]]
    med = float(np.median(rhos)) if rhos else 0.0
    ok = len(rhos) == 20 and med <= -0.8 and time.time() - t0 < 120
    report(capsys, 10, ok, f"median Spearman {med:.3f} over {len(rhos)} successful rollouts", t0)


# -------------------------------------------------------------------------- 11

SMALL = """
[world]
n_episodes = 8

[model]
epochs = 2

[paradigm]
n0 = 10
ns = 10
k = 10
j = 1
n_queries = 4
n_imitation = 20
bc_k = 10
bc_epochs = 5
bc_runs = 2
q = 40
dqn_steps = 12
"""


def test_c11_determinism(capsys, tmp_path):
    t0 = time.time()
    cfg_path = tmp_path / "run.ini"
    cfg_path.write_text(SMALL)
    cfg = ["--config", str(cfg_path), "--seed", "2"]
    codes = []
    for run in ("a", "b"):
        root = tmp_path / run
        codes.append(main(["gen-data", *cfg, "--out", str(root / "data")]))
        codes.append(main(["extract", str(root / "data"), *cfg, "--out", str(root / "ext")]))
        codes.append(main(["train", str(root / "ext"), *cfg, "--out", str(root / "model")]))
        stats = []
        for mode in ("explore", "goal", "imitate", "dqn"):
            codes.append(main(["paradigm", str(root / "model" / "model.ckpt"), "--mode", mode, *cfg,
                               "--out", str(root / mode)]))
            stats.append(str(root / mode / "stats.csv"))
        codes.append(main(["report", *stats, *cfg, "--out", str(root / "report")]))
    trees = []
    for run in ("a", "b"):
        root = tmp_path / run
        trees.append({str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()})
    differing = sorted(k for k in trees[0] if trees[1].get(k) != trees[0][k])
    ok = set(codes) == {0} and trees[0].keys() == trees[1].keys() and not differing
    report(capsys, 11, ok, f"{len(trees[0])} files compared across 9 commands, differing: {differing[:3]}", t0)
