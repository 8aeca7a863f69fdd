"""End-to-end acceptance suite for the shipped defaults.

Fast property checks come first (attention normalization, gradient agreement
against finite differences, layout counts, simulator monotonicity, receptive
field, baseline equivalence, CLI determinism). The ordering, generalization,
and export checks train the full desk profile (three agents, three seeds,
5000 steps each) through a session fixture; expect roughly half an hour of
wall time for the whole module on one core.
"""

from __future__ import annotations

import csv
import filecmp
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from tiltopt import autodiff as ad
from tiltopt import cli, gat, rl
from tiltopt.agents import (GaqAgent, NeighborhoodState, Trainer, TrainHyper,
                            make_agent, random_policy_rewards)
from tiltopt.autodiff import Tape, Var
from tiltopt.config import load_config
from tiltopt.graph import build_graph
from tiltopt.harness import (eval_run, export_attention, rng_streams,
                             train_run)
from tiltopt.simulator import (NetworkEnv, SimConfig, association_and_sinr,
                               build_layout, path_loss_db)

REPO = Path(__file__).resolve().parent.parent
DESK_CONFIG = REPO / "configs" / "desk.yaml"

ROW_SUM_TOL = 1e-9
GRAD_RTOL = 1e-4
FD_STEP = 1e-5
ORDERING_MARGIN_DB = 0.5
ORACLE_GAP_FRACTION = 0.8
GENERALIZATION_DROP_DB = 1.0
SECONDS_PER_SEED = 1800.0
GENERALIZATION_BUDGET_S = 600.0

KINDS = ("gaq", "dqn", "ndqn")
SEEDS = (0, 1, 2)


# --------------------------------------------------------- attention rows


def _random_closed_neighborhood(rng, n):
    others = rng.permutation(n - 1) + 1
    take = rng.integers(0, n)
    return np.concatenate(([0], np.sort(others[:take]))).astype(np.intp)


def test_attention_rows_sum_to_one_on_random_inputs():
    rng = np.random.default_rng(20260816)
    start = time.monotonic()
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        d_in = int(rng.integers(1, 6))
        d_hid = int(rng.integers(1, 7))
        stack = gat.init_gat_stack(rng, d_in=d_in, d_hidden=d_hid,
                                   n_layers=1, n_heads=2)
        feats = rng.standard_normal((n, d_in)) * 3.0
        nb = _random_closed_neighborhood(rng, n)
        for head in range(2):
            alpha = gat.attention_coefficients(feats[nb], stack.layers[0], head)
            assert alpha.shape == (len(nb),)
            assert np.all(alpha > 0.0)
            assert abs(alpha.sum() - 1.0) <= ROW_SUM_TOL
    assert time.monotonic() - start < 10.0


# ------------------------------------------------- gradients vs differences


def _central_difference(loss_fn, params):
    grads = []
    for p in params:
        g = np.zeros_like(p.value)
        flat = p.value.ravel()
        gflat = g.ravel()
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + FD_STEP
            up = loss_fn()
            flat[k] = orig - FD_STEP
            down = loss_fn()
            flat[k] = orig
            gflat[k] = (up - down) / (2.0 * FD_STEP)
        grads.append(g)
    return grads


def _max_rel_err(analytic, numeric):
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-6)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def _check_grads(params, build_loss):
    tape = Tape()
    loss = build_loss(tape)
    for p in params:
        p.zero_grad()
    ad.backward(tape, loss)
    analytic = [p.grad.copy() for p in params]
    numeric = _central_difference(
        lambda: build_loss(Tape()).value[0, 0], params)
    return _max_rel_err(analytic, numeric)


def test_mlp_gradients_match_finite_differences():
    rng = np.random.default_rng(11)
    for _ in range(100):
        dims = [int(rng.integers(1, 9)) for _ in range(3)]
        mlp = rl.init_mlp(rng, dims)
        x = rng.standard_normal((int(rng.integers(1, 5)), dims[0]))

        def loss(tape):
            out = rl.mlp_forward(mlp, Var(x), tape)
            return ad.sum_all(tape, ad.square(tape, out))

        assert _check_grads(mlp.params(), loss) < GRAD_RTOL


def test_gat_layer_gradients_match_finite_differences():
    rng = np.random.default_rng(12)
    for _ in range(100):
        n = int(rng.integers(2, 6))
        stack = gat.init_gat_stack(rng, d_in=int(rng.integers(1, 5)),
                                   d_hidden=int(rng.integers(1, 6)),
                                   n_layers=1, n_heads=int(rng.integers(1, 3)))
        feats = rng.standard_normal((n, stack.d_in))
        nbhds = [_random_closed_neighborhood(rng, n) for _ in range(n)]
        nbhds = [np.concatenate(([i], nb[1:][nb[1:] != i])).astype(np.intp)
                 for i, nb in enumerate(nbhds)]

        def loss(tape):
            out = gat.stack_forward(stack, feats, nbhds, tape=tape)
            return ad.sum_all(tape, ad.square(tape, out))

        assert _check_grads(stack.params(), loss) < GRAD_RTOL


def test_value_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(13)
    for _ in range(100):
        agent = GaqAgent(rng, d_in=3, d_hidden=4, n_layers=2, n_heads=2,
                         hidden=(5,), n_actions=3)
        states = []
        for _ in range(3):
            n = int(rng.integers(1, 4))
            rows = rng.standard_normal((n, 3))
            nbhds = tuple(np.arange(n, dtype=np.intp) if j == 0
                          else np.array([j, 0], dtype=np.intp)
                          for j in range(n))
            states.append(NeighborhoodState(rows, nbhds))
        actions = rng.integers(0, 3, size=3)
        targets = rng.standard_normal(3) * 2.0
        weights = rng.uniform(0.2, 1.0, size=3)

        def loss(tape):
            q = agent.q_batch(states, tape)
            return rl.weighted_td_loss(tape, q, actions, targets, weights)[0]

        assert _check_grads(agent.params(), loss) < GRAD_RTOL


# ------------------------------------------------------------- layout counts


def test_hexagonal_layout_site_and_cell_counts():
    two = build_layout(2, 800.0)
    assert (two.n_sites, two.n_cells) == (19, 57)
    three = build_layout(3, 800.0)
    assert (three.n_sites, three.n_cells) == (37, 111)


# ----------------------------------------------------- simulator monotonicity


def test_path_loss_strictly_increases_with_distance():
    d = np.linspace(30.0, 20000.0, 1000)
    pl = path_loss_db(d, freq_mhz=2100.0, bs_height_m=32.0, ue_height_m=1.5)
    assert np.all(np.diff(pl) > 0.0)


def test_user_sinr_weakly_decreases_when_interference_rises():
    rng = np.random.default_rng(14)
    for _ in range(100):
        users, cells = int(rng.integers(2, 30)), int(rng.integers(2, 8))
        rx = rng.uniform(-120.0, -60.0, size=(cells, users))
        serving, sinr = association_and_sinr(rx, noise_dbm=-104.0)
        u = int(rng.integers(0, users))
        interferers = [c for c in range(cells) if c != serving[u]]
        j = int(rng.choice(interferers))
        bumped = rx.copy()
        # close half the gap to the serving cell: power rises, the
        # association stays put, so the cell remains an interferer
        bumped[j, u] += (rx[serving[u], u] - rx[j, u]) / 2.0
        serving2, sinr2 = association_and_sinr(bumped, noise_dbm=-104.0)
        assert serving2[u] == serving[u]
        assert sinr2[u] <= sinr[u] + 1e-12


# ------------------------------------------------------------ receptive field


def test_far_cell_features_cannot_move_action_values():
    rng = np.random.default_rng(15)
    agent = make_agent("gaq", np.random.default_rng(99))
    for case in range(20):
        env = NetworkEnv(SimConfig(seed=1000 + case, n_rings=2, users=150,
                                   neighbors=5),
                         np.random.default_rng(case))
        feats = env.features()
        candidates = [c for c in range(env.n_cells)
                      if np.any(env.graph.hop_distances(c) >= 3)]
        assert candidates, "layout too small to host a 3-hop pair"
        i = int(rng.choice(candidates))
        hops = env.graph.hop_distances(i)
        far = np.where(hops >= 3)[0]
        q_before = agent.act_values(env.graph, feats)[i].copy()
        mutated = feats.copy()
        mutated[far] = rng.standard_normal((far.size, feats.shape[1])) * 10.0
        q_after = agent.act_values(env.graph, mutated)[i]
        assert np.array_equal(q_before, q_after)


# -------------------------------------------------------- baseline equivalence


def _action_trace(kind: str, seed: int, steps: int) -> np.ndarray:
    cfg = SimConfig(seed=seed, n_rings=1, users=100, neighbors=0)
    env_rng, agent_rng, replay_rng = rng_streams(seed)
    env = NetworkEnv(cfg, env_rng)
    agent = make_agent(kind, agent_rng, neighbor_count=0)
    trainer = Trainer(env, agent, replace(TrainHyper(), steps=steps),
                      agent_rng, replay_rng)
    return np.stack([trainer.step(t).actions for t in range(steps)])


def test_neighborless_concat_baseline_replays_plain_baseline_actions():
    a = _action_trace("dqn", seed=5, steps=120)
    b = _action_trace("ndqn", seed=5, steps=120)
    assert np.array_equal(a, b)


# ------------------------------------------------------------ CLI determinism


def test_cli_train_twice_writes_identical_metrics(tmp_path):
    out1, out2 = tmp_path / "a", tmp_path / "b"
    args = ["train", "--config", str(DESK_CONFIG), "--agent", "dqn",
            "--seed", "3", "--steps", "260"]
    assert cli.main(args + ["--out", str(out1)]) == 0
    assert cli.main(args + ["--out", str(out2)]) == 0
    assert filecmp.cmp(out1 / "metrics.csv", out2 / "metrics.csv",
                       shallow=False)
    first = (out1 / "metrics.csv").read_text().splitlines()
    assert len(first) == 261


# --------------------------------------------------------------- desk profile


def _final_mean(run_dir: Path, tail: int = 500) -> float:
    with open(run_dir / "metrics.csv") as fh:
        rewards = [float(row["mean_reward"]) for row in csv.DictReader(fh)]
    return float(np.mean(rewards[-tail:]))


def _wall_seconds(run_dir: Path) -> float:
    for line in (run_dir / "run.txt").read_text().splitlines():
        if line.startswith("wall_seconds:"):
            return float(line.split(":")[1])
    raise AssertionError(f"no wall_seconds in {run_dir}/run.txt")


@pytest.fixture(scope="session")
def desk_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    cfg = load_config(DESK_CONFIG)
    runs = {}
    for kind in KINDS:
        for seed in SEEDS:
            runs[kind, seed] = train_run(cfg, kind, seed,
                                         root / f"{kind}_s{seed}")
    return runs


def test_desk_runs_stay_inside_the_time_budget(desk_runs):
    for (kind, seed), run_dir in desk_runs.items():
        took = _wall_seconds(run_dir)
        assert took < SECONDS_PER_SEED, (kind, seed, took)


def test_graph_agent_beats_local_baseline(desk_runs):
    gaq = np.array([_final_mean(desk_runs["gaq", s]) for s in SEEDS])
    dqn = np.array([_final_mean(desk_runs["dqn", s]) for s in SEEDS])
    wins = int(np.sum(gaq > dqn))
    margin = float(gaq.mean() - dqn.mean())
    print(f"\nper-seed final-500 means  graph agent: {np.round(gaq, 4)}  "
          f"local baseline: {np.round(dqn, 4)}")
    print(f"seed-wins {wins}/3, seed-mean margin {margin:+.4f} dB")
    assert wins >= 2, f"graph agent won only {wins}/3 seeds"
    assert margin > ORDERING_MARGIN_DB, (
        f"seed-mean margin {margin:+.4f} dB is not above "
        f"{ORDERING_MARGIN_DB} dB")


def test_graph_agent_tracks_neighbor_oracle(desk_runs):
    gaq = np.mean([_final_mean(desk_runs["gaq", s]) for s in SEEDS])
    dqn = np.mean([_final_mean(desk_runs["dqn", s]) for s in SEEDS])
    ndqn = np.mean([_final_mean(desk_runs["ndqn", s]) for s in SEEDS])
    gap_gaq, gap_oracle = gaq - dqn, ndqn - dqn
    print(f"\nfinal-500 seed-means: graph {gaq:.4f}, local {dqn:.4f}, "
          f"neighbor-concat {ndqn:.4f}")
    print(f"gap above local baseline: graph {gap_gaq:+.4f} dB, "
          f"oracle {gap_oracle:+.4f} dB")
    assert gap_gaq >= 0.0, f"graph agent below local baseline by {gap_gaq} dB"
    required = ORACLE_GAP_FRACTION * max(gap_oracle, 0.0)
    assert gap_gaq >= required, (
        f"graph agent gap {gap_gaq:+.4f} dB under {ORACLE_GAP_FRACTION:.0%} "
        f"of the oracle gap {gap_oracle:+.4f} dB")


def test_trained_model_generalizes_to_denser_graphs(desk_runs, tmp_path):
    ckpt = desk_runs["gaq", 0] / "checkpoint_final.npz"
    start = time.monotonic()
    means = {}
    for k in (5, 10, 20):
        rewards = eval_run(ckpt, tmp_path / f"k{k}", episodes=100,
                           neighbors=k, seed=20260816)
        means[k] = float(rewards.mean())
    cfg = SimConfig(seed=20260816, n_rings=1, users=200, neighbors=5)
    env_rng, _, _ = rng_streams(20260816)
    rand = float(random_policy_rewards(NetworkEnv(cfg, env_rng),
                                       np.random.default_rng(7), 100).mean())
    took = time.monotonic() - start
    print(f"\neval means: k=5 {means[5]:.4f}, k=10 {means[10]:.4f}, "
          f"k=20 {means[20]:.4f}, random tilts {rand:.4f}  ({took:.0f}s)")
    for k in (10, 20):
        assert means[k] >= means[5] - GENERALIZATION_DROP_DB, (
            f"k={k} mean {means[k]:.4f} fell more than "
            f"{GENERALIZATION_DROP_DB} dB below k=5 mean {means[5]:.4f}")
        assert means[k] > rand, (
            f"k={k} mean {means[k]:.4f} not above random {rand:.4f}")
    assert took < GENERALIZATION_BUDGET_S


def test_attention_export_is_complete_and_normalized(desk_runs, tmp_path):
    ckpt = desk_runs["gaq", 0] / "checkpoint_final.npz"
    out = export_attention(ckpt, tmp_path / "attn")
    with open(out / "attention.csv") as fh:
        rows = list(csv.DictReader(fh))
    with open(out / "nodes.csv") as fh:
        nodes = list(csv.DictReader(fh))

    cfg = SimConfig(seed=0, n_rings=1, users=200, neighbors=5)
    env_rng, _, _ = rng_streams(0)
    env = NetworkEnv(cfg, env_rng)
    expected_pairs = {(i, int(j))
                      for i, nb in enumerate(env.graph.closed_neighborhoods)
                      for j in nb}
    got_pairs = {(int(r["src"]), int(r["dst"])) for r in rows}
    assert len(nodes) == env.n_cells
    assert got_pairs == expected_pairs

    strengths: dict[int, float] = {}
    same_site, cross_site = [], []
    for r in rows:
        src, dst, s = int(r["src"]), int(r["dst"]), float(r["strength"])
        assert np.isfinite(s) and s > 0.0
        strengths[src] = strengths.get(src, 0.0) + s
        if src != dst:
            (same_site if dst // 3 == src // 3 else cross_site).append(s)
    for src, total in strengths.items():
        assert abs(total - 1.0) <= ROW_SUM_TOL, (src, total)
    print(f"\nmean attention strength, same-site {np.mean(same_site):.4f} "
          f"vs cross-site {np.mean(cross_site):.4f} "
          f"(reported, not asserted)")
