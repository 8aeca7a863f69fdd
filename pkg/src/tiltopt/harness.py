"""Experiment orchestration: seeded runs and their on-disk artifacts.

Every run owns three RNG streams split from the run seed (environment, agent,
replay), so adding randomness to one consumer never shifts the draws of
another. Floats are written with repr, which round-trips exactly; a fixed
(config, seed) pair therefore reproduces metrics files byte for byte. The
run sidecar records wall time and is the one file exempt from that guarantee.
"""

from __future__ import annotations

import csv
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import agents as ag
from . import gat
from .config import RunConfig
from .simulator import NetworkEnv, SimConfig

METRICS_HEADER = ["step", "mean_reward", "loss", "epsilon", "intersite_m"]


def rng_streams(seed: int):
    """(env, agent, replay) generators split hierarchically from one seed."""
    env_ss, agent_ss, replay_ss = np.random.SeedSequence(seed).spawn(3)
    return (np.random.default_rng(env_ss), np.random.default_rng(agent_ss),
            np.random.default_rng(replay_ss))


def _fmt(x: float) -> str:
    return repr(float(x))


def build_agent(cfg: RunConfig, kind: str, rng: np.random.Generator):
    if kind == "gaq":
        kw = dict(d_hidden=cfg.model.d_hidden, n_heads=cfg.model.n_heads,
                  n_layers=cfg.model.n_layers, hidden=cfg.model.hidden)
    else:
        kw = dict(hidden=cfg.model.hidden)
    return ag.make_agent(kind, rng, neighbor_count=cfg.sim.neighbors, **kw)


def train_run(cfg: RunConfig, kind: str, seed: int, out_dir,
              steps_override: int | None = None) -> Path:
    """One seeded training run; returns the output directory.

    Writes metrics.csv (one row per step), periodic and final checkpoints,
    and a small run.txt sidecar.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    steps = cfg.train.steps if steps_override is None else steps_override
    if steps < 1:
        raise ValueError("step count must be positive")
    hyper = replace(cfg.train, steps=steps)
    sim = replace(cfg.sim, seed=seed)

    env_rng, agent_rng, replay_rng = rng_streams(seed)
    env = NetworkEnv(sim, env_rng)
    agent = build_agent(cfg, kind, agent_rng)
    trainer = ag.Trainer(env, agent, hyper, agent_rng, replay_rng)

    started = time.perf_counter()
    with open(out / "metrics.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_HEADER)
        for t in range(steps):
            res = trainer.step(t)
            w.writerow([t, _fmt(res.mean_reward),
                        "" if res.loss is None else _fmt(res.loss),
                        _fmt(res.epsilon), _fmt(res.intersite_m)])
            done = t + 1
            if (cfg.checkpoint_every and done % cfg.checkpoint_every == 0
                    and done < steps):
                ag.save_checkpoint(out / f"checkpoint_{done:06d}.npz",
                                   agent, sim, done)
    ag.save_checkpoint(out / "checkpoint_final.npz", agent, sim, steps)

    wall = time.perf_counter() - started
    with open(out / "run.txt", "w") as fh:
        fh.write(f"agent: {kind}\nseed: {seed}\nsteps: {steps}\n"
                 f"wall_seconds: {wall:.3f}\n")
    return out


def eval_run(checkpoint, out_dir, episodes: int, neighbors: int | None = None,
             rings: int | None = None, seed: int | None = None) -> np.ndarray:
    """Greedy evaluation of a checkpoint; writes rewards.csv and cdf.csv.

    neighbors widens (or narrows) the graph the policy acts on, and rings
    changes the site count; the attention agent transfers across both, which
    is exactly the generalization being probed.
    """
    if episodes < 1:
        raise ValueError("episode count must be positive")
    agent, sim, _ = ag.load_checkpoint(checkpoint)
    if neighbors is not None:
        sim = replace(sim, neighbors=neighbors)
    if rings is not None:
        sim = replace(sim, n_rings=rings)
    if seed is not None:
        sim = replace(sim, seed=seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    env_rng, _, _ = rng_streams(sim.seed)
    env = NetworkEnv(sim, env_rng)
    rewards = ag.evaluate(env, agent, episodes)

    with open(out / "rewards.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["episode", "step", "mean_reward"])
        for e in range(rewards.shape[0]):
            for s in range(rewards.shape[1]):
                w.writerow([e, s, _fmt(rewards[e, s])])

    flat = np.sort(rewards.ravel())
    with open(out / "cdf.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["value", "cum_frac"])
        for i, v in enumerate(flat):
            w.writerow([_fmt(v), _fmt((i + 1) / flat.size)])
    return rewards


def export_attention(checkpoint, out_dir, sim: SimConfig | None = None,
                     seed: int | None = None) -> Path:
    """Head-averaged first-layer attention on one snapshot.

    Writes nodes.csv (cell id, position, azimuth) and attention.csv with one
    row per ordered pair (cell, member of its closed neighborhood), self
    included; each cell's strengths sum to 1.
    """
    agent, ck_sim, _ = ag.load_checkpoint(checkpoint)
    if not isinstance(agent, ag.GaqAgent):
        raise ValueError("attention export needs a graph-agent checkpoint, "
                         f"got kind {agent.kind!r}")
    sim = ck_sim if sim is None else sim
    if seed is not None:
        sim = replace(sim, seed=seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    env_rng, _, _ = rng_streams(sim.seed)
    env = NetworkEnv(sim, env_rng)
    feats = env.features()
    strengths = gat.mean_first_layer_attention(agent.stack, feats,
                                               env.graph.closed_neighborhoods)

    layout = env.layout
    with open(out / "nodes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_id", "x", "y", "azimuth_deg"])
        for i in range(layout.n_cells):
            w.writerow([i, _fmt(layout.cell_xy[i, 0]), _fmt(layout.cell_xy[i, 1]),
                        _fmt(layout.cell_azimuth_deg[i])])

    with open(out / "attention.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst", "strength"])
        for i, nb in enumerate(env.graph.closed_neighborhoods):
            for j, s in zip(nb, strengths[i]):
                w.writerow([i, int(j), _fmt(s)])
    return out


def read_metrics(run_dir):
    """metrics.csv back as (steps, mean_rewards) float arrays."""
    steps, rewards = [], []
    with open(Path(run_dir) / "metrics.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            steps.append(int(row["step"]))
            rewards.append(float(row["mean_reward"]))
    return np.array(steps), np.array(rewards)


def aggregate_runs(run_dirs, out_path) -> Path:
    """Per-step mean and sample standard deviation across runs."""
    if not run_dirs:
        raise ValueError("no run directories given")
    grids, curves = [], []
    for d in run_dirs:
        steps, rewards = read_metrics(d)
        grids.append(steps)
        curves.append(rewards)
    for d, g in zip(run_dirs[1:], grids[1:]):
        if not np.array_equal(g, grids[0]):
            raise ValueError(f"step grid of {d} does not match {run_dirs[0]}")

    stacked = np.stack(curves)
    mean = stacked.mean(axis=0)
    std = (stacked.std(axis=0, ddof=1) if len(curves) > 1
           else np.zeros_like(mean))
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "mean", "std"])
        for t, m, s in zip(grids[0], mean, std):
            w.writerow([t, _fmt(m), _fmt(s)])
    return out_path
