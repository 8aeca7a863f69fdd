"""Train the local-state baseline for a few hundred steps and watch it learn.

Runs in well under a minute. The point is to show the training loop's moving
parts (exploration schedule, warmup, loss after warmup, checkpointing), not to
reach a converged policy; see generalization_eval.py for a longer run.
"""

import tempfile
from dataclasses import replace
from pathlib import Path

import numpy as np

from tiltopt.agents import Trainer, TrainHyper, load_checkpoint, make_agent
from tiltopt.harness import rng_streams
from tiltopt.simulator import NetworkEnv, SimConfig
from tiltopt.agents import save_checkpoint

STEPS = 600


def main():
    sim = SimConfig(seed=0, n_rings=1, users=200, neighbors=5)
    env_rng, agent_rng, replay_rng = rng_streams(seed=0)
    env = NetworkEnv(sim, env_rng)
    agent = make_agent("dqn", agent_rng)
    hyper = replace(TrainHyper(), steps=STEPS)
    trainer = Trainer(env, agent, hyper, agent_rng, replay_rng)

    rewards, losses = [], []
    for t in range(STEPS):
        res = trainer.step(t)
        rewards.append(res.mean_reward)
        losses.append(res.loss)
        if t % 100 == 0:
            loss = "warmup" if res.loss is None else f"{res.loss:8.3f}"
            print(f"step {t:4d}  eps {res.epsilon:.3f}  "
                  f"reward {res.mean_reward:6.3f}  loss {loss}")

    r = np.array(rewards)
    first_updates = next(i for i, l in enumerate(losses) if l is not None)
    print(f"\nwarmup ended at step {first_updates} "
          f"(buffer needs {hyper.warmup} transitions, "
          f"{env.n_cells} arrive per step)")
    print(f"reward first 100 steps: {r[:100].mean():.3f}, "
          f"last 100 steps: {r[-100:].mean():.3f}")

    with tempfile.TemporaryDirectory() as tmp:
        ck = Path(tmp) / "smoke.npz"
        save_checkpoint(ck, agent, sim, STEPS)
        reloaded, _, step = load_checkpoint(ck)
        same = np.array_equal(
            reloaded.act_values(env.graph, env.features()),
            agent.act_values(env.graph, env.features()))
        print(f"checkpoint round-trip at step {step}: "
              f"greedy values identical = {same}")


if __name__ == "__main__":
    main()
