"""Train the attention agent briefly, then evaluate it on denser graphs.

The trained model never sees more than its configured neighbor count during
training; evaluation widens the graph (k=10, then a fully connected 21-cell
graph at k=20) without retraining. The flat concatenating baseline cannot do
this at all: its input width is baked in at build time.

Takes a couple of minutes; the training length here is a demonstration, not
the full protocol.
"""

from dataclasses import replace

import numpy as np

from tiltopt.agents import (Trainer, TrainHyper, evaluate, make_agent,
                            random_policy_rewards)
from tiltopt.harness import rng_streams
from tiltopt.simulator import NetworkEnv, SimConfig

STEPS = 800
EPISODES = 10


def trained_agent(sim: SimConfig):
    env_rng, agent_rng, replay_rng = rng_streams(seed=0)
    env = NetworkEnv(sim, env_rng)
    agent = make_agent("gaq", agent_rng)
    hyper = replace(TrainHyper(), steps=STEPS)
    trainer = Trainer(env, agent, hyper, agent_rng, replay_rng)
    for t in range(STEPS):
        res = trainer.step(t)
        if t % 200 == 0:
            print(f"  step {t:4d}  eps {res.epsilon:.3f}  "
                  f"reward {res.mean_reward:6.3f}")
    return agent


def eval_mean(agent, sim: SimConfig, k: int) -> float:
    env_rng, _, _ = rng_streams(seed=123)
    env = NetworkEnv(replace(sim, neighbors=k), env_rng)
    return float(evaluate(env, agent, EPISODES).mean())


def main():
    sim = SimConfig(seed=0, n_rings=1, users=200, neighbors=5)
    print(f"training attention agent on k={sim.neighbors} for {STEPS} steps:")
    agent = trained_agent(sim)

    print(f"\ngreedy evaluation, {EPISODES} episodes each:")
    for k in (5, 10, 20):
        print(f"  k={k:2d}: mean reward {eval_mean(agent, sim, k):6.3f} dB")

    env_rng, _, _ = rng_streams(seed=123)
    env = NetworkEnv(sim, env_rng)
    rand = random_policy_rewards(env, np.random.default_rng(99), EPISODES)
    print(f"  random tilts on the same episodes: {rand.mean():6.3f} dB")


if __name__ == "__main__":
    main()
