"""The three agent kinds and the shared training loop.

All agents control every cell with one parameter set and one replay buffer.
They differ only in how a cell's state is represented:

* graph agent: the cell's closed-neighborhood feature rows plus the adjacency
  induced on them, embedded by the attention stack; acting and replay run the
  same embedding, so the value network always sees the distribution it was
  trained on;
* flat agents: the cell's own 8 features, optionally concatenated with its
  k nearest neighbors' features (the plain baseline is the k=0 case).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import gat, rl
from .autodiff import Tape, Var
from .graph import CellGraph
from .rl import ReplayBuffer, Transition
from .simulator import N_ACTIONS, N_FEATURES, NetworkEnv, SimConfig

CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------- graph agent

@dataclass(frozen=True)
class NeighborhoodState:
    """What one cell's transition stores: the feature rows of its closed
    neighborhood (center first) and the adjacency induced on those rows,
    as local closed neighborhoods (self first)."""

    rows: np.ndarray
    nbhds: tuple


def induced_neighborhoods(graph: CellGraph, i: int) -> tuple:
    """Local closed neighborhoods of the subgraph induced on N+(i).

    Row r of the stored state is member r of i's closed neighborhood; its
    local neighborhood keeps only members that are also stored, so a replayed
    embedding aggregates the same edges the full graph has between them.
    """
    members = graph.closed_neighborhood(i)
    local = {int(g): r for r, g in enumerate(members)}
    out = []
    for r, g in enumerate(members):
        inside = sorted(local[int(j)] for j in graph.closed_neighborhood(int(g))
                        if int(j) in local and local[int(j)] != r)
        out.append(np.array([r] + inside, dtype=np.intp))
    return tuple(out)


def union_subgraphs(states):
    """Batch stored neighborhoods as one block-diagonal graph.

    Offsets each state's local structure so a single stack forward embeds the
    whole batch. Returns (neighborhood list, center row indices).
    """
    nbhds, centers = [], []
    off = 0
    for st in states:
        centers.append(off)
        nbhds.extend(off + nb for nb in st.nbhds)
        off += st.rows.shape[0]
    return nbhds, centers


class GaqAgent:
    """Attention-embedded Q-learning over the cell graph."""

    kind = "gaq"

    def __init__(self, rng: np.random.Generator, d_in: int = N_FEATURES,
                 d_hidden: int = 16, n_layers: int = 2, n_heads: int = 6,
                 hidden=(32, 32), n_actions: int = 16):
        self.stack = gat.init_gat_stack(rng, d_in=d_in, d_hidden=d_hidden,
                                        n_layers=n_layers, n_heads=n_heads)
        self.qnet = rl.init_qnet(rng, d_in=d_hidden, n_actions=n_actions,
                                 hidden=hidden)
        self.target_stack = gat.clone_stack(self.stack)
        self.target_qnet = rl.clone_mlp(self.qnet)
        self._structure_graph = None
        self._structures = None

    @property
    def n_actions(self) -> int:
        return self.qnet.d_out

    def params(self) -> list[Var]:
        return self.stack.params() + self.qnet.params()

    def sync_target(self) -> None:
        gat.copy_stack_values(self.stack, self.target_stack)
        rl.sync_params(self.qnet.params(), self.target_qnet.params())

    def _local_structures(self, graph: CellGraph):
        # graphs are immutable, so the induced structure is computed once per
        # graph instance and reused for both the state and next-state calls
        if self._structure_graph is not graph:
            self._structures = [induced_neighborhoods(graph, i)
                                for i in range(graph.n_nodes)]
            self._structure_graph = graph
        return self._structures

    def cell_states(self, graph: CellGraph, feats: np.ndarray):
        structs = self._local_structures(graph)
        # fancy indexing copies, so stored states outlive the snapshot
        return [NeighborhoodState(feats[nb], structs[i])
                for i, nb in enumerate(graph.closed_neighborhoods)]

    def act_values(self, graph: CellGraph, feats: np.ndarray) -> np.ndarray:
        """Action values for every cell, embedded on the full cell graph.

        Acting sees the whole graph (two layers reach two hops), while replay
        can only rebuild each transition's stored neighborhood. The wider view
        steers behavior; updates train on the narrower one. Measured on the
        desk profile, this split trains markedly more stably than forcing the
        acting path down to the stored neighborhoods.
        """
        emb = gat.stack_forward(self.stack, feats, graph.closed_neighborhoods)
        return rl.mlp_forward(self.qnet, emb).value

    def q_batch(self, states, tape=None, target=False) -> Var:
        """Action values for a batch of stored neighborhoods.

        Replay sees only the rows a transition captured, so the stack runs on
        each state's induced subgraph; the batch is embedded in one pass as a
        disjoint union.
        """
        feats = np.concatenate([st.rows for st in states], axis=0)
        nbhds, centers = union_subgraphs(states)
        stack = self.target_stack if target else self.stack
        qnet = self.target_qnet if target else self.qnet
        emb = gat.stack_forward(stack, feats, nbhds, tape=tape,
                                final_nodes=centers)
        return rl.mlp_forward(qnet, emb, tape)


# ---------------------------------------------------------------- flat agents

def flat_state(graph: CellGraph, feats: np.ndarray, i: int, k: int) -> np.ndarray:
    """Own features, then the k nearest neighbors' in ascending-id order,
    zero-padded when the cell has fewer than k neighbors."""
    parts = [feats[i]]
    if k > 0:
        nb = graph.nearest_neighbors(i, k)
        parts.extend(feats[j] for j in nb)
        missing = k - len(nb)
        if missing:
            parts.append(np.zeros(missing * feats.shape[1]))
    return np.concatenate(parts)


class FlatAgent:
    """MLP Q-learning on per-cell feature vectors (neighbor count k,
    with k=0 the no-neighbor baseline)."""

    def __init__(self, rng: np.random.Generator, kind: str, state_k: int,
                 d_feat: int = N_FEATURES, hidden=(32, 32), n_actions: int = 16):
        if state_k < 0:
            raise ValueError("neighbor count must be nonnegative")
        self.kind = kind
        self.state_k = state_k
        self.d_feat = d_feat
        self.qnet = rl.init_qnet(rng, d_in=d_feat * (state_k + 1),
                                 n_actions=n_actions, hidden=hidden)
        self.target_qnet = rl.clone_mlp(self.qnet)

    @property
    def n_actions(self) -> int:
        return self.qnet.d_out

    def params(self) -> list[Var]:
        return self.qnet.params()

    def sync_target(self) -> None:
        rl.sync_params(self.qnet.params(), self.target_qnet.params())

    def cell_states(self, graph: CellGraph, feats: np.ndarray):
        return [flat_state(graph, feats, i, self.state_k)
                for i in range(graph.n_nodes)]

    def act_values(self, graph: CellGraph, feats: np.ndarray) -> np.ndarray:
        x = np.stack(self.cell_states(graph, feats))
        return rl.mlp_forward(self.qnet, x).value

    def q_batch(self, states, tape=None, target=False) -> Var:
        x = np.stack(states)
        qnet = self.target_qnet if target else self.qnet
        return rl.mlp_forward(qnet, x, tape)


def make_agent(kind: str, rng: np.random.Generator, neighbor_count: int = 5,
               **model_kw):
    """Agent factory; neighbor_count feeds the concatenating baseline only."""
    if kind == "gaq":
        return GaqAgent(rng, **model_kw)
    if kind == "dqn":
        return FlatAgent(rng, "dqn", state_k=0, **model_kw)
    if kind == "ndqn":
        return FlatAgent(rng, "ndqn", state_k=neighbor_count, **model_kw)
    raise ValueError(f"unknown agent kind {kind!r}")


# ---------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainHyper:
    steps: int = 20000
    gamma: float = 0.9
    lr: float = 1e-3
    batch_size: int = 64
    warmup: int = 500
    sync_every: int = 200
    buffer_capacity: int = 10000
    priority_exponent: float = 0.6
    weight_exponent: float = 0.4
    double_q: bool = True
    eps_start: float = 1.0
    eps_end: float = 0.01


@dataclass
class StepResult:
    mean_reward: float
    loss: float | None     # None while the buffer is still warming up
    epsilon: float
    intersite_m: float
    actions: np.ndarray


class Trainer:
    """One training run: drives the environment, fills the shared buffer,
    and takes one prioritized gradient step per environment step."""

    def __init__(self, env: NetworkEnv, agent, hyper: TrainHyper,
                 agent_rng: np.random.Generator, replay_rng: np.random.Generator):
        self.env = env
        self.agent = agent
        self.hyper = hyper
        self.agent_rng = agent_rng
        self.schedule = rl.EpsilonSchedule(hyper.steps, hyper.eps_start,
                                           hyper.eps_end)
        self.buffer = ReplayBuffer(hyper.buffer_capacity, replay_rng,
                                   alpha=hyper.priority_exponent,
                                   beta=hyper.weight_exponent)
        self.opt = rl.Adam(agent.params(), lr=hyper.lr)
        self.updates = 0

    def step(self, t: int) -> StepResult:
        env, agent = self.env, self.agent
        if t % env.cfg.episode_len == 0:
            env.reset_episode()
        graph = env.graph
        feats = env.features()
        states = agent.cell_states(graph, feats)
        q = agent.act_values(graph, feats)
        eps = self.schedule.value(t)
        acts = np.array([rl.select_action(q[i], eps, self.agent_rng)
                         for i in range(env.n_cells)], dtype=np.int64)
        env.apply_actions(acts)
        rewards = env.rewards()
        feats_next = env.features()
        states_next = agent.cell_states(graph, feats_next)
        for i in range(env.n_cells):
            self.buffer.push(Transition(states[i], int(acts[i]),
                                        float(rewards[i]), states_next[i]))
        loss = self.update() if len(self.buffer) >= self.hyper.warmup else None
        return StepResult(float(rewards.mean()), loss, eps,
                          env.layout.intersite_m, acts)

    def update(self) -> float:
        """One prioritized batch, double-Q targets, joint gradient step."""
        hy = self.hyper
        idx, items, weights = self.buffer.sample(hy.batch_size)
        rewards = np.array([it.reward for it in items])
        actions = np.array([it.action for it in items], dtype=np.intp)
        next_states = [it.next_state for it in items]

        q_next_target = self.agent.q_batch(next_states, target=True).value
        q_next_online = (self.agent.q_batch(next_states).value
                         if hy.double_q else None)
        y = rl.td_targets(rewards, q_next_online, q_next_target,
                          hy.gamma, hy.double_q)

        tape = Tape()
        q = self.agent.q_batch([it.state for it in items], tape)
        loss, td = rl.weighted_td_loss(tape, q, actions, y, weights)
        self.opt.zero_grad()
        ad.backward(tape, loss)
        self.opt.step()
        self.buffer.update_priorities(idx, td)

        self.updates += 1
        if self.updates % hy.sync_every == 0:
            self.agent.sync_target()
        return float(loss.value[0, 0])


# ---------------------------------------------------------------- evaluation

def evaluate(env: NetworkEnv, agent, n_episodes: int) -> np.ndarray:
    """Greedy rollout; returns per-step cell-mean rewards, one row per episode."""
    out = np.zeros((n_episodes, env.cfg.episode_len))
    for e in range(n_episodes):
        env.reset_episode()
        for s in range(env.cfg.episode_len):
            q = agent.act_values(env.graph, env.features())
            env.apply_actions(np.argmax(q, axis=1))
            out[e, s] = float(env.rewards().mean())
    return out


def random_policy_rewards(env: NetworkEnv, rng: np.random.Generator,
                          n_episodes: int) -> np.ndarray:
    """Uniform-random tilts under the same protocol, as a sanity floor."""
    out = np.zeros((n_episodes, env.cfg.episode_len))
    for e in range(n_episodes):
        env.reset_episode()
        for s in range(env.cfg.episode_len):
            acts = rng.integers(0, N_ACTIONS, size=env.n_cells)
            env.apply_actions(acts)
            out[e, s] = float(env.rewards().mean())
    return out


# ---------------------------------------------------------------- checkpoints

def save_checkpoint(path, agent, sim_cfg: SimConfig, step: int) -> None:
    """All online parameters plus enough metadata to rebuild the agent."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "kind": agent.kind,
        "step": int(step),
        "n_actions": agent.n_actions,
        "sim": asdict(sim_cfg),
    }
    arrays = {}
    if isinstance(agent, GaqAgent):
        meta["model"] = {
            "d_in": agent.stack.d_in,
            "d_hidden": agent.stack.d_out,
            "n_layers": len(agent.stack.layers),
            "n_heads": agent.stack.layers[0].n_heads,
            "hidden": [w.value.shape[0] for w in agent.qnet.weights[:-1]],
        }
        for li, layer in enumerate(agent.stack.layers):
            for m in range(layer.n_heads):
                arrays[f"gat{li}_w{m}"] = layer.w[m].value
                arrays[f"gat{li}_att{m}"] = layer.att[m].value
    else:
        meta["model"] = {
            "state_k": agent.state_k,
            "d_feat": agent.d_feat,
            "hidden": [w.value.shape[0] for w in agent.qnet.weights[:-1]],
        }
    for i, (w, b) in enumerate(zip(agent.qnet.weights, agent.qnet.biases)):
        arrays[f"q_w{i}"] = w.value
        arrays[f"q_b{i}"] = b.value
    np.savez(path, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)


def _fill(name: str, data, var: Var) -> None:
    if name not in data:
        raise ValueError(f"checkpoint is missing array {name!r}")
    arr = data[name]
    if arr.shape != var.value.shape:
        raise ValueError(f"checkpoint array {name!r} has shape {arr.shape}, "
                         f"expected {var.value.shape}")
    np.copyto(var.value, arr)


def load_checkpoint(path):
    """Rebuild (agent, sim config, step) from a saved file.

    Any shape or metadata mismatch raises instead of silently truncating.
    """
    with np.load(path) as data:
        meta = json.loads(data["meta"].item())
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {meta.get('version')!r}")
        kind = meta["kind"]
        model = meta["model"]
        rng = np.random.default_rng(0)   # placeholder init, overwritten below
        if kind == "gaq":
            agent = GaqAgent(rng, d_in=model["d_in"], d_hidden=model["d_hidden"],
                             n_layers=model["n_layers"], n_heads=model["n_heads"],
                             hidden=tuple(model["hidden"]),
                             n_actions=meta["n_actions"])
            for li, layer in enumerate(agent.stack.layers):
                for m in range(layer.n_heads):
                    _fill(f"gat{li}_w{m}", data, layer.w[m])
                    _fill(f"gat{li}_att{m}", data, layer.att[m])
        elif kind in ("dqn", "ndqn"):
            agent = FlatAgent(rng, kind, state_k=model["state_k"],
                              d_feat=model["d_feat"],
                              hidden=tuple(model["hidden"]),
                              n_actions=meta["n_actions"])
        else:
            raise ValueError(f"unknown agent kind {kind!r} in checkpoint")
        for i, (w, b) in enumerate(zip(agent.qnet.weights, agent.qnet.biases)):
            _fill(f"q_w{i}", data, w)
            _fill(f"q_b{i}", data, b)
        agent.sync_target()
        return agent, SimConfig(**meta["sim"]), meta["step"]
