"""Q-learning machinery shared by every agent kind.

The action-value network is a small rectified MLP with a linear head over the
16 tilt actions. Training uses proportional prioritized replay, importance
weights, a periodically hard-synced target copy, and a double-Q bootstrap
(plain max available behind a flag). Nothing here knows about graphs; agents
hand in whatever state representation they embed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Var


@dataclass
class Mlp:
    weights: list[Var]   # (d_out, d_in) per layer
    biases: list[Var]    # (1, d_out) per layer

    @property
    def d_in(self) -> int:
        return self.weights[0].value.shape[1]

    @property
    def d_out(self) -> int:
        return self.weights[-1].value.shape[0]

    def params(self) -> list[Var]:
        out: list[Var] = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out


def init_mlp(rng: np.random.Generator, dims) -> Mlp:
    """Glorot-uniform weights, zero biases; dims = (in, hidden..., out)."""
    ws, bs = [], []
    for a, b in zip(dims[:-1], dims[1:]):
        ws.append(Var(ad.xavier_uniform(rng, b, a)))
        bs.append(Var(np.zeros((1, b))))
    return Mlp(ws, bs)


def init_qnet(rng: np.random.Generator, d_in: int, n_actions: int = 16,
              hidden=(32, 32)) -> Mlp:
    return init_mlp(rng, (d_in, *hidden, n_actions))


def mlp_forward(mlp: Mlp, x, tape=None) -> Var:
    """Batched forward: rectified hidden layers, linear output row per input row."""
    h = x if isinstance(x, Var) else Var(x)
    last = len(mlp.weights) - 1
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        h = ad.add_rowvec(tape, ad.matmul(tape, h, ad.transpose(tape, w)), b)
        if i != last:
            h = ad.relu(tape, h)
    return h


def clone_mlp(mlp: Mlp) -> Mlp:
    return Mlp([Var(w.value.copy()) for w in mlp.weights],
               [Var(b.value.copy()) for b in mlp.biases])


def sync_params(src: list[Var], dst: list[Var]) -> None:
    """Hard copy of every parameter tensor."""
    if len(src) != len(dst):
        raise ValueError("parameter lists differ in length")
    for a, b in zip(src, dst):
        np.copyto(b.value, a.value)


@dataclass(frozen=True)
class EpsilonSchedule:
    """Linear decay over the first half of training, constant afterwards."""

    horizon: int
    start: float = 1.0
    end: float = 0.01

    def value(self, t: int) -> float:
        half = self.horizon / 2.0
        if t >= half:
            return self.end
        return self.start + (self.end - self.start) * (t / half)


def select_action(q_row: np.ndarray, epsilon: float, rng: np.random.Generator) -> int:
    """Greedy with probability 1 - epsilon, uniform otherwise.

    Argmax ties resolve to the lowest action index. epsilon == 0 consumes no
    randomness at all, so greedy evaluation is RNG-free.
    """
    if epsilon > 0.0 and rng.random() < epsilon:
        return int(rng.integers(len(q_row)))
    return int(np.argmax(q_row))


@dataclass
class Transition:
    """One cell's experience: states are whatever the agent kind stores
    (a flat feature vector, or the closed-neighborhood feature rows)."""

    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray


class ReplayBuffer:
    """Ring buffer with proportional prioritized sampling.

    Sampling probability follows priority**alpha; importance weights are
    (N * P)**-beta normalized by the buffer-wide maximum weight. New items
    enter at the current maximum priority so everything is replayed at least
    plausibly soon. At this capacity a flat priority array beats a sum-tree.
    """

    def __init__(self, capacity: int, rng: np.random.Generator,
                 alpha: float = 0.6, beta: float = 0.4,
                 priority_floor: float = 1e-3):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self.rng = rng
        self.alpha = alpha
        self.beta = beta
        self.priority_floor = priority_floor
        self._items: list[Transition | None] = [None] * capacity
        self._priorities = np.zeros(capacity)
        self._size = 0
        self._pos = 0

    def __len__(self) -> int:
        return self._size

    def push(self, item: Transition) -> None:
        p = self._priorities[:self._size].max() if self._size else 1.0
        self._items[self._pos] = item
        self._priorities[self._pos] = p
        self._pos = (self._pos + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def sample(self, batch: int):
        """Draw with replacement; returns (indices, transitions, weights)."""
        if self._size == 0:
            raise RuntimeError("sampling from an empty replay buffer")
        scaled = self._priorities[:self._size] ** self.alpha
        probs = scaled / scaled.sum()
        idx = self.rng.choice(self._size, size=batch, replace=True, p=probs)
        weights = (self._size * probs[idx]) ** (-self.beta)
        weights /= (self._size * probs.min()) ** (-self.beta)
        return idx, [self._items[i] for i in idx], weights

    def update_priorities(self, idx: np.ndarray, td_abs: np.ndarray) -> None:
        self._priorities[idx] = np.abs(td_abs) + self.priority_floor


def td_targets(rewards: np.ndarray, next_q_online: np.ndarray | None,
               next_q_target: np.ndarray, gamma: float, double: bool) -> np.ndarray:
    """Bootstrap targets, plain numpy so no gradient can flow through them.

    double selects the action with the online network and values it with the
    target network; otherwise the target network's own max is used.
    """
    if double:
        if next_q_online is None:
            raise ValueError("double-Q targets need online next-state values")
        best = np.argmax(next_q_online, axis=1)
        bootstrap = next_q_target[np.arange(len(best)), best]
    else:
        bootstrap = next_q_target.max(axis=1)
    return rewards + gamma * bootstrap


def weighted_td_loss(tape, q_all: Var, actions: np.ndarray, targets: np.ndarray,
                     weights: np.ndarray):
    """Mean over the batch of weight * (target - Q(s, a))^2.

    Returns the taped scalar loss and the raw per-sample TD errors (for
    priority updates). Targets and weights are constants by construction.
    """
    b, n_actions = q_all.value.shape
    mask = np.zeros((b, n_actions))
    mask[np.arange(b), np.asarray(actions, dtype=np.intp)] = 1.0
    q_sel = ad.row_sums(tape, ad.cmul(tape, q_all, mask))          # (B, 1)
    diff = ad.sub(tape, Var(np.asarray(targets, dtype=np.float64).reshape(-1, 1)),
                  q_sel)
    loss = ad.scale(tape, ad.sum_all(
        tape, ad.cmul(tape, ad.square(tape, diff),
                      np.asarray(weights, dtype=np.float64).reshape(-1, 1))),
        1.0 / b)
    return loss, diff.value[:, 0].copy()


class Adam:
    """Per-parameter moment-tracked gradient descent (decay 0.9 / 0.999)."""

    def __init__(self, params: list[Var], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self._m = [np.zeros_like(p.value) for p in self.params]
        self._v = [np.zeros_like(p.value) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for p, m, v in zip(self.params, self._m, self._v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.value -= self.lr * (m / b1t) / (np.sqrt(v / b2t) + self.eps)
