"""Replay buffer and centralized critics (exact table and one-hidden-layer regressor)."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .space import JointAction, JointSpace, encode_batch

STATE = 0  # the single constant state token


class CriticDiverged(FloatingPointError):
    pass


class UnknownCell(KeyError):
    pass


@dataclass(frozen=True)
class Experience:
    action: JointAction
    reward: float
    state: int = STATE

    def __post_init__(self):
        if not math.isfinite(self.reward):
            raise ValueError(f"reward must be finite, got {self.reward}")


def batch_arrays(batch: Sequence[Experience]) -> tuple[np.ndarray, np.ndarray]:
    actions = np.array([e.action for e in batch], dtype=np.int64)
    rewards = np.array([e.reward for e in batch], dtype=float)
    return actions, rewards


class ReplayBuffer:
    """FIFO experience store; ``capacity=None`` keeps everything.

    ``position`` counts every push ever made, so callers can restrict sampling
    to entries pushed after a known point (``since``). ``last_drawn`` records
    the absolute positions returned by the most recent draw.
    """

    def __init__(self, capacity: int | None = None):
        if capacity is not None and capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = capacity
        self._actions: np.ndarray | None = None  # grows by doubling
        self._rewards = np.empty(0)
        self._n = 0
        self._first = 0  # absolute position of row 0
        self.last_drawn: np.ndarray = np.empty(0, dtype=np.int64)

    def __len__(self):
        return self._n

    @property
    def position(self) -> int:
        return self._first + self._n

    @property
    def entries(self) -> list[Experience]:
        return [Experience(tuple(int(v) for v in a), float(r))
                for a, r in zip(self._actions[: self._n], self._rewards[: self._n])] if self._n else []

    def push(self, exp: Experience) -> None:
        row = np.asarray(exp.action, dtype=np.int64)
        if self._actions is None:
            self._actions = np.empty((16, len(row)), dtype=np.int64)
            self._rewards = np.empty(16)
        if self._n == len(self._rewards):
            self._actions = np.concatenate([self._actions, np.empty_like(self._actions)])
            self._rewards = np.concatenate([self._rewards, np.empty_like(self._rewards)])
        self._actions[self._n] = row
        self._rewards[self._n] = exp.reward
        self._n += 1
        if self.capacity is not None and self._n > self.capacity:
            drop = self._n - self.capacity
            self._actions[: self.capacity] = self._actions[drop: self._n].copy()
            self._rewards[: self.capacity] = self._rewards[drop: self._n].copy()
            self._n = self.capacity
            self._first += drop

    def _draw(self, batch_size: int, rng: np.random.Generator, since: int | None) -> np.ndarray:
        lo = 0 if since is None else max(since - self._first, 0)
        n = self._n - lo
        if n < 1:
            raise IndexError("cannot sample from an empty buffer")
        idx = lo + rng.integers(0, n, size=batch_size)
        self.last_drawn = idx + self._first
        return idx

    def sample(self, batch_size: int, rng: np.random.Generator, since: int | None = None) -> list[Experience]:
        """Uniform draws with replacement, optionally only from positions >= ``since``."""
        idx = self._draw(batch_size, rng, since)
        return [Experience(tuple(int(v) for v in self._actions[i]), float(self._rewards[i])) for i in idx]

    def sample_arrays(self, batch_size: int, rng: np.random.Generator,
                      since: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Same draw as :meth:`sample`, returned as ``(actions, rewards)`` arrays."""
        idx = self._draw(batch_size, rng, since)
        return self._actions[idx], self._rewards[idx]

    def state_dict(self) -> dict:
        return {
            "capacity": self.capacity,
            "first": self._first,
            "rows": [[list(e.action), e.reward] for e in self.entries],
        }

    @classmethod
    def from_state(cls, state: dict) -> "ReplayBuffer":
        buf = cls(state["capacity"])
        for a, r in state["rows"]:
            buf.push(Experience(tuple(a), float(r)))
        buf._first = state["first"]
        return buf


class TabularQ:
    """Dense running-mean table over every joint action."""

    MAX_CELLS = 10**6

    def __init__(self, space: JointSpace):
        if space.n_joint > self.MAX_CELLS:
            raise ValueError(f"tabular critic needs <= {self.MAX_CELLS} joint actions, space has {space.n_joint}")
        self.space = space
        self._shape = tuple(int(c) for c in space.cardinalities)
        self.mean = np.zeros(space.n_joint)
        self.count = np.zeros(space.n_joint, dtype=np.int64)

    def cell(self, actions: np.ndarray) -> np.ndarray:
        actions = np.atleast_2d(np.asarray(actions, dtype=np.int64))
        return np.ravel_multi_index(tuple(actions.T), self._shape)

    def known(self, action: Sequence[int]) -> bool:
        return bool(self.count[self.cell(action)[0]] > 0)

    def q_eval(self, action: Sequence[int]) -> float:
        c = self.cell(self.space.validate_action(action))[0]
        if self.count[c] == 0:
            raise UnknownCell(tuple(action))
        return float(self.mean[c])

    def predict(self, actions: np.ndarray, default: float | None = None) -> np.ndarray:
        """Batched lookup. Unvisited cells take ``default`` (or the mean of visited cells)."""
        c = self.cell(actions)
        out = self.mean[c].copy()
        unseen = self.count[c] == 0
        if unseen.any():
            if default is None:
                seen = self.count > 0
                default = float(self.mean[seen].mean()) if seen.any() else 0.0
            out[unseen] = default
        return out

    def counterfactual(self, actions: np.ndarray, agent: int, subs: np.ndarray) -> np.ndarray:
        """(B, K) values with agent ``agent``'s block replaced by each row of ``subs``."""
        actions = np.atleast_2d(np.asarray(actions, dtype=np.int64))
        B, K = len(actions), len(subs)
        cf = np.repeat(actions[:, None, :], K, axis=1)
        cf[:, :, self.space.agent_slices[agent]] = subs[None, :, :]
        return self.predict(cf.reshape(B * K, -1)).reshape(B, K)

    def fit(self, batch: Iterable[Experience]) -> None:
        for e in batch:
            c = self.cell(e.action)[0]
            self.count[c] += 1
            self.mean[c] += (e.reward - self.mean[c]) / self.count[c]

    def fill(self, table: np.ndarray) -> "TabularQ":
        """Set every cell from an exact reward array shaped like the joint space."""
        self.mean = np.asarray(table, dtype=float).reshape(-1).copy()
        self.count = np.ones(self.space.n_joint, dtype=np.int64)
        return self

    def state_dict(self) -> dict:
        seen = np.flatnonzero(self.count)
        return {"cells": seen.tolist(), "mean": self.mean[seen].tolist(), "count": self.count[seen].tolist()}

    def load_state(self, state: dict) -> None:
        self.mean[:] = 0.0
        self.count[:] = 0
        self.mean[state["cells"]] = state["mean"]
        self.count[state["cells"]] = state["count"]


class NeuralQ:
    """``Q(A) = w2 . tanh(onehot(A) W1 + b1) + b2``, trained by full-batch gradient descent.

    All weights live in one flat vector ``theta``; ``W1``, ``b1`` and ``w2`` are views into it.
    """

    def __init__(self, space: JointSpace, hidden: int = 64, rng: np.random.Generator | None = None):
        self.space = space
        self.hidden = hidden
        w = space.width
        theta = np.zeros(w * hidden + 2 * hidden + 1)
        if rng is not None:
            a1, a2 = 1.0 / math.sqrt(w), 1.0 / math.sqrt(hidden)
            theta[: w * hidden + hidden] = rng.uniform(-a1, a1, size=w * hidden + hidden)
            theta[w * hidden + hidden:] = rng.uniform(-a2, a2, size=hidden + 1)
        self.set_params(theta)

    @classmethod
    def zeros(cls, space: JointSpace, hidden: int = 64) -> "NeuralQ":
        return cls(space, hidden, rng=None)

    def get_params(self) -> np.ndarray:
        return self.theta.copy()

    def set_params(self, theta: np.ndarray) -> None:
        w, h = self.space.width, self.hidden
        theta = np.array(theta, dtype=float)
        if theta.shape != (w * h + 2 * h + 1,):
            raise ValueError(f"expected {w * h + 2 * h + 1} parameters, got {theta.shape}")
        self.theta = theta
        k = w * h
        self.W1 = theta[:k].reshape(w, h)
        self.b1 = theta[k:k + h]
        self.w2 = theta[k + h:k + 2 * h]

    @property
    def b2(self) -> float:
        return float(self.theta[-1])

    def _hidden(self, x: np.ndarray) -> np.ndarray:
        return np.tanh(x @ self.W1 + self.b1)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self._hidden(x) @ self.w2 + self.theta[-1]

    def predict(self, actions: np.ndarray, default: float | None = None) -> np.ndarray:
        actions = np.atleast_2d(np.asarray(actions, dtype=np.int64))
        # one-hot rows times W1 is a sum of selected rows
        pre = self.W1[self.space.offsets + actions].sum(axis=-2) + self.b1
        return np.tanh(pre) @ self.w2 + self.theta[-1]

    def q_eval(self, action: Sequence[int]) -> float:
        return float(self.predict(np.array([self.space.validate_action(action)]))[0])

    def counterfactual(self, actions: np.ndarray, agent: int, subs: np.ndarray) -> np.ndarray:
        """(B, K) values with agent ``agent``'s block replaced by each row of ``subs``.

        Swaps the agent's share of the hidden pre-activation instead of re-encoding B*K rows.
        """
        actions = np.atleast_2d(np.asarray(actions, dtype=np.int64))
        off = self.space.offsets[self.space.agent_slices[agent]]
        pre = self.W1[self.space.offsets + actions].sum(axis=1) + self.b1
        own = self.W1[off + actions[:, self.space.agent_slices[agent]]].sum(axis=1)
        alt = self.W1[off + subs].sum(axis=1)
        return np.tanh((pre - own)[:, None, :] + alt[None, :, :]) @ self.w2 + self.theta[-1]

    def loss_and_grad(self, x: np.ndarray, r: np.ndarray) -> tuple[float, np.ndarray]:
        """Mean squared error and its gradient w.r.t. :meth:`get_params`."""
        h = self._hidden(x)
        err = h @ self.w2 + self.theta[-1] - r
        loss = float(np.mean(err**2))
        dq = 2.0 * err / len(r)
        dpre = np.outer(dq, self.w2) * (1.0 - h**2)
        return loss, np.concatenate([(x.T @ dpre).ravel(), dpre.sum(axis=0), h.T @ dq, [dq.sum()]])

    def update(self, actions: np.ndarray, rewards: np.ndarray, lr: float, opt=None) -> float:
        """One gradient-descent step on the batch; returns the pre-step loss.

        ``opt`` (an object with ``direction(grad)``) replaces the plain ``lr * grad`` step.
        """
        x = encode_batch(self.space, actions)
        with np.errstate(over="ignore", invalid="ignore"):
            loss, grad = self.loss_and_grad(x, np.asarray(rewards, dtype=float))
        if not (math.isfinite(loss) and np.all(np.isfinite(grad))):
            raise CriticDiverged(f"non-finite critic loss {loss}; reduce the critic learning rate")
        self.theta -= lr * grad if opt is None else opt.direction(grad)
        return loss

    def state_dict(self) -> dict:
        return {"hidden": self.hidden, "params": self.theta.tolist()}

    def load_state(self, state: dict) -> None:
        self.hidden = state["hidden"]
        self.set_params(np.array(state["params"]))


def q_eval(q, action: Sequence[int]) -> float:
    return q.q_eval(action)


def q_update(q: NeuralQ, batch: Sequence[Experience], lr: float) -> float:
    if not batch:
        raise ValueError("empty batch")
    actions, rewards = batch_arrays(batch)
    return q.update(actions, rewards, lr)


def q_fit_tabular(q: TabularQ, batch: Iterable[Experience]) -> None:
    q.fit(batch)
