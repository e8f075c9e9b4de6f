"""Factored categorical policies.

Every dimension of every agent is an independent softmax over its own block
of a single flat logit vector, laid out exactly like the one-hot encoding of
:mod:`ma2ml.space`. That shared layout means the score function of a sampled
action is ``onehot(action) - probs`` with no reshaping.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Sequence

import numpy as np

from .space import JointSpace, encode_batch


def segment_logsumexp(x: np.ndarray, space: JointSpace) -> np.ndarray:
    """Per-dimension log-normaliser of the last axis of ``x``."""
    off = space.offsets
    mx = np.maximum.reduceat(x, off, axis=-1)
    rep = np.repeat(mx, space.cardinalities, axis=-1)
    return mx + np.log(np.add.reduceat(np.exp(x - rep), off, axis=-1))


@dataclass(frozen=True, eq=False)
class Policy:
    """Immutable snapshot of logits for all agents (one flat vector)."""

    space: JointSpace
    logits: np.ndarray

    def __post_init__(self):
        logits = np.array(self.logits, dtype=float)
        if logits.shape != (self.space.width,):
            raise ValueError(f"logits must have shape ({self.space.width},), got {logits.shape}")
        if not np.all(np.isfinite(logits)):
            raise ValueError("logits must be finite")
        logits.setflags(write=False)
        object.__setattr__(self, "logits", logits)

    @classmethod
    def uniform(cls, space: JointSpace) -> "Policy":
        return cls(space, np.zeros(space.width))

    def with_logits(self, logits: np.ndarray) -> "Policy":
        return Policy(self.space, logits)

    # -- distributions -----------------------------------------------------
    @cached_property
    def _log_probs(self) -> np.ndarray:
        lse = segment_logsumexp(self.logits, self.space)
        out = self.logits - np.repeat(lse, self.space.cardinalities)
        out.setflags(write=False)
        return out

    @cached_property
    def _probs(self) -> np.ndarray:
        out = np.exp(self._log_probs)
        out.setflags(write=False)
        return out

    def log_probs(self) -> np.ndarray:
        return self._log_probs

    def probs(self) -> np.ndarray:
        return self._probs

    @cached_property
    def _cdfs(self) -> list[np.ndarray]:
        return [np.cumsum(p) for p in self.dim_probs()]

    def dim_probs(self) -> list[np.ndarray]:
        return np.split(self._probs, self.space.offsets[1:])

    def agent_dist(self, i: int) -> np.ndarray:
        """Probability of every sub-action of agent ``i``, row-major over its dimensions."""
        sl = self.space.agent_slices[i]
        out = np.ones(())
        for p in self.dim_probs()[sl]:
            out = np.multiply.outer(out, p)
        return out.ravel()

    def agent_log_dist(self, i: int) -> np.ndarray:
        sl = self.space.agent_slices[i]
        lp = np.split(self.log_probs(), self.space.offsets[1:])[sl]
        out = np.zeros(())
        for v in lp:
            out = np.add.outer(out, v)
        return out.ravel()

    # -- per-action quantities ---------------------------------------------
    def dim_log_probs(self, actions: np.ndarray) -> np.ndarray:
        """(B, n_dims) log-probability of each chosen index."""
        actions = np.atleast_2d(np.asarray(actions, dtype=np.int64))
        return self.log_probs()[self.space.offsets[None, :] + actions]

    def agent_log_probs(self, actions: np.ndarray) -> np.ndarray:
        """(B, n_agents) log-probability of each agent's sub-action."""
        lp = self.dim_log_probs(actions)
        return np.stack([lp[:, s].sum(axis=1) for s in self.space.agent_slices], axis=1)

    def log_prob(self, action: Sequence[int], agent: int | None = None) -> float:
        action = self.space.validate_action(action)
        lp = self.dim_log_probs(np.array([action]))[0]
        if agent is not None:
            lp = lp[self.space.agent_slices[agent]]
        return float(lp.sum())

    def grad_log_prob(self, action: Sequence[int], agent: int | None = None) -> np.ndarray:
        """Gradient of ``log_prob`` w.r.t. the flat logits: ``onehot - probs`` per dimension.

        With ``agent`` given, entries outside that agent's block are zero.
        """
        action = self.space.validate_action(action)
        g = encode_batch(self.space, np.array([action]))[0] - self.probs()
        if agent is not None:
            g = g * self.agent_mask(agent)
        return g

    def agent_mask(self, i: int) -> np.ndarray:
        return np.repeat(self.space.dim_agent == i, self.space.cardinalities).astype(float)

    # -- summaries ---------------------------------------------------------
    def entropy(self) -> np.ndarray:
        """Shannon entropy per agent (nats)."""
        lp = self.log_probs()
        h = -np.add.reduceat(np.exp(lp) * lp, self.space.offsets)
        return np.bincount(self.space.dim_agent, weights=h, minlength=self.space.n_agents)

    def kl(self, other: "Policy") -> np.ndarray:
        """KL(self || other) per agent."""
        if other.space.width != self.space.width or other.space.cardinalities.tolist() != self.space.cardinalities.tolist():
            raise ValueError("policy shapes differ")
        lp, lq = self.log_probs(), other.log_probs()
        d = np.add.reduceat(np.exp(lp) * (lp - lq), self.space.offsets)
        d = np.maximum(d, 0.0)
        return np.bincount(self.space.dim_agent, weights=d, minlength=self.space.n_agents)

    # -- sampling ----------------------------------------------------------
    def sample_dims(self, rng: np.random.Generator, n: int, dims: range) -> np.ndarray:
        """Draw ``n`` independent values for the listed dimensions only."""
        u = rng.random((n, len(dims)))
        out = np.empty((n, len(dims)), dtype=np.int64)
        cdfs = self._cdfs
        for k, d in enumerate(dims):
            cdf = cdfs[d]
            out[:, k] = np.minimum(np.searchsorted(cdf, u[:, k] * cdf[-1], side="right"), len(cdf) - 1)
        return out

    def sample(self, rng: np.random.Generator, n: int | None = None):
        """Draw joint actions. Returns ``(action, logprob)`` or, with ``n``, arrays of both."""
        m = 1 if n is None else n
        actions = self.sample_dims(rng, m, range(self.space.n_dims))
        logp = self.dim_log_probs(actions).sum(axis=1)
        if n is None:
            return tuple(int(a) for a in actions[0]), float(logp[0])
        return actions, logp

    def greedy(self) -> tuple[int, ...]:
        return tuple(int(np.argmax(p)) for p in self.dim_probs())

    # -- serialisation -----------------------------------------------------
    def to_list(self) -> list[float]:
        return [float(v) for v in self.logits]


def init_uniform(space: JointSpace) -> Policy:
    return Policy.uniform(space)


def soft_update(target: Policy, params: Policy, tau: float) -> Policy:
    """Blend target logits toward ``params``: ``(1 - tau) * target + tau * params``."""
    if not 0.0 < tau <= 1.0:
        raise ValueError(f"tau must lie in (0, 1], got {tau}")
    if target.logits.shape != params.logits.shape:
        raise ValueError("policy shapes differ")
    if tau == 1.0:
        return params.with_logits(params.logits.copy())
    return target.with_logits((1.0 - tau) * target.logits + tau * params.logits)
