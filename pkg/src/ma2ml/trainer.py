"""Search loop: sample pipelines, score them, learn a critic, update every agent.

Three estimators share the loop:

* ``ma2ml``    off-policy actor-critic: replay buffer, centralized critic,
               counterfactual baseline, KL pull toward slow target policies.
* ``onpolicy`` the same estimator, but mini-batches are drawn only from the
               pipelines evaluated in the current iteration.
* ``lite``     independent REINFORCE per agent with a shared moving-average
               baseline; no critic, no replay.
"""
from __future__ import annotations

import logging
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable, Sequence

import numpy as np

from .critic import CriticDiverged, Experience, NeuralQ, ReplayBuffer, TabularQ
from .optim import make_optimizer
from .oracle import MultiObjectiveSpec, Oracle, OracleResult, scalar_reward
from .policy import Policy, soft_update
from .space import JointAction, JointSpace, decode_action

log = logging.getLogger(__name__)

EXACT = "exact"
AUTO = "auto"  # EXACT when every agent is enumerable, else one Monte Carlo draw
VARIANTS = ("ma2ml", "lite", "onpolicy")
MAX_EXACT_ACTIONS = 4096


class SearchAborted(RuntimeError):
    pass


class PolicyStepError(FloatingPointError):
    pass


@dataclass
class Hyperparams:
    lam: float = 0.2
    lr_policy: float = 0.0004
    lr_critic: float = 0.005
    tau: float = 0.004
    batch_size: int = 24
    minibatch_size: int = 64
    baseline_samples: int | str = 1
    updates_per_iter: int = 1
    lite_steps: int = 1
    max_iter: int = 83
    topk: int = 20
    seed: int = 0
    critic: str = "neural"
    hidden: int = 64
    ema_decay: float = 0.95
    buffer_capacity: int | None = None
    optimizer: str = "sgd"
    workers: int = 1

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if not (self.lr_policy > 0 and self.lr_critic > 0):
            raise ValueError("learning rates must be positive")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if min(self.batch_size, self.minibatch_size, self.updates_per_iter, self.lite_steps) < 1:
            raise ValueError("batch sizes, updates_per_iter and lite_steps must be >= 1")
        if self.baseline_samples not in (EXACT, AUTO) and not (isinstance(self.baseline_samples, int) and self.baseline_samples >= 1):
            raise ValueError("baseline_samples must be a positive integer, 'exact' or 'auto'")
        if self.max_iter < 0 or self.topk < 1:
            raise ValueError("max_iter must be >= 0 and topk >= 1")
        if self.critic not in ("neural", "tabular"):
            raise ValueError("critic must be 'neural' or 'tabular'")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError("optimizer must be 'sgd' or 'adam'")
        if not 0 < self.ema_decay < 1:
            raise ValueError("ema_decay must lie in (0, 1)")

    @classmethod
    def from_dict(cls, doc: dict) -> "Hyperparams":
        names = {f.name for f in fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown hyper-parameters: {sorted(unknown)}")
        doc = dict(doc)
        if isinstance(doc.get("baseline_samples"), str):
            doc["baseline_samples"] = doc["baseline_samples"].lower()
        return cls(**doc)


def resolve_baseline_mode(space: JointSpace, samples):
    if samples == AUTO:
        return EXACT if max(a.n_actions for a in space.agents) <= MAX_EXACT_ACTIONS else 1
    if samples == EXACT:
        for i, a in enumerate(space.agents):
            if a.n_actions > MAX_EXACT_ACTIONS:
                raise ValueError(f"exact baseline needs <= {MAX_EXACT_ACTIONS} actions for agent {i}, has {a.n_actions}")
    return samples


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named purpose, derived from the root seed."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(zlib.crc32(name.encode()),)))


# -- moving-average baseline -----------------------------------------------

@dataclass
class EmaBaseline:
    decay: float = 0.95
    value: float = 0.0
    initialized: bool = False

    def observe(self, reward: float) -> float:
        if not self.initialized:
            self.value, self.initialized = float(reward), True
        else:
            self.value = self.decay * self.value + (1.0 - self.decay) * float(reward)
        return self.value


# -- counterfactual machinery ----------------------------------------------

def _predict(q, actions: np.ndarray) -> np.ndarray:
    return q.predict(actions)


_ACTION_TABLES: dict = {}


def _agent_action_table(space: JointSpace, i: int) -> np.ndarray:
    key = (space, i)
    if key not in _ACTION_TABLES:
        table = space.agent_actions(i)
        table.setflags(write=False)
        _ACTION_TABLES[key] = table
    return _ACTION_TABLES[key]


def _agent_subactions(policy: Policy, i: int, rng, mode) -> tuple[np.ndarray | None, int]:
    if mode == EXACT:
        n = policy.space.agents[i].n_actions
        if n > MAX_EXACT_ACTIONS:
            raise ValueError(f"exact baseline needs <= {MAX_EXACT_ACTIONS} actions for agent {i}, has {n}")
        return _agent_action_table(policy.space, i), n
    return None, int(mode)


def _counterfactual_terms(q, policy: Policy, target: Policy, actions: np.ndarray, i: int, lam: float, mode, rng):
    """Per-row baseline ``E_{a~pi_i}[Q(a, A_-i) - lam * log(pi_i(a)/rho_i(a))]``."""
    space = policy.space
    sl = space.agent_slices[i]
    actions = np.atleast_2d(np.asarray(actions, dtype=np.int64))
    B = len(actions)
    if mode == EXACT:
        subs, K = _agent_subactions(policy, i, rng, mode)
        weights = policy.agent_dist(i)
        ratio = policy.agent_log_dist(i) - target.agent_log_dist(i)
        qv = q.counterfactual(actions, i, subs)
        return (qv - lam * ratio[None, :]) @ weights
    M = int(mode)
    cf = np.repeat(actions, M, axis=0)
    cf[:, sl] = policy.sample_dims(rng, B * M, range(sl.start, sl.stop))
    qv = _predict(q, cf)
    ratio = policy.agent_log_probs(cf)[:, i] - target.agent_log_probs(cf)[:, i]
    return (qv - lam * ratio).reshape(B, M).mean(axis=1)


def counterfactual_baseline(q, policy: Policy, target: Policy, action: Sequence[int], i: int,
                            lam: float = 0.0, mode=EXACT, rng: np.random.Generator | None = None) -> float:
    """Agent ``i``'s counterfactual baseline at ``action``; other agents stay fixed.

    ``mode`` is ``"exact"`` (enumerate agent ``i``'s actions) or a sample count M.
    """
    action = policy.space.validate_action(action)
    if mode != EXACT and rng is None:
        raise ValueError("Monte Carlo baseline needs an rng")
    return float(_counterfactual_terms(q, policy, target, np.array([action]), i, lam, mode, rng)[0])


def advantages(q, policy: Policy, target: Policy, actions: np.ndarray, lam: float, mode=EXACT,
               rng: np.random.Generator | None = None, agents: Sequence[int] | None = None) -> np.ndarray:
    """(B, n_agents) advantages ``Q(A) - lam * log(pi_i/rho_i)(A_i) - baseline_i(A_-i)``."""
    actions = np.atleast_2d(np.asarray(actions, dtype=np.int64))
    n = policy.space.n_agents
    agents = range(n) if agents is None else agents
    qa = _predict(q, actions)
    ratio = policy.agent_log_probs(actions) - target.agent_log_probs(actions)
    out = np.zeros((len(actions), n))
    base = {i: _counterfactual_terms(q, policy, target, actions, i, lam, mode, rng) for i in agents}
    for i in agents:
        out[:, i] = qa - lam * ratio[:, i] - base[i]
    return out


def advantage(q, policy: Policy, target: Policy, action: Sequence[int], i: int, lam: float = 0.0,
              mode=EXACT, rng: np.random.Generator | None = None) -> float:
    action = policy.space.validate_action(action)
    return float(advantages(q, policy, target, np.array([action]), lam, mode, rng, agents=[i])[0, i])


def score_gradient(policy: Policy, actions: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Mean over rows of ``grad log pi_i(A_i) * weights[:, i]``, all agents at once.

    ``weights`` is (B, n_agents); each logit block is scaled by its owner's weight.
    """
    from .space import encode_batch

    space = policy.space
    onehot = encode_batch(space, actions)
    per_col = np.asarray(weights)[:, np.repeat(space.dim_agent, space.cardinalities)]
    return ((onehot - policy.probs()[None, :]) * per_col).mean(axis=0)


def policy_gradient(policy: Policy, target: Policy, actions: np.ndarray, q, lam: float, mode=EXACT,
                    rng: np.random.Generator | None = None, agents: Sequence[int] | None = None) -> np.ndarray:
    """Mini-batch estimate of every agent's regularised policy gradient (flat logit layout)."""
    actions = np.atleast_2d(np.asarray(actions, dtype=np.int64))
    if len(actions) == 0:
        raise ValueError("empty mini-batch")
    adv = advantages(q, policy, target, actions, lam, mode, rng, agents)
    if agents is not None:
        keep = np.zeros(policy.space.n_agents, dtype=bool)
        keep[list(agents)] = True
        adv[:, ~keep] = 0.0
    grad = score_gradient(policy, actions, adv)
    if not np.all(np.isfinite(grad)):
        raise PolicyStepError("non-finite policy gradient")
    return grad


def policy_update(policy: Policy, target: Policy, actions: np.ndarray, q, lam: float, lr: float,
                  mode=EXACT, rng: np.random.Generator | None = None, agents: Sequence[int] | None = None) -> Policy:
    """One plain gradient-ascent step on every agent (or the listed ones)."""
    grad = policy_gradient(policy, target, actions, q, lam, mode, rng, agents)
    return policy.with_logits(policy.logits + lr * grad)


def lite_gradient(policy: Policy, actions: np.ndarray, rewards: np.ndarray, baseline: float) -> np.ndarray:
    centred = np.repeat((np.asarray(rewards, dtype=float) - baseline)[:, None], policy.space.n_agents, axis=1)
    grad = score_gradient(policy, actions, centred)
    if not np.all(np.isfinite(grad)):
        raise PolicyStepError("non-finite policy gradient")
    return grad


def lite_update(policy: Policy, actions: np.ndarray, rewards: np.ndarray, ema: EmaBaseline, lr: float,
                steps: int = 1, opt=None) -> Policy:
    """REINFORCE with a shared moving-average baseline, then fold the batch mean into it.

    Before the first observation the baseline is seeded with the batch mean.
    """
    actions = np.atleast_2d(np.asarray(actions, dtype=np.int64))
    rewards = np.asarray(rewards, dtype=float)
    if len(actions) == 0:
        raise ValueError("empty batch")
    if not ema.initialized:
        ema.observe(float(rewards.mean()))
    for _ in range(steps):
        grad = lite_gradient(policy, actions, rewards, ema.value)
        step = lr * grad if opt is None else opt.direction(grad)
        policy = policy.with_logits(policy.logits + step)
    ema.observe(float(rewards.mean()))
    return policy


# -- records -----------------------------------------------------------------

@dataclass(frozen=True)
class PipelineRecord:
    iteration: int
    index: int
    action: JointAction
    result: OracleResult
    reward: float | None

    @property
    def failed(self) -> bool:
        return self.reward is None


@dataclass
class IterationSummary:
    iteration: int
    evaluations: int
    batch_mean: float
    batch_max: float
    best_so_far: float
    topk_mean: float
    entropy: list[float]
    kl: list[float]
    critic_loss: float
    failed: int


def topk_key(rec: PipelineRecord):
    return (-rec.reward, rec.iteration, rec.action)


@dataclass
class RunRecord:
    pipelines: list[PipelineRecord] = field(default_factory=list)
    summaries: list[IterationSummary] = field(default_factory=list)
    topk: list[PipelineRecord] = field(default_factory=list)
    k: int = 20
    final_topk: list[tuple[PipelineRecord, float]] | None = None

    def add_batch(self, batch: Sequence[PipelineRecord]) -> None:
        self.pipelines.extend(batch)
        ok = [r for r in batch if not r.failed]
        self.topk = sorted(self.topk + ok, key=topk_key)[: self.k]

    @property
    def evaluations(self) -> int:
        return sum(1 for r in self.pipelines if not r.failed)

    def topk_mean(self) -> float:
        return float(np.mean([r.reward for r in self.topk])) if self.topk else float("nan")

    def best(self) -> PipelineRecord | None:
        return self.topk[0] if self.topk else None


# -- trainer -------------------------------------------------------------------

class Trainer:
    """Owns every piece of mutable search state; one instance per run."""

    def __init__(self, space: JointSpace, oracle: Oracle | Callable, hp: Hyperparams | None = None,
                 variant: str = "ma2ml", reward_spec: MultiObjectiveSpec | None = None):
        if variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        self.space = space
        self.oracle = oracle
        self.hp = hp or Hyperparams()
        self.variant = variant
        self.reward_spec = reward_spec
        seed = self.hp.seed
        self.rng_sample = substream(seed, "sampling")
        self.rng_buffer = substream(seed, "buffer")
        self.rng_baseline = substream(seed, "baseline")
        self.policy = Policy.uniform(space)
        self.target = Policy.uniform(space)
        if self.hp.critic == "tabular":
            self.critic = TabularQ(space)
        else:
            self.critic = NeuralQ(space, self.hp.hidden, rng=substream(seed, "critic-init"))
        self.buffer = ReplayBuffer(self.hp.buffer_capacity)
        self.ema = EmaBaseline(self.hp.ema_decay)
        self.opt_policy = make_optimizer(self.hp.optimizer, self.hp.lr_policy)
        self.opt_critic = make_optimizer(self.hp.optimizer, self.hp.lr_critic)
        self.baseline_mode = resolve_baseline_mode(space, self.hp.baseline_samples)
        self.iteration = 0
        self.record = RunRecord(k=self.hp.topk)
        self.fail_streak = 0
        self.on_iteration: list[Callable[["Trainer", list[PipelineRecord], IterationSummary], None]] = []

    # evaluation ------------------------------------------------------------
    def _evaluate_one(self, action: JointAction) -> OracleResult:
        try:
            if isinstance(self.oracle, Oracle):
                return self.oracle.evaluate(action)
            return self.oracle(action)
        except Exception as exc:  # an oracle crash only fails this pipeline
            log.warning("oracle raised on %s: %s", action, exc)
            return OracleResult.failure(repr(exc))

    def _evaluate(self, actions: list[JointAction]) -> list[OracleResult]:
        if self.hp.workers > 1:
            with ThreadPoolExecutor(self.hp.workers) as pool:
                return list(pool.map(self._evaluate_one, actions))
        return [self._evaluate_one(a) for a in actions]

    def _reward(self, res: OracleResult) -> float | None:
        if res.failed:
            return None
        try:
            r = scalar_reward(res, self.reward_spec)
        except ValueError as exc:
            log.warning("cannot score result %s: %s", res, exc)
            return None
        return r if math.isfinite(r) else None

    # one iteration ---------------------------------------------------------
    def run_iteration(self) -> list[PipelineRecord]:
        it = self.iteration
        hp = self.hp
        arr, _ = self.policy.sample(self.rng_sample, hp.batch_size)
        actions = [tuple(int(v) for v in row) for row in arr]
        results = self._evaluate(actions)
        batch = [PipelineRecord(it, b, a, r, self._reward(r)) for b, (a, r) in enumerate(zip(actions, results))]
        ok = [p for p in batch if not p.failed]
        n_failed = len(batch) - len(ok)
        if n_failed:
            log.warning("iteration %d: %d of %d evaluations failed", it, n_failed, len(batch))
        self.fail_streak = self.fail_streak + 1 if n_failed * 2 > len(batch) else 0

        start = self.buffer.position
        for p in ok:
            self.buffer.push(Experience(p.action, p.reward))
        loss = float("nan")
        if ok:
            if self.variant == "lite":
                acts = np.array([p.action for p in ok])
                rews = np.array([p.reward for p in ok])
                self.policy = lite_update(self.policy, acts, rews, self.ema, hp.lr_policy, hp.lite_steps,
                                          self.opt_policy)
            else:
                if isinstance(self.critic, TabularQ):
                    self.critic.fit(Experience(p.action, p.reward) for p in ok)
                since = start if self.variant == "onpolicy" else None
                for _ in range(hp.updates_per_iter):
                    loss = self._update_step(since)
        self.record.add_batch(batch)
        rewards = [p.reward for p in ok]
        summary = IterationSummary(
            iteration=it,
            evaluations=self.record.evaluations,
            batch_mean=float(np.mean(rewards)) if rewards else float("nan"),
            batch_max=float(np.max(rewards)) if rewards else float("nan"),
            best_so_far=self.record.best().reward if self.record.best() else float("nan"),
            topk_mean=self.record.topk_mean(),
            entropy=self.policy.entropy().tolist(),
            kl=self.policy.kl(self.target).tolist(),
            critic_loss=loss,
            failed=n_failed,
        )
        self.record.summaries.append(summary)
        self.iteration += 1
        for cb in self.on_iteration:
            cb(self, batch, summary)
        if self.fail_streak >= 3:
            raise SearchAborted(f"more than half of each batch failed for {self.fail_streak} consecutive iterations")
        return batch

    def _update_step(self, since: int | None) -> float:
        hp = self.hp
        actions, rewards = self.buffer.sample_arrays(hp.minibatch_size, self.rng_buffer, since=since)
        if isinstance(self.critic, NeuralQ):
            try:
                loss = self.critic.update(actions, rewards, hp.lr_critic, self.opt_critic)
            except CriticDiverged:
                log.error("critic diverged at iteration %d", self.iteration)
                raise
        else:
            loss = float(np.mean((self.critic.predict(actions) - rewards) ** 2))
        try:
            grad = policy_gradient(self.policy, self.target, actions, self.critic, hp.lam,
                                   self.baseline_mode, self.rng_baseline)
            self.policy = self.policy.with_logits(self.policy.logits + self.opt_policy.direction(grad))
        except PolicyStepError:
            log.error("skipping policy step with non-finite gradient at iteration %d", self.iteration)
        self.target = soft_update(self.target, self.policy, hp.tau)
        return loss

    def run(self, max_iter: int | None = None) -> RunRecord:
        stop = self.hp.max_iter if max_iter is None else max_iter
        while self.iteration < stop:
            self.run_iteration()
        return self.record

    def finalize(self) -> RunRecord:
        """Re-score the top-k pipelines at high fidelity when the oracle offers it."""
        if getattr(self.oracle, "has_high_fidelity", False):
            rescored = []
            for rec in self.record.topk:
                res = self.oracle.evaluate(rec.action, fidelity="high")
                rescored.append((rec, self._reward(res)))
            self.record.final_topk = rescored
        return self.record

    def decoded_topk(self) -> list[dict]:
        return [{"iteration": r.iteration, "index": r.index, "reward": r.reward,
                 "pipeline": decode_action(self.space, r.action)} for r in self.record.topk]

    # checkpointing -----------------------------------------------------------
    def state_dict(self) -> dict:
        critic = {"kind": "tabular" if isinstance(self.critic, TabularQ) else "neural", **self.critic.state_dict()}
        return {
            "variant": self.variant,
            "iteration": self.iteration,
            "hyperparams": asdict(self.hp),
            "space_fingerprint": self.space.fingerprint(),
            "policy": self.policy.to_list(),
            "target": self.target.to_list(),
            "critic": critic,
            "buffer": self.buffer.state_dict(),
            "ema": asdict(self.ema),
            "optim": {"policy": self.opt_policy.state_dict(), "critic": self.opt_critic.state_dict()},
            "fail_streak": self.fail_streak,
            "rng": {name: getattr(self, f"rng_{name}").bit_generator.state for name in ("sample", "buffer", "baseline")},
            "pipelines": [
                [p.iteration, p.index, list(p.action), p.reward, p.result.accuracy, p.result.cost, p.result.failed]
                for p in self.record.pipelines
            ],
            "summaries": [asdict(s) for s in self.record.summaries],
        }

    def load_state(self, state: dict) -> None:
        if state["space_fingerprint"] != self.space.fingerprint():
            raise ValueError("checkpoint was written for a different space")
        if state["variant"] != self.variant:
            raise ValueError("checkpoint was written for a different variant")
        self.iteration = state["iteration"]
        self.policy = Policy(self.space, np.array(state["policy"]))
        self.target = Policy(self.space, np.array(state["target"]))
        self.critic.load_state(state["critic"])
        self.buffer = ReplayBuffer.from_state(state["buffer"])
        self.ema = EmaBaseline(**state["ema"])
        self.opt_policy.load_state(state["optim"]["policy"])
        self.opt_critic.load_state(state["optim"]["critic"])
        self.fail_streak = state["fail_streak"]
        for name, st in state["rng"].items():
            getattr(self, f"rng_{name}").bit_generator.state = st
        self.record = RunRecord(k=self.hp.topk)
        by_iter: dict[int, list[PipelineRecord]] = {}
        for it, idx, action, reward, acc, cost, failed in state["pipelines"]:
            res = OracleResult.failure("restored") if failed else OracleResult(acc, cost)
            by_iter.setdefault(it, []).append(PipelineRecord(it, idx, tuple(action), res, reward))
        for it in sorted(by_iter):
            self.record.add_batch(by_iter[it])
        self.record.summaries = [IterationSummary(**s) for s in state["summaries"]]


def run_search(space: JointSpace, oracle, hp: Hyperparams | None = None, variant: str = "ma2ml",
               reward_spec: MultiObjectiveSpec | None = None) -> RunRecord:
    trainer = Trainer(space, oracle, hp, variant, reward_spec)
    trainer.run()
    return trainer.finalize()


def evaluations_to_threshold(summaries: Sequence[IterationSummary], threshold: float) -> float:
    """Evaluations spent when the running top-k mean first reaches ``threshold`` (inf if never)."""
    for s in summaries:
        if s.topk_mean >= threshold:
            return float(s.evaluations)
    return math.inf


def reward_optimum(space: JointSpace, oracle, reward_spec: MultiObjectiveSpec | None = None) -> float:
    """Best reward over every joint action (the space must be enumerable)."""
    if space.n_joint > 10**6:
        raise ValueError(f"space has {space.n_joint} joint actions; too many to enumerate")
    if reward_spec is None and hasattr(oracle, "accuracy_batch"):
        return float(oracle.accuracy_batch(space.all_actions()).max())
    best = -math.inf
    for action in space.enumerate():
        res = oracle.evaluate(action) if isinstance(oracle, Oracle) else oracle(action)
        if not res.failed:
            best = max(best, scalar_reward(res, reward_spec))
    if best == -math.inf:
        raise ValueError("every joint action failed")
    return best


@dataclass
class CompareResult:
    """Paired-seed outcome of several variants; ``runs[variant][s]`` holds seed ``seeds[s]``."""

    variants: list[str]
    seeds: list[int]
    threshold: float
    runs: dict[str, list[RunRecord]]
    thresholds: list[float] = field(default_factory=list)

    def final_topk(self, variant: str) -> np.ndarray:
        return np.array([r.topk_mean() for r in self.runs[variant]])

    def evals_to_threshold(self, variant: str) -> np.ndarray:
        thr = self.thresholds or [self.threshold] * len(self.seeds)
        return np.array([evaluations_to_threshold(r.summaries, t) for r, t in zip(self.runs[variant], thr)])

    def topk_wins(self, a: str, b: str) -> int:
        """Seeds where ``a``'s final top-k mean is at least ``b``'s."""
        return int(np.sum(self.final_topk(a) >= self.final_topk(b)))

    def speed_wins(self, a: str, b: str) -> int:
        """Seeds where ``a`` reaches the threshold with strictly fewer evaluations than ``b``."""
        return int(np.sum(self.evals_to_threshold(a) < self.evals_to_threshold(b)))

    def summary_rows(self) -> list[dict]:
        ref = self.variants[0]
        n = len(self.seeds)
        rows = []
        for v in self.variants:
            rows.append({
                "variant": v,
                "seeds": n,
                "median_evals_to_threshold": float(np.median(self.evals_to_threshold(v))),
                "reached": int(np.sum(np.isfinite(self.evals_to_threshold(v)))),
                "mean_final_topk": float(np.mean(self.final_topk(v))),
                f"{ref}_topk_win_rate": self.topk_wins(ref, v) / n,
                f"{ref}_speed_win_rate": self.speed_wins(ref, v) / n,
            })
        return rows

    def curve_rows(self) -> list[dict]:
        rows = []
        for v in self.variants:
            for seed, rec in zip(self.seeds, self.runs[v]):
                for s in rec.summaries:
                    rows.append({"variant": v, "seed": seed, "iteration": s.iteration, "evaluations": s.evaluations,
                                 "best_so_far": s.best_so_far, "topk_mean": s.topk_mean, "batch_mean": s.batch_mean})
        return rows


def compare_variants(space: JointSpace, make_oracle: Callable[[int], object], hp: Hyperparams,
                     variants: Sequence[str], seeds: Sequence[int], threshold: float | None = None,
                     threshold_fraction: float = 0.95, reward_spec: MultiObjectiveSpec | None = None,
                     progress: Callable[[str, int, RunRecord], None] | None = None) -> CompareResult:
    """Run every variant on the same seeds; seed ``s`` fixes both the oracle and the trainer streams.

    Without an explicit ``threshold`` each seed's threshold is ``threshold_fraction``
    of that oracle's brute-force optimum; the result stores the fraction-scaled mean.
    """
    if not seeds:
        raise ValueError("at least one seed is required")
    for v in variants:
        if v not in VARIANTS:
            raise ValueError(f"unknown variant {v!r}")
    runs: dict[str, list[RunRecord]] = {v: [] for v in variants}
    thresholds = []
    for s in seeds:
        oracle = make_oracle(s)
        thr = threshold if threshold is not None else threshold_fraction * reward_optimum(space, oracle, reward_spec)
        thresholds.append(thr)
        for v in variants:
            trainer = Trainer(space, oracle, replace(hp, seed=s), v, reward_spec)
            trainer.run()
            runs[v].append(trainer.record)
            if progress:
                progress(v, s, trainer.record)
    return CompareResult(list(variants), list(seeds), float(np.mean(thresholds)), runs, thresholds)
