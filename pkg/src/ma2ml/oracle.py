"""Reward oracles standing in for pipeline training, and the cost-aware reward."""
from __future__ import annotations

import csv
import json
import logging
import math
import shlex
import subprocess
import threading
import zlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .space import JointSpace, decode_action

log = logging.getLogger(__name__)

ACC_LO, ACC_HI = 0.05, 0.95
COST_LO, COST_HI = 300e6, 1200e6


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class OracleResult:
    accuracy: float = float("nan")
    cost: float | None = None
    failed: bool = False
    error: str | None = None

    def __post_init__(self):
        if self.failed:
            return
        if not (0.0 <= self.accuracy <= 1.0):
            raise OracleError(f"accuracy must lie in [0, 1], got {self.accuracy}")
        if self.cost is not None and not self.cost > 0:
            raise OracleError(f"cost must be positive, got {self.cost}")

    @classmethod
    def failure(cls, error: str) -> "OracleResult":
        return cls(failed=True, error=error)


@dataclass(frozen=True)
class MultiObjectiveSpec:
    w: float = -0.07
    constraint: float = 600e6

    def __post_init__(self):
        if not self.constraint > 0:
            raise ValueError("constraint must be positive")


def multi_objective_reward(res: OracleResult, spec: MultiObjectiveSpec) -> float:
    """``accuracy * (cost / constraint) ** w``."""
    if res.failed:
        raise OracleError("cannot score a failed evaluation")
    if res.cost is None:
        raise OracleError("multi-objective reward needs a cost")
    return res.accuracy * (res.cost / spec.constraint) ** spec.w


def scalar_reward(res: OracleResult, spec: MultiObjectiveSpec | None = None) -> float:
    return res.accuracy if spec is None else multi_objective_reward(res, spec)


class Oracle:
    """Base class: ``evaluate(action)`` returns an :class:`OracleResult`.

    ``fidelity="high"`` asks for the final, noise-free evaluation used when
    re-scoring the top pipelines; oracles without that notion ignore it.
    """

    space: JointSpace
    has_high_fidelity = False

    def evaluate(self, action: Sequence[int], fidelity: str = "low") -> OracleResult:
        raise NotImplementedError

    def __call__(self, action: Sequence[int]) -> OracleResult:
        return self.evaluate(action)


class CoupledOracle(Oracle):
    """Synthetic landscape: per-dimension terms plus pairwise agent interactions.

    ``raw(A) = (1 - c) * sum_d f_d[A_d] + c * sum_{i<j} g_ij[A_i mod K, A_j mod K]``
    where ``A_i`` is agent i's flattened sub-action index. ``raw`` is mapped
    affinely onto [0.05, 0.95] using its exact range when the space is
    enumerable (<= 10**6 joint actions) and otherwise using the bound obtained
    by adding per-table extremes, which always contains the true range.
    """

    def __init__(self, space: JointSpace, seed: int = 0, coupling: float = 0.7, buckets: int = 8,
                 noise: float = 0.0):
        if not 0.0 <= coupling <= 1.0:
            raise ValueError("coupling must lie in [0, 1]")
        if buckets < 1:
            raise ValueError("buckets must be positive")
        self.space, self.seed, self.coupling, self.buckets, self.noise = space, seed, coupling, buckets, noise
        rng = np.random.default_rng(seed)
        self.f = [rng.standard_normal(int(c)) for c in space.cardinalities]
        n = space.n_agents
        self.pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
        self.g = [rng.standard_normal((buckets, buckets)) for _ in self.pairs]
        self.u = [rng.uniform(0.0, 1.0, int(c)) for c in space.cardinalities]
        self.has_high_fidelity = noise > 0
        if space.n_joint <= 10**6:
            raw = self._raw(space.all_actions())
            self.lo, self.hi = float(raw.min()), float(raw.max())
        else:
            c = coupling
            self.lo = (1 - c) * sum(float(t.min()) for t in self.f) + c * sum(float(t.min()) for t in self.g)
            self.hi = (1 - c) * sum(float(t.max()) for t in self.f) + c * sum(float(t.max()) for t in self.g)

    def _agent_bucket(self, actions: np.ndarray, i: int) -> np.ndarray:
        sl = self.space.agent_slices[i]
        card = self.space.agents[i].cardinalities
        b = np.zeros(len(actions), dtype=np.int64)
        for k, c in zip(range(sl.start, sl.stop), card):
            b = (b * c + actions[:, k]) % self.buckets
        return b

    def _raw(self, actions: np.ndarray) -> np.ndarray:
        c = self.coupling
        sep = np.zeros(len(actions))
        for d, t in enumerate(self.f):
            sep += t[actions[:, d]]
        out = (1 - c) * sep
        if self.pairs:
            buckets = [self._agent_bucket(actions, i) for i in range(self.space.n_agents)]
            inter = np.zeros(len(actions))
            for (i, j), t in zip(self.pairs, self.g):
                inter += t[buckets[i], buckets[j]]
            out = out + c * inter
        return out

    def accuracy_batch(self, actions: np.ndarray) -> np.ndarray:
        """Noise-free accuracies for an (B, n_dims) array."""
        actions = np.atleast_2d(np.asarray(actions, dtype=np.int64))
        raw = self._raw(actions)
        if self.hi == self.lo:
            return np.full(len(actions), 0.5 * (ACC_LO + ACC_HI))
        return ACC_LO + (ACC_HI - ACC_LO) * (raw - self.lo) / (self.hi - self.lo)

    def cost_batch(self, actions: np.ndarray) -> np.ndarray:
        actions = np.atleast_2d(np.asarray(actions, dtype=np.int64))
        s = np.zeros(len(actions))
        for d, t in enumerate(self.u):
            s += t[actions[:, d]]
        s /= len(self.u)
        return COST_LO * (COST_HI / COST_LO) ** s

    def table(self) -> np.ndarray:
        """Dense noise-free accuracies, one axis per agent (flattened sub-actions)."""
        acc = self.accuracy_batch(self.space.all_actions())
        return acc.reshape([a.n_actions for a in self.space.agents])

    def _noise(self, action: Sequence[int]) -> float:
        key = zlib.crc32(",".join(map(str, action)).encode())
        return float(np.random.default_rng([self.seed, key]).standard_normal()) * self.noise

    def evaluate(self, action: Sequence[int], fidelity: str = "low") -> OracleResult:
        action = self.space.validate_action(action)
        arr = np.array([action])
        acc = float(self.accuracy_batch(arr)[0])
        if self.noise > 0 and fidelity == "low":
            acc = min(max(acc + self._noise(action), 0.0), 1.0)
        return OracleResult(acc, float(self.cost_batch(arr)[0]))


def separable_oracle(space: JointSpace, seed: int = 0, noise: float = 0.0) -> CoupledOracle:
    """Sum of independent per-dimension terms; identical to a coupling-0 landscape."""
    return CoupledOracle(space, seed, coupling=0.0, noise=noise)


def coupled_oracle(space: JointSpace, seed: int = 0, coupling: float = 0.7, buckets: int = 8,
                   noise: float = 0.0) -> CoupledOracle:
    return CoupledOracle(space, seed, coupling, buckets, noise)


def action_columns(space: JointSpace) -> list[str]:
    return [f"a_{a.name}_{d.name}" for a in space.agents for d in a.dimensions]


class TabularOracle(Oracle):
    """Exact lookup of pre-computed results; actions absent from the table fail."""

    def __init__(self, space: JointSpace, rows: dict[tuple[int, ...], OracleResult]):
        self.space = space
        self.rows = rows

    def evaluate(self, action: Sequence[int], fidelity: str = "low") -> OracleResult:
        action = self.space.validate_action(action)
        res = self.rows.get(action)
        if res is None:
            return OracleResult.failure(f"action {action} not in table")
        return res

    def mean_accuracy(self) -> float:
        return float(np.mean([r.accuracy for r in self.rows.values()]))


def tabular_oracle_load(path, space: JointSpace | None = None) -> TabularOracle:
    """Load a CSV with header ``a_<agent>_<dim>,...,accuracy,cost``.

    Without ``space``, one single-dimension-per-column space is inferred from
    the header and the largest index seen in each column.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise OracleError(f"{path}: empty file") from None
        if len(header) < 3 or header[-2:] != ["accuracy", "cost"]:
            raise OracleError(f"{path}: row 1: header must end with 'accuracy,cost'")
        cols = header[:-2]
        if not all(c.startswith("a_") for c in cols):
            raise OracleError(f"{path}: row 1: action columns must be named a_<agent>_<dim>")
        if space is not None and cols != action_columns(space):
            raise OracleError(f"{path}: row 1: columns {cols} do not match space {action_columns(space)}")
        raw_rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise OracleError(f"{path}: row {lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                action = tuple(int(v) for v in row[:-2])
                acc = float(row[-2])
                cost = float(row[-1]) if row[-1].strip() else None
                res = OracleResult(acc, cost)
            except (ValueError, OracleError) as exc:
                raise OracleError(f"{path}: row {lineno}: {exc}") from None
            raw_rows.append((lineno, action, res))
    if space is None:
        space = _infer_space(cols, [a for _, a, _ in raw_rows])
    rows: dict[tuple[int, ...], OracleResult] = {}
    for lineno, action, res in raw_rows:
        try:
            action = space.validate_action(action)
        except ValueError as exc:
            raise OracleError(f"{path}: row {lineno}: {exc}") from None
        if action in rows:
            raise OracleError(f"{path}: row {lineno}: duplicate action {action}")
        rows[action] = res
    return TabularOracle(space, rows)


def _infer_space(cols: list[str], actions: list[tuple[int, ...]]) -> JointSpace:
    from .space import AgentSpace, DimensionSpec

    agents: dict[str, list[DimensionSpec]] = {}
    top = np.max(np.array(actions), axis=0) if actions else np.ones(len(cols), dtype=int)
    for col, m in zip(cols, top):
        agent, _, dim = col[2:].partition("_")
        agents.setdefault(agent, []).append(DimensionSpec(dim or "choice", max(int(m) + 1, 2)))
    return JointSpace(tuple(AgentSpace(a, tuple(d)) for a, d in agents.items()))


def write_tabular(path, space: JointSpace, oracle: Oracle, actions=None) -> None:
    """Dump ``oracle`` over ``actions`` (default: every joint action) as a tabular file."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(action_columns(space) + ["accuracy", "cost"])
        for a in (space.enumerate() if actions is None else actions):
            res = oracle.evaluate(a, fidelity="high")
            if res.failed:
                continue
            w.writerow(list(a) + [repr(res.accuracy), "" if res.cost is None else repr(res.cost)])


class ExternalCommandOracle(Oracle):
    """Run a command per evaluation.

    The decoded pipeline goes to the child's stdin as one JSON line; the child
    answers with one JSON line ``{"accuracy": float, "cost": float?}`` (the
    last non-empty stdout line is read). Nonzero exit, timeout, unparsable or
    out-of-range output all produce a failed result.
    """

    def __init__(self, space: JointSpace, cmdline, timeout: float = 3600.0, max_concurrent: int | None = None):
        self.space = space
        self.argv = shlex.split(cmdline) if isinstance(cmdline, str) else list(cmdline)
        self.timeout = timeout
        self._slots = threading.BoundedSemaphore(max_concurrent) if max_concurrent else None

    def evaluate(self, action: Sequence[int], fidelity: str = "low") -> OracleResult:
        request = json.dumps(decode_action(self.space, action)) + "\n"
        if self._slots is not None:
            with self._slots:
                return self._run(request)
        return self._run(request)

    def _run(self, request: str) -> OracleResult:
        try:
            proc = subprocess.run(self.argv, input=request, capture_output=True, text=True, timeout=self.timeout)
        except subprocess.TimeoutExpired as exc:
            log.warning("oracle command timed out after %ss; stderr: %s", self.timeout, _tail(exc.stderr))
            return OracleResult.failure("timeout")
        except OSError as exc:
            log.warning("could not start oracle command %s: %s", self.argv, exc)
            return OracleResult.failure(f"spawn: {exc}")
        if proc.returncode != 0:
            log.warning("oracle command exited %d; stderr: %s", proc.returncode, _tail(proc.stderr))
            return OracleResult.failure(f"exit status {proc.returncode}")
        lines = [ln for ln in proc.stdout.splitlines() if ln.strip()]
        try:
            doc = json.loads(lines[-1])
            acc = float(doc["accuracy"])
            cost = doc.get("cost")
            return OracleResult(acc, None if cost is None else float(cost))
        except (IndexError, ValueError, KeyError, TypeError, OracleError) as exc:
            log.warning("malformed oracle response %r: %s; stderr: %s", proc.stdout[-200:], exc, _tail(proc.stderr))
            return OracleResult.failure(f"protocol: {exc}")


def _tail(text, n: int = 500) -> str:
    if not text:
        return ""
    if isinstance(text, bytes):
        text = text.decode(errors="replace")
    return text[-n:]


def external_command_oracle(space: JointSpace, cmdline, timeout_seconds: float = 3600.0,
                            max_concurrent: int | None = None) -> ExternalCommandOracle:
    return ExternalCommandOracle(space, cmdline, timeout_seconds, max_concurrent)


def oracle_is_finite(res: OracleResult) -> bool:
    return not res.failed and math.isfinite(res.accuracy)
