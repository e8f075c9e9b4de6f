"""Joint categorical action space shared by all agents.

A joint action is stored flat: one index per dimension, agents concatenated
in declaration order. ``JointSpace.agent_slices`` maps each agent back to its
contiguous block of dimensions.
"""
from __future__ import annotations

import hashlib
import itertools
import json
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Iterator, Sequence

import numpy as np
import yaml

JointAction = tuple[int, ...]


class SpaceError(ValueError):
    """Invalid space definition or action. ``field`` names the offending entry."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class SpaceParseError(SpaceError):
    pass


@dataclass(frozen=True)
class DimensionSpec:
    name: str
    cardinality: int
    labels: tuple | None = None

    def label(self, index: int):
        return self.labels[index] if self.labels is not None else index

    def index_of(self, value) -> int:
        if self.labels is None:
            return int(value)
        return self.labels.index(value)


@dataclass(frozen=True)
class AgentSpace:
    name: str
    dimensions: tuple[DimensionSpec, ...]

    @cached_property
    def cardinalities(self) -> tuple[int, ...]:
        return tuple(d.cardinality for d in self.dimensions)

    @property
    def n_actions(self) -> int:
        """Size of the agent's flattened action set."""
        return math.prod(self.cardinalities)


@dataclass(frozen=True)
class JointSpace:
    agents: tuple[AgentSpace, ...]

    def __post_init__(self):
        _validate(self)

    @property
    def n_agents(self) -> int:
        return len(self.agents)

    @cached_property
    def dimensions(self) -> tuple[DimensionSpec, ...]:
        return tuple(d for a in self.agents for d in a.dimensions)

    @cached_property
    def cardinalities(self) -> np.ndarray:
        return _frozen(np.array([d.cardinality for d in self.dimensions], dtype=np.int64))

    @cached_property
    def n_dims(self) -> int:
        return sum(len(a.dimensions) for a in self.agents)

    @cached_property
    def width(self) -> int:
        """Length of the one-hot encoding (sum of cardinalities)."""
        return int(self.cardinalities.sum())

    @cached_property
    def offsets(self) -> np.ndarray:
        """Start of each dimension's block in the one-hot / logit vector."""
        card = self.cardinalities
        return _frozen(np.concatenate([[0], np.cumsum(card)[:-1]]).astype(np.int64))

    @cached_property
    def agent_slices(self) -> tuple[slice, ...]:
        out, start = [], 0
        for a in self.agents:
            out.append(slice(start, start + len(a.dimensions)))
            start += len(a.dimensions)
        return tuple(out)

    @cached_property
    def dim_agent(self) -> np.ndarray:
        """Agent index owning each dimension."""
        return _frozen(np.repeat(np.arange(self.n_agents), [len(a.dimensions) for a in self.agents]))

    @cached_property
    def n_joint(self) -> int:
        return math.prod(a.n_actions for a in self.agents)

    def agent_index(self, name: str) -> int:
        for i, a in enumerate(self.agents):
            if a.name == name:
                return i
        raise KeyError(name)

    def validate_action(self, action: Sequence[int]) -> JointAction:
        action = tuple(int(a) for a in action)
        if len(action) != self.n_dims:
            raise SpaceError("action", f"expected {self.n_dims} indices, got {len(action)}")
        for k, (idx, dim) in enumerate(zip(action, self.dimensions)):
            if not 0 <= idx < dim.cardinality:
                raise SpaceError(f"action[{k}]", f"index {idx} outside [0, {dim.cardinality}) for {dim.name!r}")
        return action

    def split(self, action: Sequence[int]) -> tuple[tuple[int, ...], ...]:
        """Per-agent index vectors."""
        return tuple(tuple(action[s]) for s in self.agent_slices)

    def agent_flat_index(self, action: Sequence[int], i: int) -> int:
        """Row-major position of agent ``i``'s sub-action in its flattened action set."""
        return int(np.ravel_multi_index(tuple(action[self.agent_slices[i]]), self.agents[i].cardinalities))

    def agent_actions(self, i: int) -> np.ndarray:
        """All sub-actions of agent ``i`` as an (n_actions, n_agent_dims) array, row-major order."""
        card = self.agents[i].cardinalities
        return np.array(list(itertools.product(*[range(c) for c in card])), dtype=np.int64).reshape(-1, len(card))

    def enumerate(self) -> Iterator[JointAction]:
        """All joint actions in lexicographic order."""
        return itertools.product(*[range(int(c)) for c in self.cardinalities])

    def all_actions(self) -> np.ndarray:
        return np.array(list(self.enumerate()), dtype=np.int64).reshape(-1, self.n_dims)

    def fingerprint(self) -> str:
        return hashlib.sha256(json.dumps(space_to_dict(self), sort_keys=True).encode()).hexdigest()[:16]


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _validate(space: JointSpace) -> None:
    if len(space.agents) < 1:
        raise SpaceError("agents", "at least one agent is required")
    seen = set()
    for i, agent in enumerate(space.agents):
        where = f"agents[{i}]"
        if agent.name in seen:
            raise SpaceError(f"{where}.name", f"duplicate agent name {agent.name!r}")
        seen.add(agent.name)
        if len(agent.dimensions) < 1:
            raise SpaceError(f"{where}.dimensions", "at least one dimension is required")
        dim_names = set()
        for j, dim in enumerate(agent.dimensions):
            dwhere = f"{where}.dimensions[{j}]"
            if dim.name in dim_names:
                raise SpaceError(f"{dwhere}.name", f"duplicate dimension name {dim.name!r}")
            dim_names.add(dim.name)
            if isinstance(dim.cardinality, bool) or not isinstance(dim.cardinality, (int, np.integer)):
                raise SpaceError(f"{dwhere}.cardinality", "must be an integer")
            if dim.cardinality < 2:
                raise SpaceError(f"{dwhere}.cardinality", f"must be >= 2, got {dim.cardinality}")
            if dim.labels is not None:
                if len(dim.labels) != dim.cardinality:
                    raise SpaceError(f"{dwhere}.labels", f"{len(dim.labels)} labels for cardinality {dim.cardinality}")
                if len(set(dim.labels)) != len(dim.labels):
                    raise SpaceError(f"{dwhere}.labels", "labels must be unique")


def log10_cardinality(space: JointSpace) -> float:
    return float(sum(math.log10(d.cardinality) for d in space.dimensions))


def space_from_dict(doc: Any) -> JointSpace:
    if not isinstance(doc, dict) or "agents" not in doc:
        raise SpaceError("agents", "top-level mapping with an 'agents' list is required")
    raw_agents = doc["agents"]
    if not isinstance(raw_agents, list):
        raise SpaceError("agents", "must be a list")
    agents = []
    for i, ra in enumerate(raw_agents):
        if not isinstance(ra, dict):
            raise SpaceError(f"agents[{i}]", "must be a mapping")
        if "name" not in ra:
            raise SpaceError(f"agents[{i}].name", "missing")
        dims = []
        raw_dims = ra.get("dimensions")
        if not isinstance(raw_dims, list):
            raise SpaceError(f"agents[{i}].dimensions", "must be a list")
        for j, rd in enumerate(raw_dims):
            where = f"agents[{i}].dimensions[{j}]"
            if not isinstance(rd, dict):
                raise SpaceError(where, "must be a mapping")
            for key in ("name", "cardinality"):
                if key not in rd:
                    raise SpaceError(f"{where}.{key}", "missing")
            labels = rd.get("labels")
            if labels is not None:
                if not isinstance(labels, list):
                    raise SpaceError(f"{where}.labels", "must be a list")
                labels = tuple(labels)
            dims.append(DimensionSpec(str(rd["name"]), rd["cardinality"], labels))
        agents.append(AgentSpace(str(ra["name"]), tuple(dims)))
    return JointSpace(tuple(agents))


def space_to_dict(space: JointSpace) -> dict:
    agents = []
    for a in space.agents:
        dims = []
        for d in a.dimensions:
            entry = {"name": d.name, "cardinality": int(d.cardinality)}
            if d.labels is not None:
                entry["labels"] = list(d.labels)
            dims.append(entry)
        agents.append({"name": a.name, "dimensions": dims})
    return {"agents": agents}


def parse_space(text: str) -> JointSpace:
    """Parse a YAML (or JSON) space document."""
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise SpaceParseError("config", f"malformed document: {exc}") from exc
    return space_from_dict(doc)


def serialize_space(space: JointSpace) -> str:
    return yaml.safe_dump(space_to_dict(space), sort_keys=False)


def load_space(path) -> JointSpace:
    with open(path) as fh:
        return parse_space(fh.read())


def product_space(*spaces: JointSpace) -> JointSpace:
    return JointSpace(tuple(a for s in spaces for a in s.agents))


def encode_onehot(space: JointSpace, action: Sequence[int]) -> np.ndarray:
    action = space.validate_action(action)
    x = np.zeros(space.width)
    x[space.offsets + np.asarray(action)] = 1.0
    return x


def encode_batch(space: JointSpace, actions: np.ndarray) -> np.ndarray:
    """One-hot rows for an (B, n_dims) integer array. No validation."""
    actions = np.asarray(actions, dtype=np.int64)
    x = np.zeros((actions.shape[0], space.width))
    rows = np.arange(actions.shape[0])[:, None]
    x[rows, space.offsets[None, :] + actions] = 1.0
    return x


def decode_action(space: JointSpace, action: Sequence[int]) -> dict:
    """Pipeline document: ``{agent: {dimension: label-or-index}}``."""
    action = space.validate_action(action)
    out = {}
    for agent, sub in zip(space.agents, space.split(action)):
        out[agent.name] = {d.name: _plain(d.label(k)) for d, k in zip(agent.dimensions, sub)}
    return out


def encode_decoded(space: JointSpace, doc: dict) -> JointAction:
    """Inverse of :func:`decode_action`."""
    action = []
    for agent in space.agents:
        if agent.name not in doc:
            raise SpaceError(agent.name, "missing from pipeline document")
        fields = doc[agent.name]
        for d in agent.dimensions:
            if d.name not in fields:
                raise SpaceError(f"{agent.name}.{d.name}", "missing from pipeline document")
            try:
                action.append(d.index_of(fields[d.name]))
            except ValueError as exc:
                raise SpaceError(f"{agent.name}.{d.name}", f"unknown value {fields[d.name]!r}") from exc
    return space.validate_action(action)


def _plain(value):
    if isinstance(value, np.generic):
        return value.item()
    return value


def format_action(action: Sequence[int]) -> str:
    return ";".join(str(int(a)) for a in action)


def simple_space(sizes: Sequence[int], prefix: str = "agent") -> JointSpace:
    """One single-dimension agent per entry of ``sizes``."""
    return JointSpace(tuple(
        AgentSpace(f"{prefix}{i}", (DimensionSpec("choice", int(k)),)) for i, k in enumerate(sizes)
    ))
