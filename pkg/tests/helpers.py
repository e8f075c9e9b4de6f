"""Small builders shared by the test modules."""
from ma2ml.space import AgentSpace, DimensionSpec, JointSpace


def dims_space(*cards):
    """One agent per argument, each agent holding the listed cardinalities."""
    return JointSpace(tuple(
        AgentSpace(f"a{i}", tuple(DimensionSpec(f"d{j}", c) for j, c in enumerate(cs)))
        for i, cs in enumerate(cards)
    ))
