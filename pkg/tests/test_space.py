import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import dims_space
from ma2ml.cli import bundled_config
from ma2ml.space import (AgentSpace, DimensionSpec, JointSpace, SpaceError, SpaceParseError, decode_action,
                         encode_batch, encode_decoded, encode_onehot, load_space, log10_cardinality, parse_space,
                         product_space, serialize_space, simple_space, space_from_dict)


@st.composite
def spaces(draw, max_agents=3, max_dims=3, max_card=5):
    n = draw(st.integers(1, max_agents))
    agents = []
    for i in range(n):
        k = draw(st.integers(1, max_dims))
        dims = []
        for j in range(k):
            c = draw(st.integers(2, max_card))
            labels = draw(st.one_of(st.none(), st.just(tuple(f"v{t}" for t in range(c)))))
            dims.append(DimensionSpec(f"d{j}", c, labels))
        agents.append(AgentSpace(f"agent{i}", tuple(dims)))
    return JointSpace(tuple(agents))


@st.composite
def space_and_action(draw):
    sp = draw(spaces())
    action = tuple(draw(st.integers(0, int(c) - 1)) for c in sp.cardinalities)
    return sp, action


# -- bundled search spaces -------------------------------------------------------

def test_aug_space_has_150_dimensions():
    sp = load_space(bundled_config("aug_imagenet.yaml"))
    assert sp.n_agents == 1
    assert sp.n_dims == 150
    assert sorted(set(sp.cardinalities.tolist())) == [10, 11, 15]


def test_aug_log10_cardinality_matches_order_of_magnitude():
    sp = load_space(bundled_config("aug_imagenet.yaml"))
    expected = 50 * math.log10(15 * 11 * 10)
    assert log10_cardinality(sp) == pytest.approx(expected, rel=1e-15)
    assert round(expected, 1) == 160.9
    assert int(log10_cardinality(sp)) == 160


def test_aug_probability_labels_step_by_tenths():
    sp = load_space(bundled_config("aug_imagenet.yaml"))
    prob = [d for d in sp.dimensions if d.name.endswith("prob")][0]
    assert prob.labels == tuple(round(0.1 * k, 1) for k in range(11))


def test_hpo_cifar_uses_the_four_value_grids():
    sp = load_space(bundled_config("hpo_cifar.yaml"))
    labels = {d.name: d.labels for d in sp.dimensions}
    assert labels["warmup_lr"] == (0.16, 0.08, 0.04, 0.02)
    assert labels["weight_decay"] == (0.0008, 0.0004, 0.0002, 0.0001)


@pytest.mark.parametrize("name", ["toy3.yaml", "coupled3x12.yaml", "hpo_cifar.yaml", "aug_imagenet.yaml"])
def test_bundled_spaces_parse(name):
    sp = load_space(bundled_config(name))
    assert sp.width == int(sp.cardinalities.sum())


# -- parsing and validation ----------------------------------------------------------

def test_minimal_space():
    sp = parse_space("agents: [{name: a, dimensions: [{name: x, cardinality: 2}]}]")
    assert sp.n_joint == 2
    assert log10_cardinality(sp) == pytest.approx(math.log10(2))
    assert log10_cardinality(sp) == pytest.approx(0.30103, abs=1e-5)


@pytest.mark.parametrize("card", [0, 1])
def test_degenerate_cardinality_rejected(card):
    with pytest.raises(SpaceError) as err:
        parse_space(f"agents: [{{name: a, dimensions: [{{name: x, cardinality: {card}}}]}}]")
    assert err.value.field == "agents[0].dimensions[0].cardinality"


@pytest.mark.parametrize("doc, field", [
    ("agents: []", "agents"),
    ("agents: [{name: a, dimensions: []}]", "agents[0].dimensions"),
    ("agents: [{name: a, dimensions: [{name: x, cardinality: 2}]}, {name: a, dimensions: [{name: x, cardinality: 2}]}]",
     "agents[1].name"),
    ("agents: [{name: a, dimensions: [{name: x, cardinality: 2}, {name: x, cardinality: 3}]}]",
     "agents[0].dimensions[1].name"),
    ("agents: [{name: a, dimensions: [{name: x, cardinality: 3, labels: [p, q]}]}]", "agents[0].dimensions[0].labels"),
    ("agents: [{name: a, dimensions: [{name: x, cardinality: 2, labels: [p, p]}]}]", "agents[0].dimensions[0].labels"),
    ("agents: [{name: a, dimensions: [{name: x, cardinality: 2.5}]}]", "agents[0].dimensions[0].cardinality"),
    ("agents: [{name: a, dimensions: [{cardinality: 2}]}]", "agents[0].dimensions[0].name"),
    ("nothing: here", "agents"),
])
def test_invalid_documents_name_the_field(doc, field):
    with pytest.raises(SpaceError) as err:
        parse_space(doc)
    assert err.value.field == field


def test_malformed_yaml():
    with pytest.raises(SpaceParseError):
        parse_space("agents: [unclosed")


@settings(max_examples=60, deadline=None)
@given(spaces())
def test_parse_serialize_roundtrip(sp):
    assert parse_space(serialize_space(sp)) == sp


@settings(max_examples=30, deadline=None)
@given(spaces(), spaces())
def test_log10_cardinality_adds_over_products(a, b):
    b = JointSpace(tuple(AgentSpace("other_" + ag.name, ag.dimensions) for ag in b.agents))
    assert log10_cardinality(product_space(a, b)) == pytest.approx(log10_cardinality(a) + log10_cardinality(b))


def test_fingerprint_tracks_content():
    a = simple_space([2, 3])
    assert a.fingerprint() == simple_space([2, 3]).fingerprint()
    assert a.fingerprint() != simple_space([3, 2]).fingerprint()


# -- encoding ---------------------------------------------------------------------

def test_onehot_examples():
    sp = dims_space([2, 3])
    np.testing.assert_array_equal(encode_onehot(sp, (1, 2)), [0, 1, 0, 0, 1])
    np.testing.assert_array_equal(encode_onehot(dims_space([2]), (0,)), [1, 0])


def test_onehot_rejects_out_of_range():
    with pytest.raises(SpaceError):
        encode_onehot(dims_space([2, 3]), (0, 3))
    with pytest.raises(SpaceError):
        encode_onehot(dims_space([2, 3]), (0,))


def test_onehot_injective_and_counts_by_enumeration():
    sp = dims_space([2, 3], [4])
    vecs = {tuple(encode_onehot(sp, a)) for a in sp.enumerate()}
    assert len(vecs) == sp.n_joint == 24
    for v in vecs:
        assert sum(v) == sp.n_dims


@settings(max_examples=60, deadline=None)
@given(space_and_action())
def test_onehot_properties(sa):
    sp, action = sa
    x = encode_onehot(sp, action)
    assert len(x) == sp.width
    assert x.sum() == sp.n_dims
    np.testing.assert_array_equal(encode_batch(sp, np.array([action]))[0], x)


def test_decode_labels_and_indices():
    sp = space_from_dict({"agents": [{"name": "hpo", "dimensions": [
        {"name": "optimizer", "cardinality": 2, "labels": ["sgd", "adam"]},
        {"name": "depth", "cardinality": 8},
    ]}]})
    assert decode_action(sp, (1, 7)) == {"hpo": {"optimizer": "adam", "depth": 7}}


@settings(max_examples=60, deadline=None)
@given(space_and_action())
def test_decode_roundtrip(sa):
    sp, action = sa
    assert encode_decoded(sp, decode_action(sp, action)) == action


def test_enumerate_is_lexicographic_and_agent_index_row_major():
    sp = dims_space([2, 3], [2])
    acts = list(sp.enumerate())
    assert acts == sorted(acts) and len(acts) == 12
    subs = sp.agent_actions(0)
    for k, row in enumerate(subs):
        assert sp.agent_flat_index(tuple(row) + (0,), 0) == k
    assert list(map(tuple, subs)) == list(itertools.product(range(2), range(3)))
