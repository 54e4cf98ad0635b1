import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import f1, health_model, interpret_dump
from treeverify.ensemble import Ensemble, leaf, split
from treeverify.generators import random_ensemble
from treeverify.model_io import (
    ModelFormatError,
    UnsupportedFeature,
    import_gbdt_dump,
    load_model_file,
    model_to_doc,
    parse_model,
    parse_multiclass,
    serialize_model,
    serialize_multiclass,
)

FIXTURES = Path(__file__).parent / "fixtures"


def fixture(name):
    return json.loads((FIXTURES / name).read_text())


def test_round_trip_f1():
    e = f1()
    back = parse_model(serialize_model(e))
    assert back == e
    xs = np.random.default_rng(0).uniform(-5, 10, size=(1000, 1))
    assert all(back.eval(x) == e.eval(x) for x in xs)


@given(st.integers(0, 10**6))
@settings(max_examples=50, deadline=None)
def test_round_trip_random(seed):
    rng = np.random.default_rng(seed)
    e = random_ensemble(rng, int(rng.integers(1, 8)), int(rng.integers(0, 5)), 4)
    e = Ensemble(e.trees, 4, base_score=float(rng.normal()))
    back = parse_model(serialize_model(e))
    assert back == e and back.base_score == e.base_score
    for x in rng.uniform(-1, 11, size=(50, 4)):
        assert back.eval(x) == e.eval(x)


def test_canonical_layout():
    doc = model_to_doc(Ensemble([split(0, 2, leaf(1), leaf(3))], 1))
    assert doc["version"] == 1 and doc["num_attributes"] == 1
    assert doc["trees"][0] == {"split": {"attr": 0, "tau": 2.0}, "left": {"leaf": 1.0}, "right": {"leaf": 3.0}}


def good_doc():
    return json.loads(serialize_model(f1()))


@pytest.mark.parametrize(
    "mutate, path",
    [
        (lambda d: d.pop("version"), "$"),
        (lambda d: d.update(version=2), "$.version"),
        (lambda d: d.update(trees={}), "$.trees"),
        (lambda d: d["trees"][0].update(tau=1), "$.trees[0].tau"),
        (lambda d: d["trees"][1]["left"].update(extra=1), "$.trees[1].left.extra"),
        (lambda d: d["trees"][0]["split"].update(attr=1), "$.trees[0].split.attr"),
        (lambda d: d["trees"][0].pop("right"), "$.trees[0]"),
        (lambda d: d["trees"][1]["right"].update(leaf="x"), "$.trees[1].right.leaf"),
    ],
)
def test_errors_carry_json_path(mutate, path):
    doc = good_doc()
    mutate(doc)
    with pytest.raises(ModelFormatError) as ei:
        parse_model(json.dumps(doc))
    assert ei.value.path == path
    assert str(ei.value).startswith(path + ":")


def test_version_error_message():
    doc = good_doc()
    doc["version"] = 7
    with pytest.raises(ModelFormatError, match="unsupported model format version"):
        parse_model(doc)


def test_invalid_json():
    with pytest.raises(ModelFormatError):
        parse_model("{not json")


def test_multiclass_round_trip():
    models = [f1(), f1().negate()]
    back = parse_multiclass(serialize_multiclass(models))
    assert back == models
    with pytest.raises(ModelFormatError):
        parse_multiclass(json.dumps({"classes": []}))
    bad = {"classes": [model_to_doc(f1()), model_to_doc(health_model())]}
    with pytest.raises(ModelFormatError, match="classes"):
        parse_multiclass(bad)


def test_load_model_file_dispatch(tmp_path):
    p = tmp_path / "m.json"
    p.write_bytes(serialize_model(f1()))
    assert load_model_file(str(p)) == f1()
    p.write_bytes(serialize_multiclass([f1(), f1()]))
    assert load_model_file(str(p)) == [f1(), f1()]
    p.write_text((FIXTURES / "gbdt_handwritten.json").read_text())
    assert isinstance(load_model_file(str(p)), Ensemble)


def test_dump_one_split():
    dump = [
        {
            "nodeid": 0,
            "split": "f1",
            "split_condition": 2.5,
            "yes": 1,
            "no": 2,
            "missing": 1,
            "children": [{"nodeid": 2, "leaf": 4.0}, {"nodeid": 1, "leaf": -1.0}],
        }
    ]
    e = import_gbdt_dump(dump, num_attributes=3, base_score=0.5)
    assert e.num_attributes == 3
    assert e.eval([0, 2.4999, 0]) == -0.5 and e.eval([0, 2.5, 0]) == 4.5


def test_dump_feature_names():
    dump = [{"nodeid": 0, "split": "bmi", "split_condition": 28, "yes": 1, "no": 2, "missing": 1,
             "children": [{"nodeid": 1, "leaf": 0.0}, {"nodeid": 2, "leaf": 1.0}]}]
    e = import_gbdt_dump(dump, feature_names=["age", "height", "bmi"], num_attributes=3)
    assert e.eval([0, 0, 30]) == 1.0
    with pytest.raises(UnsupportedFeature):
        import_gbdt_dump(dump)


def test_dump_attr_beyond_num_attributes():
    with pytest.raises(ModelFormatError):
        import_gbdt_dump(fixture("gbdt_handwritten.json"), num_attributes=2)


def test_handwritten_dump_matches_interpreter():
    dump = fixture("gbdt_handwritten.json")
    e = import_gbdt_dump(dump)
    rng = np.random.default_rng(1)
    for x in rng.uniform(-4, 6, size=(200, 3)):
        assert abs(e.eval(x) - interpret_dump(dump, x)) <= 1e-6


def test_redundant_split_collapsed():
    e = import_gbdt_dump(fixture("gbdt_handwritten.json"))
    t = e.trees[1]
    assert t.num_leaves == 2
    assert 99.0 not in t.leaf_values


def test_strict_import_rejects_missing_routing():
    with pytest.raises(UnsupportedFeature) as ei:
        import_gbdt_dump(fixture("gbdt_small.json"))
    assert ei.value.node_ids and "nodes:" in str(ei.value)


def test_categorical_rejected():
    with pytest.raises(UnsupportedFeature) as ei:
        import_gbdt_dump(fixture("gbdt_categorical.json"), ignore_missing=True)
    assert ei.value.node_ids == [1]


@pytest.mark.parametrize("name", ["gbdt_small", "gbdt_medium"])
def test_real_dumps_match_interpreter_and_learner(name):
    dump = fixture(f"{name}.json")
    pts = fixture(f"{name}_points.json")
    e = import_gbdt_dump(dump, ignore_missing=True)
    for x, margin in zip(pts["points"], pts["margins"]):
        assert abs(e.eval(x) - interpret_dump(dump, x)) <= 1e-6
        # the learner sums in float32
        assert abs(e.eval(x) - margin) <= 1e-5 * max(1.0, abs(margin))
    assert len(pts["points"]) >= 100
    assert math.isclose(pts["base_score_prob"], 0.5)


def test_dump_wrapper_with_base_score():
    doc = {"trees": fixture("gbdt_handwritten.json"), "base_score": 2.0}
    e = import_gbdt_dump(doc)
    assert e.base_score == 2.0
    assert abs(e.eval([0, 0, 0]) - interpret_dump(doc["trees"], [0, 0, 0], 2.0)) <= 1e-12
