"""Model serialization: the canonical JSON format and an importer for GBDT JSON tree dumps.

Canonical document::

    {"version": 1, "num_attributes": 3, "base_score": 0.0,
     "trees": [{"split": {"attr": 0, "tau": 2.0}, "left": {"leaf": 1.0}, "right": {"leaf": -1.0}}]}

A multiclass (one-vs-all) document wraps several canonical ones as ``{"classes": [...]}``.
Floats are written with ``repr`` precision, so a round trip is exact.
"""

from __future__ import annotations

import json
import math
import re
from typing import Any, Mapping, Sequence

from .ensemble import UNBOUNDED, Ensemble, Interval, Leaf, Node, Split, Tree

FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    """Malformed model document; the message starts with the JSON path of the offending value."""

    def __init__(self, path: str, msg: str):
        super().__init__(f"{path}: {msg}")
        self.path = path


class UnsupportedFeature(ValueError):
    def __init__(self, msg: str, node_ids: Sequence[Any] = ()):
        ids = ", ".join(str(i) for i in node_ids)
        super().__init__(f"{msg} (nodes: {ids})" if ids else msg)
        self.node_ids = list(node_ids)


def _load(data: bytes | str | Mapping) -> Any:
    if isinstance(data, Mapping) or isinstance(data, list):
        return data
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    try:
        return json.loads(data)
    except json.JSONDecodeError as e:
        raise ModelFormatError("$", f"invalid JSON: {e}") from None


def _number(v, path: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ModelFormatError(path, f"expected a number, got {type(v).__name__}")
    return float(v)


def _integer(v, path: str) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ModelFormatError(path, f"expected an integer, got {type(v).__name__}")
    return v


def _node_from_doc(doc, path: str, n: int) -> Node:
    if not isinstance(doc, Mapping):
        raise ModelFormatError(path, "expected a node object")
    if "leaf" in doc:
        extra = set(doc) - {"leaf"}
        if extra:
            raise ModelFormatError(f"{path}.{sorted(extra)[0]}", "unexpected field on a leaf node")
        return Leaf(_number(doc["leaf"], f"{path}.leaf"))
    if "split" not in doc:
        raise ModelFormatError(path, "node needs either 'leaf' or 'split'")
    extra = set(doc) - {"split", "left", "right"}
    if extra:
        raise ModelFormatError(f"{path}.{sorted(extra)[0]}", "unexpected field on a split node")
    sp = doc["split"]
    if not isinstance(sp, Mapping) or set(sp) != {"attr", "tau"}:
        raise ModelFormatError(f"{path}.split", "expected {'attr': int, 'tau': number}")
    attr = _integer(sp["attr"], f"{path}.split.attr")
    if not 0 <= attr < n:
        raise ModelFormatError(f"{path}.split.attr", f"attribute {attr} outside [0, {n})")
    tau = _number(sp["tau"], f"{path}.split.tau")
    if not math.isfinite(tau):
        raise ModelFormatError(f"{path}.split.tau", "threshold must be finite")
    for side in ("left", "right"):
        if side not in doc:
            raise ModelFormatError(path, f"split node is missing '{side}'")
    return Split(attr, tau, _node_from_doc(doc["left"], f"{path}.left", n), _node_from_doc(doc["right"], f"{path}.right", n))


def model_from_doc(doc: Any, path: str = "$") -> Ensemble:
    if not isinstance(doc, Mapping):
        raise ModelFormatError(path, "expected a model object")
    if "version" not in doc:
        raise ModelFormatError(path, "missing 'version'")
    version = doc["version"]
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"{path}.version", f"unsupported model format version {version!r} (supported: {FORMAT_VERSION})")
    for key in ("num_attributes", "trees"):
        if key not in doc:
            raise ModelFormatError(path, f"missing '{key}'")
    n = _integer(doc["num_attributes"], f"{path}.num_attributes")
    if n < 0:
        raise ModelFormatError(f"{path}.num_attributes", "must be non-negative")
    base = _number(doc.get("base_score", 0.0), f"{path}.base_score")
    if not isinstance(doc["trees"], list):
        raise ModelFormatError(f"{path}.trees", "expected a list")
    trees = []
    for i, t in enumerate(doc["trees"]):
        tpath = f"{path}.trees[{i}]"
        root = _node_from_doc(t, tpath, n)
        try:
            trees.append(Tree(root))
        except ValueError as e:
            raise ModelFormatError(tpath, str(e)) from None
    return Ensemble(trees, n, base)


def _node_to_doc(node: Node) -> dict:
    if isinstance(node, Leaf):
        return {"leaf": node.value}
    return {
        "split": {"attr": node.attr, "tau": node.threshold},
        "left": _node_to_doc(node.left),
        "right": _node_to_doc(node.right),
    }


def model_to_doc(ens: Ensemble) -> dict:
    return {
        "version": FORMAT_VERSION,
        "num_attributes": ens.num_attributes,
        "base_score": ens.base_score,
        "trees": [_node_to_doc(t.root) for t in ens.trees],
    }


def parse_model(data: bytes | str | Mapping) -> Ensemble:
    return model_from_doc(_load(data))


def serialize_model(ens: Ensemble) -> bytes:
    # json writes floats with repr, which round-trips exactly
    return json.dumps(model_to_doc(ens), allow_nan=False).encode("utf-8")


def parse_multiclass(data: bytes | str | Mapping) -> list[Ensemble]:
    doc = _load(data)
    if not isinstance(doc, Mapping) or not isinstance(doc.get("classes"), list):
        raise ModelFormatError("$", "expected {'classes': [model, ...]}")
    models = [model_from_doc(c, f"$.classes[{i}]") for i, c in enumerate(doc["classes"])]
    if not models:
        raise ModelFormatError("$.classes", "needs at least one class model")
    n = models[0].num_attributes
    for i, m in enumerate(models):
        if m.num_attributes != n:
            raise ModelFormatError(f"$.classes[{i}].num_attributes", f"{m.num_attributes} differs from {n}")
    return models


def serialize_multiclass(models: Sequence[Ensemble]) -> bytes:
    return json.dumps({"classes": [model_to_doc(m) for m in models]}, allow_nan=False).encode("utf-8")


def load_model_file(path: str):
    """Read a canonical, multiclass or GBDT-dump model file; returns an Ensemble or a list of them."""
    with open(path, "rb") as f:
        doc = _load(f.read())
    if isinstance(doc, list):
        return import_gbdt_dump(doc)
    if isinstance(doc, Mapping) and "classes" in doc:
        return parse_multiclass(doc)
    return model_from_doc(doc)


_FEATURE = re.compile(r"f(\d+)$")


def _dump_attr(name, feature_names: Sequence[str] | None, nid) -> int:
    if isinstance(name, int) and not isinstance(name, bool):
        return name
    if feature_names is not None and name in feature_names:
        return list(feature_names).index(name)
    m = _FEATURE.match(str(name))
    if m is None:
        raise UnsupportedFeature(f"cannot map feature name {name!r} to an attribute index", [nid])
    return int(m.group(1))


def _dump_tree(doc: Mapping, feature_names, tree_index: int, ignore_missing: bool) -> tuple[Node, int]:
    """Convert one dumped tree; returns the root and the largest attribute index used."""
    bad: list = []
    max_attr = -1

    def check(node, where):
        if not isinstance(node, Mapping):
            bad.append(where)
            return
        nid = node.get("nodeid", where)
        if "leaf" in node:
            return
        if "split" not in node or "children" not in node:
            bad.append(nid)
            return
        if "split_condition" not in node or "categories" in node or node.get("split_type") == "categorical":
            bad.append(nid)
        elif not ignore_missing and "missing" in node and node["missing"] != node.get("yes"):
            bad.append(nid)
        for k, c in enumerate(node.get("children", [])):
            check(c, f"{where}/{k}")

    check(doc, f"tree{tree_index}")
    if bad:
        raise UnsupportedFeature(f"tree {tree_index} has unsupported nodes (categorical, non-'yes' missing routing or unknown kind)", bad)

    def build(node, path: dict[int, Interval]) -> Node:
        nonlocal max_attr
        if "leaf" in node:
            return Leaf(float(node["leaf"]))
        kids = {c["nodeid"]: c for c in node["children"]} if all("nodeid" in c for c in node["children"]) else None
        if kids is not None and "yes" in node and "no" in node:
            yes, no = kids[node["yes"]], kids[node["no"]]
        else:
            yes, no = node["children"][0], node["children"][1]
        attr = _dump_attr(node["split"], feature_names, node.get("nodeid"))
        max_attr = max(max_attr, attr)
        tau = float(node["split_condition"])
        lo, hi = path.get(attr, UNBOUNDED)
        # dumps may repeat a test already decided on the path; keep only the live branch
        if tau <= lo:
            return build(no, path)
        if tau >= hi:
            return build(yes, path)
        left = build(yes, {**path, attr: Interval(lo, tau)})
        right = build(no, {**path, attr: Interval(tau, hi)})
        return Split(attr, tau, left, right)

    return build(doc, {}), max_attr


def import_gbdt_dump(
    data: bytes | str | list,
    num_attributes: int | None = None,
    base_score: float = 0.0,
    feature_names: Sequence[str] | None = None,
    ignore_missing: bool = False,
) -> Ensemble:
    """Build an Ensemble from a JSON tree dump (one object per tree).

    The dump's "yes" branch, taken when ``x < split_condition``, becomes the
    left branch. Leaf values are margins; no link function is applied.

    Nodes that send missing values anywhere but the "yes" branch are refused,
    since examples here never carry missing values and the routing cannot be
    represented. ``ignore_missing=True`` drops that routing instead, which is
    exact for inputs without missing values.
    """
    doc = _load(data)
    if isinstance(doc, Mapping) and "trees" in doc:
        base_score = float(doc.get("base_score", base_score))
        doc = doc["trees"]
    if not isinstance(doc, list):
        raise ModelFormatError("$", "expected a list of dumped trees")
    roots, max_attr = [], -1
    for i, t in enumerate(doc):
        root, m = _dump_tree(t, feature_names, i, ignore_missing)
        roots.append(root)
        max_attr = max(max_attr, m)
    n = max_attr + 1 if num_attributes is None else num_attributes
    if max_attr >= n:
        raise ModelFormatError("$", f"dump uses attribute {max_attr} but num_attributes is {n}")
    return Ensemble([Tree(r) for r in roots], n, base_score)
