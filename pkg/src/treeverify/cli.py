"""Command-line interface: ``treeverify run | compare | gen-tasks``.

Exit codes: 0 on any completed run (INFEASIBLE and TIMEOUT included),
2 for malformed input, 3 when a produced trace or result breaks an internal
invariant.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from typing import Any, Mapping, Sequence

import numpy as np

from . import constraints as cons
from .errors import Infeasible
from .ensemble import Box
from .graph_merge import MergeConfig, run_merge
from .model_io import ModelFormatError, UnsupportedFeature, load_model_file
from .oracle import TooManyConfigurations, exact_diff_max, exact_max, exact_min
from .search import (
    PairProblem,
    Problem,
    SearchConfig,
    _flip,
    extract_witness_arrays,
    run_search,
    run_search_two_instance,
)
from .tasks import (
    GenerationFailed,
    RobustnessQuery,
    compute_metrics,
    generate_random_task,
    robustness_search,
)
from .trace import BoundsTrace, InvariantViolation, Recorder, Status

MEMORY_ENV = "TREEVERIFY_MEMORY_MB"
DEFAULT_MEMORY_MB = 4096
KINDS = ("maximize", "minimize", "diff_maximize", "robustness", "stress", "random_tasks")
ALGORITHMS = ("veritas", "merge", "oracle")
CONFIG_KEYS = {
    "epsilon_start",
    "epsilon_step",
    "time_budget_s",
    "node_budget",
    "memory_budget_mb",
    "algorithm",
    "merge_L",
    "merge_max_steps",
    "seed",
    "oracle_limit",
}

EXIT_OK, EXIT_INPUT, EXIT_INVARIANT = 0, 2, 3


class TaskError(ValueError):
    pass


def result_schema() -> dict:
    text = resources.files("treeverify").joinpath("schemas/result.schema.json").read_text(encoding="utf-8")
    return json.loads(text)


# ---- task documents ----------------------------------------------------------


def _read_json(path: str) -> Any:
    try:
        with open(path, "rb") as f:
            return json.loads(f.read().decode("utf-8"))
    except OSError as e:
        raise TaskError(f"cannot read {path}: {e.strerror}") from None
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise TaskError(f"{path}: invalid JSON: {e}") from None


def _model(path: str, base_dir: str, multiclass: bool = False):
    full = path if os.path.isabs(path) else os.path.join(base_dir, path)
    if not os.path.exists(full):
        raise TaskError(f"model file not found: {full}")
    try:
        m = load_model_file(full)
    except (ModelFormatError, UnsupportedFeature) as e:
        raise TaskError(f"{full}: {e}") from None
    if multiclass != isinstance(m, list):
        raise TaskError(f"{full}: expected a {'multiclass' if multiclass else 'single'} model document")
    return m


def _constraint_list(docs, n: int, field: str):
    if docs is None:
        return [], None
    if not isinstance(docs, list):
        raise TaskError(f"'{field}' must be a list")
    single, joint = [], None
    for i, d in enumerate(docs):
        if not isinstance(d, Mapping):
            raise TaskError(f"{field}[{i}]: expected an object")
        try:
            c = cons.from_dict(d, n)
        except (cons.ConstraintError, TypeError, ValueError) as e:
            raise TaskError(f"{field}[{i}]: {e}") from None
        if isinstance(c, cons.DiffersOnly):
            joint = c
        else:
            single.append(c)
    return single, joint


def _combine(parts: Sequence[cons.Constraint]):
    if not parts:
        return None
    return parts[0] if len(parts) == 1 else cons.AllOf(parts)


def _memory_mb(config: Mapping) -> float:
    if "memory_budget_mb" in config:
        return float(config["memory_budget_mb"])
    env = os.environ.get(MEMORY_ENV)
    if env:
        try:
            return float(env)
        except ValueError:
            raise TaskError(f"{MEMORY_ENV} must be a number, got {env!r}") from None
    return DEFAULT_MEMORY_MB


def load_task(path: str, algorithm: str | None = None) -> dict:
    """Parse and validate a task file; model paths resolve relative to the task file.

    ``algorithm`` overrides the task's ``config.algorithm``.
    """
    doc = _read_json(path)
    if not isinstance(doc, Mapping):
        raise TaskError("task document must be an object")
    kind = doc.get("kind")
    if kind not in KINDS:
        raise TaskError(f"unknown task kind {kind!r}; expected one of {', '.join(KINDS)}")
    config = doc.get("config", {})
    if not isinstance(config, Mapping):
        raise TaskError("'config' must be an object")
    unknown = set(config) - CONFIG_KEYS
    if unknown:
        raise TaskError(f"unknown config keys: {', '.join(sorted(unknown))}")
    algorithm = algorithm or config.get("algorithm", "veritas")
    if algorithm not in ALGORITHMS:
        raise TaskError(f"unknown algorithm {algorithm!r}")
    base_dir = os.path.dirname(os.path.abspath(path))
    task: dict[str, Any] = {"kind": kind, "algorithm": algorithm, "doc": doc}
    try:
        mem = int(_memory_mb(config) * 2**20)
        task["search"] = SearchConfig(
            epsilon_start=float(config.get("epsilon_start", 0.5)),
            epsilon_step=float(config.get("epsilon_step", 0.1)),
            time_budget=config.get("time_budget_s"),
            node_budget=config.get("node_budget"),
            memory_budget=mem,
        )
        task["merge"] = MergeConfig(
            L=int(config.get("merge_L", 2)),
            time_budget=config.get("time_budget_s"),
            memory_budget=mem,
            max_steps=config.get("merge_max_steps"),
        )
    except (TypeError, ValueError) as e:
        raise TaskError(f"config: {e}") from None
    task["oracle_limit"] = int(config.get("oracle_limit", 10**7))
    task["seed"] = int(config.get("seed", 0))

    if kind == "diff_maximize":
        models = doc.get("models")
        if not isinstance(models, list) or len(models) != 2:
            raise TaskError("diff_maximize needs 'models': [first, second]")
        t1, t2 = (_model(m, base_dir) for m in models)
        if t1.num_attributes != t2.num_attributes:
            raise TaskError("both models of diff_maximize must share num_attributes")
        n = t1.num_attributes
        shared, joint = _constraint_list(doc.get("constraints"), n, "constraints")
        c1, j1 = _constraint_list(doc.get("constraints1"), n, "constraints1")
        c2, j2 = _constraint_list(doc.get("constraints2"), n, "constraints2")
        if j1 is not None or j2 is not None:
            raise TaskError("differs_only belongs in 'constraints', not in a per-instance list")
        task.update(t1=t1, t2=t2, constraint1=_combine(shared + c1), constraint2=_combine(shared + c2), joint=joint)
    elif kind == "robustness":
        if "model" not in doc:
            raise TaskError("robustness needs 'model' (a multiclass document)")
        models = _model(doc["model"], base_dir, multiclass=True)
        for key in ("x", "source", "target"):
            if key not in doc:
                raise TaskError(f"robustness needs '{key}'")
        x = doc["x"]
        if not isinstance(x, list) or len(x) != models[0].num_attributes:
            raise TaskError(f"'x' must list {models[0].num_attributes} values")
        try:
            task["query"] = RobustnessQuery(
                models,
                [float(v) for v in x],
                int(doc["source"]),
                int(doc["target"]),
                float(doc.get("delta_start", 20.0)),
                int(doc.get("steps", 10)),
                bool(doc.get("integer_grid", False)),
            )
        except (TypeError, ValueError) as e:
            raise TaskError(f"robustness: {e}") from None
        for label in (task["query"].source, task["query"].target):
            if not 0 <= label < len(models):
                raise TaskError(f"class label {label} outside [0, {len(models)})")
    else:
        if "model" not in doc:
            raise TaskError(f"{kind} needs 'model'")
        ens = _model(doc["model"], base_dir)
        task["ensemble"] = ens
        if kind == "stress":
            task["constraint"] = None
        else:
            single, joint = _constraint_list(doc.get("constraints"), ens.num_attributes, "constraints")
            if joint is not None:
                raise TaskError("differs_only only applies to diff_maximize")
            task["constraint"] = _combine(single)
        if kind == "random_tasks":
            try:
                task["count"] = int(doc.get("count", 1))
                task["fractions"] = [float(f) for f in doc.get("fractions", [0.5])]
            except (TypeError, ValueError) as e:
                raise TaskError(f"random_tasks: {e}") from None
            if not task["fractions"]:
                raise TaskError("random_tasks needs at least one fraction")
    return task


# ---- solving -----------------------------------------------------------------


def _infeasible_trace() -> BoundsTrace:
    return Recorder(BoundsTrace()).finish(Status.INFEASIBLE)


def _exact_trace(value: float, witness) -> BoundsTrace:
    trace = BoundsTrace()
    rec = Recorder(trace)
    rec.update(value, value, witness, force=True)
    return rec.finish(Status.EXACT)


def _oracle_witness(box: Box, n: int, constraint) -> np.ndarray:
    lo, hi = box.to_arrays(n)
    x = extract_witness_arrays(lo, hi)
    if constraint is not None:
        constraint.complete_witness(x, lo, hi)
    return x


def _merge_prune(constraint):
    """Merge only handles constraints expressible as a box; returns (feasible, prune)."""
    if constraint is None:
        return True, None
    if not constraint.prune_only:
        raise TaskError("merge only supports constraints expressible as a box (box, linf_ball)")
    pb = constraint.prune_box()
    return pb is not None, pb


def solve(task: dict, algorithm: str, ensemble=None, constraint=None) -> BoundsTrace:
    """Run one maximize/minimize/diff_maximize/stress task with the given algorithm."""
    kind = task["kind"]
    ens = ensemble if ensemble is not None else task.get("ensemble")
    constraint = constraint if constraint is not None else task.get("constraint")
    if kind == "diff_maximize":
        return _solve_diff(task, algorithm)
    sense = "min" if kind == "minimize" else "max"
    if algorithm == "veritas":
        return run_search(Problem(ens, constraint=constraint, sense=sense), task["search"])
    if algorithm == "merge":
        feasible, prune = _merge_prune(constraint)
        if not feasible:
            return _infeasible_trace()
        if sense == "min":
            return _flip(run_merge(ens.negate(), prune, task["merge"]))
        return run_merge(ens, prune, task["merge"])
    fn = exact_min if sense == "min" else exact_max
    try:
        value, cfg = fn(ens, constraint, None, task["oracle_limit"])
    except Infeasible:
        return _infeasible_trace()
    return _exact_trace(value, _oracle_witness(cfg.box, ens.num_attributes, constraint))


def _solve_diff(task: dict, algorithm: str) -> BoundsTrace:
    t1, t2, joint = task["t1"], task["t2"], task["joint"]
    c1, c2 = task["constraint1"], task["constraint2"]
    n = t1.num_attributes
    if algorithm == "veritas":
        return run_search_two_instance(PairProblem(t1, t2, None, None, c1, c2, joint), task["search"])
    if algorithm == "merge":
        if joint is None or joint.attrs:
            raise TaskError("merge handles diff_maximize only when both instances coincide (differs_only with no attrs)")
        ok1, p1 = _merge_prune(c1)
        ok2, p2 = _merge_prune(c2)
        prune = (p1 or Box()).intersect(p2 or Box()) if ok1 and ok2 else None
        if prune is None:
            return _infeasible_trace()
        return run_merge(t2.concat(t1.negate()), prune, task["merge"])
    try:
        value, (a, b) = exact_diff_max(t1, t2, joint, c1, c2, limit=task["oracle_limit"])
    except Infeasible:
        return _infeasible_trace()
    lo1, hi1 = a.box.to_arrays(n)
    lo2, hi2 = b.box.to_arrays(n)
    x1, x2 = _oracle_witness(a.box, n, c1), _oracle_witness(b.box, n, c2)
    if joint is not None:
        joint.complete_witness_pair(x1, x2, lo1, hi1, lo2, hi2)
    return _exact_trace(value, (x1, x2))


# ---- output ------------------------------------------------------------------


def _num(v: float):
    v = float(v)
    if math.isnan(v):
        raise InvariantViolation("NaN bound")
    if math.isinf(v):
        return "Infinity" if v > 0 else "-Infinity"
    return v


def _example(x):
    return [_num(v) for v in np.asarray(x, dtype=float)]


def _witness(w):
    if w is None:
        return None
    if isinstance(w, tuple):
        return [_example(x) for x in w]
    return _example(w)


def _csv_value(v: float) -> str:
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return repr(float(v))


def write_trace_csv(trace: BoundsTrace, path: str) -> None:
    """One row per bound change; entries sharing a timestamp collapse into the last of them."""
    rows: list[tuple[float, float, float]] = []
    for e in trace.entries:
        if rows and e.t <= rows[-1][0]:
            rows[-1] = (rows[-1][0], e.upper, e.lower)
        else:
            rows.append((e.t, e.upper, e.lower))
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["t_seconds", "upper", "lower"])
        for t, u, lo in rows:
            w.writerow([repr(float(t)), _csv_value(u), _csv_value(lo)])


def read_trace_csv(path: str) -> list[tuple[float, float, float]]:
    with open(path, newline="", encoding="utf-8") as f:
        r = csv.reader(f)
        header = next(r)
        if header != ["t_seconds", "upper", "lower"]:
            raise ValueError(f"unexpected trace header {header}")
        return [tuple(float(v) for v in row) for row in r]


def check_trace_rows(rows) -> None:
    for prev, cur in zip(rows, rows[1:]):
        if not cur[0] > prev[0]:
            raise InvariantViolation("trace rows are not strictly increasing in time")
        if cur[1] > prev[1] or cur[2] < prev[2]:
            raise InvariantViolation("trace rows are not monotone")
    for t, u, lo in rows:
        if lo > u:
            raise InvariantViolation(f"lower {lo} above upper {u} at t={t}")


def _run_doc(algorithm: str, trace: BoundsTrace, trace_file: str) -> dict:
    trace.check()
    return {
        "algorithm": algorithm,
        "status": trace.status.value,
        "upper": _num(trace.upper),
        "lower": _num(trace.lower),
        "witness": _witness(trace.witness),
        "steps": int(trace.steps),
        "trace": trace_file,
    }


def _metrics_doc(m) -> dict:
    def gap(g):
        return None if g is None else _num(g)

    return {
        "ttb": m.ttb,
        "gap_ours": gap(m.gap_ours),
        "gap_baseline": gap(m.gap_baseline),
        "exact_ours": m.exact_ours,
        "exact_baseline": m.exact_baseline,
        "degenerate": m.degenerate,
    }


def _write_json(doc: Any, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(doc, f, indent=2, sort_keys=True, allow_nan=False)
        f.write("\n")


def _validate(doc: dict) -> None:
    import jsonschema

    try:
        jsonschema.validate(doc, result_schema())
    except jsonschema.ValidationError as e:
        raise InvariantViolation(f"result does not match its schema: {e.message}") from None


def _robustness_doc(task: dict, algorithm: str) -> dict:
    if algorithm == "oracle":
        raise TaskError("robustness runs with veritas or merge")
    res = robustness_search(
        task["query"], task["search"], "merge" if algorithm == "merge" else "search", task["merge"]
    )
    return {
        "kind": "robustness",
        "algorithm": algorithm,
        "delta_lower": res.delta_lower,
        "proven_exact": res.proven_exact,
        "adversarial_witness": None if res.adversarial_witness is None else _example(res.adversarial_witness),
        "witness_delta": res.witness_delta,
        "free_delta": res.free_delta,
        "per_step": [
            {**s, "upper": _num(s["upper"]), "lower": _num(s["lower"])} for s in res.per_step
        ],
    }


def _random_tasks_doc(task: dict, algorithm: str, out_dir: str) -> dict:
    ens = task["ensemble"]
    rows = []
    for i in range(task["count"]):
        frac = task["fractions"][i % len(task["fractions"])]
        seed = task["seed"] + i
        entry: dict[str, Any] = {"index": i, "target_fraction": frac, "seed": seed}
        try:
            spec = generate_random_task(ens, frac, seed)
        except (GenerationFailed, ValueError) as e:
            entry["error"] = str(e)
            rows.append(entry)
            continue
        constraint = cons.BoxConstraint(spec.box)
        if task["constraint"] is not None:
            constraint = cons.AllOf([task["constraint"], constraint])
        trace = solve({**task, "kind": "maximize"}, algorithm, ens, constraint)
        name = f"trace_{i:04d}.csv"
        write_trace_csv(trace, os.path.join(out_dir, name))
        entry.update(achieved_fraction=spec.achieved_fraction, **_run_doc(algorithm, trace, name))
        rows.append(entry)
    return {"kind": "random_tasks", "algorithm": algorithm, "tasks": rows}


def cmd_run(task_file: str, out_dir: str, algorithm: str | None = None) -> int:
    task = load_task(task_file, algorithm)
    os.makedirs(out_dir, exist_ok=True)
    kind, algorithm = task["kind"], task["algorithm"]
    if kind == "robustness":
        doc = _robustness_doc(task, algorithm)
    elif kind == "random_tasks":
        doc = _random_tasks_doc(task, algorithm, out_dir)
    else:
        trace = solve(task, algorithm)
        write_trace_csv(trace, os.path.join(out_dir, "trace.csv"))
        doc = {"kind": kind, **_run_doc(algorithm, trace, "trace.csv")}
    _validate(doc)
    _write_json(doc, os.path.join(out_dir, "result.json"))
    return EXIT_OK


def cmd_compare(task_file: str, out_dir: str) -> int:
    task = load_task(task_file)
    if task["kind"] not in ("maximize", "minimize", "diff_maximize", "stress"):
        raise TaskError(f"compare does not apply to {task['kind']} tasks")
    os.makedirs(out_dir, exist_ok=True)
    traces = {a: solve(task, a) for a in ("veritas", "merge")}
    runs = {}
    for a, tr in traces.items():
        name = f"trace_{a}.csv"
        write_trace_csv(tr, os.path.join(out_dir, name))
        runs[a] = _run_doc(a, tr, name)
    metrics = _metrics_doc(compute_metrics(traces["veritas"], traces["merge"]))
    doc = {"kind": task["kind"], "runs": runs, "metrics": metrics}
    _validate(doc)
    _write_json(doc, os.path.join(out_dir, "result.json"))
    _write_json(metrics, os.path.join(out_dir, "metrics.json"))
    return EXIT_OK


def _interval_doc(lo: float, hi: float) -> list:
    return [None if lo == -math.inf else lo, None if hi == math.inf else hi]


def cmd_gen_tasks(model: str, count: int, fractions: Sequence[float], seed: int, out_dir: str, jobs: int = 1) -> int:
    if count < 0:
        raise TaskError("count must be non-negative")
    if not fractions:
        raise TaskError("at least one fraction is required")
    ens = _model(model, os.getcwd())
    os.makedirs(out_dir, exist_ok=True)
    model_ref = os.path.relpath(os.path.abspath(model), os.path.abspath(out_dir))

    def make(i: int):
        frac = fractions[i % len(fractions)]
        s = seed + i
        try:
            spec = generate_random_task(ens, frac, s)
        except (GenerationFailed, ValueError) as e:
            return i, None, {"index": i, "target_fraction": frac, "seed": s, "error": str(e)}
        doc = {
            "kind": "maximize",
            "model": model_ref,
            "constraints": [
                {"kind": "box", "intervals": {str(a): _interval_doc(lo, hi) for a, (lo, hi) in spec.box.items()}}
            ],
            "config": {"seed": s},
            "meta": {"target_fraction": frac, "achieved_fraction": spec.achieved_fraction},
        }
        return i, doc, None

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        results = list(pool.map(make, range(count)))
    failures = []
    for i, doc, err in results:
        if err is not None:
            failures.append(err)
            print(f"task {i}: generation failed: {err['error']}", file=sys.stderr)
        else:
            _write_json(doc, os.path.join(out_dir, f"task_{i:04d}.json"))
    _write_json({"count": count, "failures": failures}, os.path.join(out_dir, "manifest.json"))
    return EXIT_OK


def _fractions(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad fraction list {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="treeverify", description="Anytime bounds on tree ensemble outputs.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one task")
    r.add_argument("task")
    r.add_argument("--out", required=True)
    r.add_argument("--algorithm", choices=ALGORITHMS, help="override config.algorithm")
    c = sub.add_parser("compare", help="run the search and Merge under the same budgets")
    c.add_argument("task")
    c.add_argument("--out", required=True)
    g = sub.add_parser("gen-tasks", help="generate random box-constrained maximize tasks")
    g.add_argument("--model", required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--fractions", type=_fractions, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--jobs", type=int, default=1)
    sub.add_parser("schema", help="print the result.json schema")
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_INPUT if e.code not in (0, None) else EXIT_OK
    try:
        if args.command == "run":
            return cmd_run(args.task, args.out, args.algorithm)
        if args.command == "compare":
            return cmd_compare(args.task, args.out)
        if args.command == "gen-tasks":
            return cmd_gen_tasks(args.model, args.count, args.fractions, args.seed, args.out, args.jobs)
        json.dump(result_schema(), sys.stdout, indent=2)
        sys.stdout.write("\n")
        return EXIT_OK
    except TaskError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except TooManyConfigurations as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except InvariantViolation as e:
        print(f"invariant violation: {e}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
