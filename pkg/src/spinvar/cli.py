"""Problem files, run orchestration, and result emission.

A problem file is a JSON document:

    {
      "version": 1,
      "n": 2,
      "mixture": [[2, [0.4, 0.3]]],
      "h": [0.1, 0.0],
      "Q": [1.0, 0.25, 1.0],
      "solve": {"r_max": 2, "seed": 0},
      "commands": ["gap"],
      "path": {"x": [0.0, 1.0], "levels": [[0.2, 0.05, 0.2]], "lambda": [...]}
    }

``Q`` and every matrix in ``path`` are row-major upper triangles (diagonal
included).  Unknown keys are rejected; validation reports every problem it
finds, not just the first.  Exit codes: 0 success, 2 validation, 3
infeasible, 4 non-convergence (results still emitted best-effort).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, fields

import numpy as np

from . import battery as battery_mod
from . import continuous as continuous_mod
from .errors import (
    DegenerateIncrement,
    InfeasibleMultiplier,
    InfeasiblePath,
    NoFeasibleStart,
    NotPositiveDefinite,
    ParseError,
    SpinvarError,
    ValidationError,
)
from .functionals import eval_barrier, eval_cs, eval_parisi
from .matcore import MixtureSpec, check_constraint
from .optimize import SolveOptions, duality_gap, search
from .path import DiscretePath

TOOL_VERSION = "spinvar 0.1.0"
FORMAT_HEADER = "# spinvar-result v1"
COMMANDS = ("eval", "minimize", "gap", "verify", "continuous", "probe")
_SPEC_KEYS = {"version", "n", "mixture", "h", "Q", "solve", "commands", "path"}
_PATH_KEYS = {"x", "levels", "lambda"}
_SOLVE_KEYS = {f.name: f for f in fields(SolveOptions)}


def upper_to_matrix(values, n: int) -> np.ndarray:
    """Row-major upper triangle (diagonal included) to a full symmetric matrix."""
    values = list(values)
    expect = n * (n + 1) // 2
    if len(values) != expect:
        raise ValidationError(f"upper triangle for n={n} needs {expect} entries, got {len(values)}")
    m = np.zeros((n, n))
    it = iter(values)
    for i in range(n):
        for j in range(i, n):
            m[i, j] = m[j, i] = float(next(it))
    return m


def matrix_to_upper(m: np.ndarray) -> list[float]:
    n = m.shape[0]
    return [float(m[i, j]) for i in range(n) for j in range(i, n)]


@dataclass
class ProblemSpec:
    n: int
    mixture: MixtureSpec
    constraint: np.ndarray
    solve: SolveOptions
    commands: tuple[str, ...]
    path: DiscretePath | None
    lam: np.ndarray | None
    raw: dict


@dataclass
class ResultRecord:
    command: str
    inputs_digest: str
    outputs: dict
    wall_time: float
    tool_version: str
    seed: int


def load_spec(path: str) -> ProblemSpec:
    """Parse and fully validate a problem file, collecting every error."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ParseError("problem file must be a JSON object")
    return build_spec(raw)


def build_spec(raw: dict) -> ProblemSpec:
    problems = []
    unknown = set(raw) - _SPEC_KEYS
    if unknown:
        problems.append(f"unknown keys: {sorted(unknown)}")
    if raw.get("version") != 1:
        problems.append("version must be 1")
    n = raw.get("n")
    if not isinstance(n, int) or n < 1:
        problems.append("n must be a positive integer")
        n = 1

    mixture = None
    terms = raw.get("mixture", [])
    h = raw.get("h", [0.0] * n)
    try:
        mixture = MixtureSpec(n=n, terms=tuple((p, np.asarray(b, dtype=float)) for p, b in terms), h=h)
    except (ValidationError, TypeError, ValueError) as exc:
        msgs = exc.problems if isinstance(exc, ValidationError) else [str(exc)]
        problems.extend(f"mixture: {m}" for m in msgs)

    constraint = None
    if "Q" not in raw:
        problems.append("Q is required")
    else:
        try:
            constraint = upper_to_matrix(raw["Q"], n)
            problems.extend(f"Q: {m}" for m in check_constraint(constraint))
        except (ValidationError, TypeError) as exc:
            problems.append(f"Q: {exc}")

    solve = SolveOptions()
    solve_raw = raw.get("solve", {})
    if not isinstance(solve_raw, dict):
        problems.append("solve must be an object")
    else:
        unknown = set(solve_raw) - set(_SOLVE_KEYS)
        if unknown:
            problems.append(f"solve: unknown keys {sorted(unknown)}")
        else:
            try:
                solve = _options_from(solve_raw)
            except (ValidationError, TypeError, ValueError) as exc:
                msgs = exc.problems if isinstance(exc, ValidationError) else [str(exc)]
                problems.extend(f"solve: {m}" for m in msgs)

    commands = tuple(raw.get("commands", ()))
    for c in commands:
        if c not in COMMANDS:
            problems.append(f"unknown command {c!r}")

    parsed_path = None
    lam = None
    if "path" in raw:
        p = raw["path"]
        if not isinstance(p, dict) or set(p) - _PATH_KEYS:
            problems.append(f"path: keys must be among {sorted(_PATH_KEYS)}")
        else:
            try:
                x = tuple(float(v) for v in p.get("x", ()))
                levels = [upper_to_matrix(u, n) for u in p.get("levels", ())]
                if constraint is not None and len(x) == len(levels) + 1:
                    parsed_path = DiscretePath(x, tuple(levels) + (constraint,))
                    from .path import validate as validate_path

                    problems.extend(f"path: {m}" for m in validate_path(parsed_path))
                else:
                    problems.append("path: need len(x) == len(levels) + 1 (the constraint is implicit)")
                if "lambda" in p:
                    lam = upper_to_matrix(p["lambda"], n)
            except (ValidationError, TypeError, ValueError) as exc:
                problems.append(f"path: {exc}")

    if problems:
        raise ValidationError(problems)
    return ProblemSpec(
        n=n,
        mixture=mixture,
        constraint=constraint,
        solve=solve,
        commands=commands,
        path=parsed_path,
        lam=lam,
        raw=raw,
    )


def _options_from(data: dict) -> SolveOptions:
    kwargs = {}
    for key, value in data.items():
        if key == "eps_schedule":
            kwargs[key] = tuple(float(v) for v in value)
        elif key == "armijo":
            kwargs[key] = tuple(float(v) for v in value)
        elif key in ("max_iters", "x_grid", "r_max", "seed"):
            kwargs[key] = int(value)
        else:
            kwargs[key] = float(value)
    return SolveOptions(**kwargs)


def _digest(raw: dict, command: str, seed: int, overrides: dict) -> str:
    blob = json.dumps(
        {"spec": raw, "command": command, "seed": seed, "overrides": overrides},
        sort_keys=True,
    ).encode()
    return hashlib.sha256(blob).hexdigest()


def _fmt(value):
    if isinstance(value, float):
        return f"{value:.17g}"
    if isinstance(value, (list, tuple)):
        return [_fmt(v) for v in value]
    if isinstance(value, dict):
        return {k: _fmt(v) for k, v in value.items()}
    return value


def _path_payload(path: DiscretePath) -> dict:
    return {
        "x": list(path.x),
        "levels": [matrix_to_upper(path.level(k)) for k in range(1, path.r)],
    }


def _search_payload(result) -> dict:
    return {
        "r": result.r,
        "x": list(result.x),
        "value": result.value,
        "value_extrapolated": result.best.value_extrapolated,
        "converged": result.best.converged,
        "argmin": _path_payload(result.best.path),
        "lambda": None if result.best.lam is None else matrix_to_upper(result.best.lam),
    }


def run(command: str, spec: ProblemSpec, flags=None) -> ResultRecord:
    """Dispatch one command; returns the record (traces live in outputs)."""
    flags = flags or {}
    t0 = time.perf_counter()
    opts = spec.solve
    outputs: dict = {}
    if command == "eval":
        if spec.path is None:
            raise ValidationError("eval needs an explicit path in the problem file")
        outputs["barrier"] = eval_barrier(spec.path)
        if spec.path.r >= 2:
            outputs["cs"] = eval_cs(spec.path, spec.mixture)
        if spec.lam is not None:
            outputs["parisi"] = eval_parisi(spec.lam, spec.path, spec.mixture)
    elif command == "minimize":
        kind = flags.get("kind", "cs")
        result = search(kind, spec.mixture, spec.constraint, opts)
        outputs[f"min_{kind}"] = result.value
        outputs["detail"] = {"kind": kind, **_search_payload(result)}
        outputs["trace"] = [row.as_tuple() for row in result.best.trace]
        outputs["converged"] = result.best.converged
    elif command == "gap":
        report = duality_gap(spec.mixture, spec.constraint, opts)
        outputs.update(
            min_parisi=report.min_parisi,
            min_cs=report.min_cs,
            gap=report.gap,
            beta2_delta_applied=report.beta2_delta_applied,
            continuity_band=report.continuity_band,
            argmin_parisi=_search_payload(report.argmin_parisi),
            argmin_cs=_search_payload(report.argmin_cs),
            eps_trace=report.eps_trace,
        )
        outputs["trace"] = [row.as_tuple() for row in report.argmin_cs.best.trace]
        outputs["converged"] = (
            report.argmin_parisi.best.converged and report.argmin_cs.best.converged
        )
    elif command == "verify":
        results = battery_mod.run_battery()
        outputs["checks"] = [
            {"name": c.name, "passed": bool(c.passed), "count": int(c.checks), "worst": float(c.worst)}
            for c in results
        ]
        outputs["all_passed"] = all(c.passed for c in results)
    elif command == "continuous":
        source = spec.path
        if source is None:
            source = search("cs", spec.mixture, spec.constraint, opts).best.path
        cdf, phi = continuous_mod.from_discrete(source)
        value_c = continuous_mod.eval_cs_continuous(cdf, phi, spec.mixture)
        box = continuous_mod.feasible_box(spec.mixture, spec.constraint)
        support = continuous_mod.support_check(cdf, phi, spec.mixture)
        outputs.update(
            cs_discrete=eval_cs(source, spec.mixture),
            cs_continuous=value_c,
            box_T=box.T,
            box_L=box.L,
            t_x=cdf.t_x,
            atoms=[
                {"t": a.t, "mass": a.mass, "condition": a.condition, "flagged": a.flagged}
                for a in support.atoms
            ],
            flagged_atoms=len(support.flagged),
        )
    elif command == "probe":
        base = spec.path
        if base is None:
            base = search("cs", spec.mixture, spec.constraint, opts).best.path
        box = continuous_mod.feasible_box(spec.mixture, spec.constraint)
        rng = np.random.default_rng(opts.seed)
        pairs = []
        for _ in range(8):
            jitter = rng.uniform(0.9, 1.0)
            levels = [jitter * m for m in base.free_levels()]
            pairs.append(continuous_mod.from_discrete(base.with_levels(levels)))
        empirical, bound = continuous_mod.lipschitz_probe(
            spec.mixture, box, pairs, samples=32, seed=opts.seed
        )
        outputs.update(empirical_modulus=empirical, bound=bound, within=empirical <= bound)
    else:
        raise ValidationError(f"unknown command {command!r}")
    wall = time.perf_counter() - t0
    return ResultRecord(
        command=command,
        inputs_digest=_digest(spec.raw, command, opts.seed, flags),
        outputs=outputs,
        wall_time=wall,
        tool_version=TOOL_VERSION,
        seed=opts.seed,
    )


def emit(record: ResultRecord, fmt: str, out_path: str):
    """Write a record deterministically; floats carry 17 significant digits."""
    payload = {
        "command": record.command,
        "inputs_digest": record.inputs_digest,
        "outputs": _fmt(record.outputs),
        "seed": record.seed,
        "tool_version": record.tool_version,
        "wall_time": _fmt(record.wall_time),
    }
    if fmt == "json-lines":
        lines = [json.dumps({"format": "spinvar-result", "version": 1}, sort_keys=True)]
        # one line per argmin level, then the summary line
        for key in ("argmin_parisi", "argmin_cs", "detail"):
            detail = record.outputs.get(key)
            if not isinstance(detail, dict) or "argmin" not in detail:
                continue
            side = detail.get("kind", key.removeprefix("argmin_"))
            argmin = detail["argmin"]
            for k, upper in enumerate(argmin.get("levels", []), start=1):
                lines.append(
                    json.dumps(
                        _fmt(
                            {
                                "record": "level",
                                "side": side,
                                "k": k,
                                "x": argmin["x"][k],
                                "q_upper": upper,
                            }
                        ),
                        sort_keys=True,
                    )
                )
        lines.append(json.dumps(payload, sort_keys=True))
        text = "\n".join(lines) + "\n"
    elif fmt == "csv":
        rows = [FORMAT_HEADER]
        trace = record.outputs.get("trace", [])
        rows.append("stage,eps,iter,value,grad_norm,min_increment_eig")
        for item in trace:
            stage, eps, iteration, value, gnorm, mineig = item
            rows.append(
                f"{stage},{eps:.17g},{iteration},{value:.17g},{gnorm:.17g},{mineig:.17g}"
            )
        text = "\n".join(rows) + "\n"
    else:
        raise ValidationError(f"unknown format {fmt!r}")
    with open(out_path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _apply_overrides(spec: ProblemSpec, args) -> tuple[ProblemSpec, dict]:
    overrides = {}
    current = {f.name: getattr(spec.solve, f.name) for f in fields(SolveOptions)}
    if args.seed is not None:
        overrides["seed"] = current["seed"] = int(args.seed)
    if args.eps_schedule is not None:
        sched = tuple(float(v) for v in args.eps_schedule.split(","))
        overrides["eps_schedule"] = current["eps_schedule"] = sched
    if args.r_max is not None:
        overrides["r_max"] = current["r_max"] = int(args.r_max)
    if args.grid is not None:
        overrides["x_grid"] = current["x_grid"] = int(args.grid)
    if args.tol is not None:
        overrides["grad_tol"] = current["grad_tol"] = float(args.tol)
    if args.max_iters is not None:
        overrides["max_iters"] = current["max_iters"] = int(args.max_iters)
    if args.armijo is not None:
        pair = tuple(float(v) for v in args.armijo.split(","))
        overrides["armijo"] = current["armijo"] = pair
    if args.beta2_delta is not None:
        overrides["beta2_delta"] = current["beta2_delta"] = float(args.beta2_delta)
    spec.solve = SolveOptions(**current)
    return spec, overrides


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spinvar",
        description="Free-energy functionals of vector-spin spherical models: "
        "evaluate, minimize, and verify.",
    )
    parser.add_argument("command", choices=COMMANDS + ("run",))
    parser.add_argument("--spec", required=True, help="problem file (JSON)")
    parser.add_argument("--out", help="directory for result and trace files")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--eps-schedule", dest="eps_schedule",
                        help="comma-separated decreasing schedule")
    parser.add_argument("--r-max", dest="r_max", type=int)
    parser.add_argument("--grid", "--x-grid", dest="grid", type=int,
                        help="weight grid resolution (x_grid)")
    parser.add_argument("--tol", "--grad-tol", dest="tol", type=float,
                        help="representer norm tolerance (grad_tol)")
    parser.add_argument("--max-iters", dest="max_iters", type=int)
    parser.add_argument("--armijo", help="c,shrink")
    parser.add_argument("--beta2-delta", dest="beta2_delta", type=float)
    parser.add_argument("--kind", choices=("parisi", "cs"), default="cs",
                        help="functional form for the minimize command")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        spec = load_spec(args.spec)
        spec, overrides = _apply_overrides(spec, args)
    except (ParseError, ValidationError) as exc:
        problems = getattr(exc, "problems", [str(exc)])
        for p in problems:
            print(f"error: {p}", file=sys.stderr)
        return 2

    commands = [args.command] if args.command != "run" else list(spec.commands)
    if not commands:
        print("error: 'run' needs a nonempty commands list in the problem file", file=sys.stderr)
        return 2
    exit_code = 0
    for command in commands:
        flags = dict(overrides)
        if command == "minimize":
            flags["kind"] = args.kind
        try:
            record = run(command, spec, flags)
        except ValidationError as exc:
            for p in exc.problems:
                print(f"error: {p}", file=sys.stderr)
            return 2
        except (
            InfeasiblePath,
            InfeasibleMultiplier,
            NotPositiveDefinite,
            NoFeasibleStart,
            DegenerateIncrement,
        ) as exc:
            print(f"infeasible: {exc}", file=sys.stderr)
            return 3
        except SpinvarError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 4
        summary = {k: v for k, v in record.outputs.items() if k not in ("trace", "eps_trace")}
        print(json.dumps({"command": command, **_fmt(summary)}, sort_keys=True, default=str))
        if command == "verify":
            for item in record.outputs["checks"]:
                status = "PASS" if item["passed"] else "FAIL"
                print(f"{status}  {item['name']:34s} checks={item['count']:<5d} worst={item['worst']:+.3e}")
            if not record.outputs["all_passed"]:
                exit_code = max(exit_code, 4)
        if record.outputs.get("converged") is False:
            exit_code = max(exit_code, 4)
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            emit(record, "json-lines", os.path.join(args.out, f"{command}.jsonl"))
            if "trace" in record.outputs:
                emit(record, "csv", os.path.join(args.out, f"{command}_trace.csv"))
    return exit_code


if __name__ == "__main__":
    sys.exit(main())
