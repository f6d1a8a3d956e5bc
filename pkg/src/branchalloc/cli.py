"""Command-line interface: solve | oracle | prune | render | check.

Exit codes: 0 success, 2 validation or infeasibility error (including
malformed JSON, reported with line and column), 3 enumeration budget
refused.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from .errors import BranchAllocError, Refused
from .graph import is_compatible, m_alpha_cost, plan_from_map
from .io import (
    load_instance,
    load_result,
    render_svg,
    result_to_dict,
    save_result,
)
from .measures import Instance, normalize
from .solver import brute_force_oracle, solve
from .state import fixpoint_detailed, initial_state

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_REFUSED = 3


def _read_instance(path: str, do_normalize: bool) -> Instance:
    instance = load_instance(path)
    if do_normalize:
        instance = normalize(instance)
    instance.require_normalized()
    return instance


def _cmd_solve(args) -> int:
    instance = _read_instance(args.input, args.normalize)
    result = solve(
        instance,
        exact_threshold=args.exact_threshold,
        max_candidates=args.max_candidates,
        prune=not args.no_prune,
    )
    options = {
        "exact_threshold": args.exact_threshold,
        "tol": args.tol,
        "max_candidates": args.max_candidates,
    }
    save_result(result_to_dict(result, instance, options), args.out)
    return EXIT_OK


def _cmd_oracle(args) -> int:
    instance = _read_instance(args.input, args.normalize)
    oracle = brute_force_oracle(instance)
    payload = {
        "optimal_maps": [[i + 1 for i in m] for m in oracle.optimal_maps],
        "cost": oracle.cost,
        "maps_evaluated": oracle.maps_evaluated,
    }
    save_result(payload, args.out)
    return EXIT_OK


def _cmd_prune(args) -> int:
    instance = _read_instance(args.input, args.normalize)
    fp = fixpoint_detailed(initial_state(instance), instance)
    payload = {
        "state_matrix": fp.matrix.row_strings(),
        "iterations": fp.iterations,
        "zero_history": list(fp.zero_history),
    }
    save_result(payload, args.out)
    return EXIT_OK


def _cmd_render(args) -> int:
    loaded = load_result(args.result)
    regions = None
    if args.regions:
        try:
            s_str, n_str = args.regions.split(",")
            regions = (int(s_str) - 1, float(n_str))
        except ValueError as exc:
            raise BranchAllocError(
                f"--regions expects FACTORY,DEMAND, got {args.regions!r}"
            ) from exc
        if not 0 <= regions[0] < loaded.instance.num_factories:
            raise BranchAllocError(f"no factory numbered {s_str}")
    render_svg(loaded, args.out, regions)
    return EXIT_OK


def _cmd_check(args) -> int:
    loaded = load_result(args.result)
    instance = loaded.instance
    instance.require_normalized()
    plan = plan_from_map(loaded.assignment, instance)
    problems = []
    if np.any(np.abs(plan.row_sums() - loaded.loads) > 1e-9):
        problems.append("loads do not match the assignment's row sums")
    recomputed = m_alpha_cost(loaded.path, instance.alpha)
    if abs(recomputed - loaded.cost) > 1e-9:
        problems.append(
            f"path cost {recomputed!r} differs from recorded cost {loaded.cost!r}"
        )
    try:
        if not is_compatible(loaded.path, plan, instance):
            problems.append("plan is not compatible with the recorded path")
    except BranchAllocError as exc:
        problems.append(f"compatibility check failed: {exc}")
    used = {i for i in loaded.assignment}
    for comp in loaded.path.connected_components():
        owners = set()
        for i in used:
            fac = instance.factories[i]
            if any(
                np.linalg.norm(loaded.path.vertices[v] - fac) <= 1e-9 for v in comp
            ):
                owners.add(i)
        if len(owners) != 1:
            problems.append(
                f"a path component touches {len(owners)} used factories, expected 1"
            )
    for msg in problems:
        print(f"check: {msg}", file=sys.stderr)
    print("check: OK" if not problems else f"check: {len(problems)} problem(s)")
    return EXIT_OK if not problems else EXIT_INVALID


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="branchalloc",
        description="Concave-cost allocation of households to factories "
        "with branched shipping trees.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--input", required=True, help="instance JSON file")
    common.add_argument("--out", required=True, help="output JSON file")
    common.add_argument(
        "--normalize",
        action="store_true",
        help="rescale demands to total one before solving",
    )

    p_solve = sub.add_parser("solve", parents=[common], help="solve an instance")
    p_solve.add_argument("--exact-threshold", type=int, default=7)
    p_solve.add_argument("--tol", type=float, default=1e-9)
    p_solve.add_argument("--max-candidates", type=int, default=10**6)
    p_solve.add_argument(
        "--no-prune", action="store_true", help="skip the state-matrix fixpoint"
    )
    p_solve.set_defaults(func=_cmd_solve)

    p_oracle = sub.add_parser(
        "oracle", parents=[common], help="enumerate every map (ground truth)"
    )
    p_oracle.set_defaults(func=_cmd_oracle)

    p_prune = sub.add_parser(
        "prune", parents=[common], help="emit the pruning fixpoint only"
    )
    p_prune.set_defaults(func=_cmd_prune)

    p_render = sub.add_parser("render", help="draw a result file as SVG")
    p_render.add_argument("--result", required=True, help="result JSON file")
    p_render.add_argument("--out", required=True, help="output SVG file")
    p_render.add_argument(
        "--regions",
        default=None,
        metavar="S,N",
        help="overlay factory S's assign/exclude disks at demand level N",
    )
    p_render.set_defaults(func=_cmd_render)

    p_check = sub.add_parser("check", help="validate a result file's invariants")
    p_check.add_argument("--result", required=True, help="result JSON file")
    p_check.set_defaults(func=_cmd_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except json.JSONDecodeError as exc:
        print(
            f"error: malformed JSON at line {exc.lineno}, column {exc.colno}: "
            f"{exc.msg}",
            file=sys.stderr,
        )
        return EXIT_INVALID
    except Refused as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except BranchAllocError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
