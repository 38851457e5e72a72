#!/usr/bin/env python3
"""Command-line tools for robust MDP instances.

Usage:
    robust-mdp-tools evaluate INSTANCE [--mode exact|robust-s|robust-sa|oracle] [--policy FILE]
    robust-mdp-tools solve INSTANCE [--method dp|oracle] [--start STATE]
    robust-mdp-tools check-ssp INSTANCE --mode strong_s [--samples N] [--seed N]
    robust-mdp-tools verify-theorem INSTANCE --check tractability|duality|horizon|dominance
    robust-mdp-tools reproduce [--all | --name NAME ...]
    robust-mdp-tools list
    robust-mdp-tools export NAME|random --out FILE

INSTANCE is a library name (see ``list``) or a path to an instance JSON file.
Exit codes: 0 pass, 1 failed check, 2 input error, 3 budget or iteration limit.
"""

import argparse
import itertools
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from .errors import (
    BudgetExceededError,
    ConvergenceError,
    InstanceFormatError,
    InvalidInstanceError,
    RobustMdpError,
)
from .instance_format import load_instance, save_instance
from .instance_library import LIBRARY, GeneratorSpec, find_instance, load_named, random_instance
from .mdp_core import Policy, evaluate_exact
from .param_sets import as_param_set
from .reproduction import CheckResult, RunReport, reproduce
from .robust_bellman import DEFAULT_MAX_ITER, DEFAULT_TOL, OperatorTag, fixed_point, solve_robust_mdp
from .ssp_checker import SspMode, falsify_ssp, structural_guarantee
from .uncertainty_models import DEFAULT_ENUMERATION_CAP, VARIANTS, iter_vertices
from .verification_oracle import (
    DEFAULT_POLICY_GRID_RESOLUTION,
    duality_gap,
    horizon_bound,
    max_min_oracle,
    nonstationary_adversary_dp,
    policy_dominance_check,
    verify_tractability,
    worst_case_oracle,
)

logger = logging.getLogger(__name__)

OUTPUT_DIGITS = 12
LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


# ---------------------------------------------------------------------------
# Input helpers
# ---------------------------------------------------------------------------

def load_reference(reference, start=None):
    """Library name or JSON path, with an optional point-mass start."""
    instance = find_instance(reference, load_instance)
    return instance.with_start(start) if start is not None else instance


def parse_inline_policy(text, num_states, num_actions):
    """
    Parse "0.5,0.5;1,0" (states separated by ';', actions by ',').

    Raises:
        InstanceFormatError: On malformed numbers or a wrong shape
    """
    try:
        rows = [[float(x) for x in row.split(',')] for row in text.split(';')]
    except ValueError as e:
        raise InstanceFormatError(f"--policy-inline {text!r}: {e}") from e
    if len(rows) != num_states or any(len(row) != num_actions for row in rows):
        raise InstanceFormatError(f"--policy-inline needs {num_states} rows of {num_actions} entries")
    return Policy(np.array(rows))


def select_policy(args, instance):
    """--policy FILE, --policy-inline TEXT or --policy-name NAME (default: uniform)."""
    S, A = instance.mdp.num_states, instance.mdp.num_actions
    if getattr(args, 'policy', None):
        try:
            matrix = json.loads(Path(args.policy).read_text(encoding='utf-8'))
        except json.JSONDecodeError as e:
            raise InstanceFormatError(f"policy file {args.policy}: {e}") from e
        try:
            probs = np.array(matrix, dtype=float)
        except (TypeError, ValueError) as e:
            raise InstanceFormatError(f"policy file {args.policy} is not a numeric matrix: {e}") from e
        policy = Policy(probs)
        if policy.action_probs.shape != (S, A):
            raise InstanceFormatError(f"policy file has shape {policy.action_probs.shape}, expected ({S}, {A})")
        return policy
    if getattr(args, 'policy_inline', None):
        return parse_inline_policy(args.policy_inline, S, A)
    return instance.policy(getattr(args, 'policy_name', None) or 'uniform')


def vector_results(prefix, values, instance):
    return [CheckResult(f"{prefix}[{instance.state_name(s)}]", float(v)) for s, v in enumerate(values)]


def oracle_kernel(instance, report):
    """The kernel at the oracle's argmin."""
    if report.argmin_params is not None:
        return as_param_set(instance.uncertainty).kernel_at(report.argmin_params)
    return next(itertools.islice(iter_vertices(instance.vertex_set), report.argmin_index, None))


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_evaluate(args):
    """Handle evaluate command."""
    instance = load_reference(args.instance, args.start)
    policy = select_policy(args, instance)
    mdp = instance.mdp
    report = RunReport('evaluate', {'instance': instance.name, 'mode': args.mode})

    if args.mode == 'exact':
        kernel = next(itertools.islice(iter_vertices(instance.vertex_set), args.kernel, None), None)
        if kernel is None:
            raise InvalidInstanceError(f"kernel index {args.kernel} out of range")
        values = evaluate_exact(mdp, policy, kernel)
        report.inputs['kernel'] = args.kernel
    elif args.mode in ('robust-s', 'robust-sa'):
        tag = OperatorTag.T_PI if args.mode == 'robust-s' else OperatorTag.T_HAT_PI
        fp = fixed_point(tag, mdp, instance.vertex_set, policy, tol=args.tol, max_iter=args.max_iter, cap=args.cap)
        values = fp.value
        report.details.update(iterations=fp.iterations, final_residual=fp.final_residual)
    else:
        oracle = worst_case_oracle(mdp, instance.uncertainty, policy, args.grid, cap=args.cap)
        values = evaluate_exact(mdp, policy, oracle_kernel(instance, oracle))
        report.details['oracle'] = oracle.to_dict()
        report.results.append(CheckResult("oracle min mu^T v", oracle.min_value))
        if oracle.argmin_params is not None:
            report.results.extend(CheckResult(f"argmin {name}", float(x))
                                  for name, x in zip(oracle.parameter_names, oracle.argmin_params))
        else:
            report.results.append(CheckResult("argmin kernel index", float(oracle.argmin_index)))

    if args.mode != 'oracle':
        report.results.append(CheckResult("mu^T v", values.weighted(mdp.initial_dist)))
    report.results.extend(vector_results("v", values.values, instance))
    return report


def cmd_solve(args):
    """Handle solve command."""
    instance = load_reference(args.instance, args.start)
    mdp = instance.mdp
    report = RunReport('solve', {'instance': instance.name, 'method': args.method})

    if args.method == 'dp':
        u_star, policy, fp = solve_robust_mdp(mdp, instance.vertex_set, tol=args.tol,
                                              max_iter=args.max_iter, cap=args.cap)
        report.results.append(CheckResult("mu^T u*", u_star.weighted(mdp.initial_dist)))
        report.results.extend(vector_results("u*", u_star.values, instance))
        report.details.update(iterations=fp.iterations, final_residual=fp.final_residual)
    else:
        oracle = max_min_oracle(mdp, instance.uncertainty, args.policy_grid, args.grid, cap=args.cap)
        policy = oracle.maximizing_policy
        report.results.append(CheckResult("max-min mu^T v", oracle.min_value))
        if oracle.argmin_params is not None:
            report.results.extend(CheckResult(f"worst-case {name}", float(x))
                                  for name, x in zip(oracle.parameter_names, oracle.argmin_params))
        report.details['oracle'] = oracle.to_dict()

    for s in range(mdp.num_states):
        report.results.extend(CheckResult(f"pi[{instance.state_name(s)}][{a}]", float(p))
                              for a, p in enumerate(policy.action_probs[s]))
    report.results.append(CheckResult("deterministic", float(policy.is_deterministic())))
    return report


def cmd_check_ssp(args):
    """Handle check-ssp command."""
    instance = load_reference(args.instance)
    uset = instance.vertex_set
    mode = SspMode(args.mode)
    guaranteed = structural_guarantee(uset, mode)
    verdict = falsify_ssp(uset, mode, args.samples, args.seed, args.cap)

    report = RunReport('check-ssp', {'instance': instance.name, 'mode': mode.value,
                                     'samples': args.samples, 'seed': args.seed})
    report.results.append(CheckResult("structural guarantee", float(guaranteed)))
    report.results.append(CheckResult("holds", float(verdict.holds)))
    report.results.append(CheckResult("samples checked", float(verdict.samples_checked)))
    if verdict.certificate_index is not None:
        report.results.append(CheckResult("certificate vertex", float(verdict.certificate_index)))
    report.details['verdict'] = verdict.to_dict()
    return report


def cmd_verify_theorem(args):
    """Handle verify-theorem command."""
    instance = load_reference(args.instance, args.start)
    mdp, source = instance.mdp, instance.uncertainty
    report = RunReport('verify-theorem', {'instance': instance.name, 'check': args.check})

    if args.check == 'horizon':
        policy = select_policy(args, instance)
        u = fixed_point(OperatorTag.T_PI, mdp, instance.vertex_set, policy, tol=args.tol,
                        max_iter=args.max_iter, cap=args.cap).value
        for horizon in args.horizon:
            dp = nonstationary_adversary_dp(mdp, source, policy, horizon, args.cap)
            bound = horizon_bound(mdp, horizon) + args.tol
            distance = u.sup_distance(dp)
            report.results.append(CheckResult(f"|dp(H={horizon}) - u^pi|", distance, 0.0, bound,
                                              "finite-horizon bound"))
        return report

    if args.check == 'tractability':
        oracle = verify_tractability(mdp, source, select_policy(args, instance), args.operator,
                                     fixed_point_tol=args.tol, grid_resolution=args.grid, cap=args.cap)
    elif args.check == 'duality':
        oracle = duality_gap(mdp, source, expect_strong=args.expect_strong or None,
                             policy_grid_resolution=args.policy_grid, grid_resolution=args.grid, cap=args.cap)
        report.results.append(CheckResult("max-min", oracle.details['maxmin']))
        report.results.append(CheckResult("min-max", oracle.details['minmax']))
    else:
        oracle = policy_dominance_check(mdp, source, seed=args.seed, policy_grid_resolution=args.policy_grid,
                                        grid_resolution=args.grid, cap=args.cap)
        report.results.append(CheckResult("common optimal policy", float(oracle.details['common_optimal'])))

    for c in oracle.comparisons:
        report.results.append(CheckResult(c.quantity, c.fast_value, c.oracle_value, c.tolerance,
                                          "oracle", outcome=c.passed))
    report.details['oracle'] = oracle.to_dict()
    return report


def cmd_reproduce(args):
    """Handle reproduce command."""
    names = None if args.all or not args.name else args.name
    return reproduce(names, suite=not args.name or args.all,
                     grid_resolution=args.grid, policy_grid_resolution=args.policy_grid,
                     tol=args.tol, cap=args.cap)


def cmd_list(args):
    """Handle list command."""
    report = RunReport('list')
    report.details['instances'] = {name: load_named(name).provenance for name in LIBRARY}
    return report


def cmd_export(args):
    """Handle export command."""
    if args.source == 'random':
        spec = GeneratorSpec(variant=args.variant, num_states=args.states, num_actions=args.actions,
                             discount=args.gamma, next_state_independent=args.state_rewards)
        instance = random_instance(spec, args.seed)
    else:
        instance = load_named(args.source)
    path = save_instance(instance, args.out)
    report = RunReport('export', {'source': args.source})
    report.details['path'] = str(path)
    return report


# ---------------------------------------------------------------------------
# Output
# ---------------------------------------------------------------------------

def rounded(obj):
    """Round every float to OUTPUT_DIGITS significant digits; NaN and infinities become None."""
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return None
        return float(f"{obj:.{OUTPUT_DIGITS}g}")
    if isinstance(obj, dict):
        return {k: rounded(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [rounded(v) for v in obj]
    return obj


def format_number(value):
    return f"{value:.{OUTPUT_DIGITS}g}"


def print_report(report):
    if report.command == 'list':
        print(f"{len(report.details['instances'])} library instance(s):\n")
        for name, provenance in report.details['instances'].items():
            print(f"  {name}")
            print(f"    {provenance}")
        return
    if report.command == 'export':
        print(f"Wrote {report.details['path']}")
        return

    width = max([len(r.quantity) for r in report.results] + [8])
    for r in report.results:
        line = f"  {r.quantity:<{width}}  {format_number(r.value)}"
        if r.expected is not None:
            line += f"  expected {format_number(r.expected)} +/- {r.tolerance:g}  {'pass' if r.passed else 'FAIL'}"
        if r.error:
            line += f"  ({r.error})"
        print(line)

    witness = report.details.get('verdict', {}).get('witness_objective')
    if witness is not None:
        print(f"\nWitness objective: {json.dumps(rounded(witness))}")
    failures = report.failures
    if failures:
        print(f"\n{len(failures)} check(s) failed")
    print(f"\n{report.command} finished in {report.wall_time:.2f}s")


def add_common(p, policy=False):
    p.add_argument('--json', action='store_true', help='Print the report as JSON')
    p.add_argument('--out', help='Also write the JSON report to this file')
    p.add_argument('--seed', type=int, default=0, help='Random seed (default: 0)')
    p.add_argument('--grid', type=int, default=None, help='Oracle grid points per parameter')
    p.add_argument('--policy-grid', type=int, default=DEFAULT_POLICY_GRID_RESOLUTION,
                   help=f'Policy lattice resolution (default: {DEFAULT_POLICY_GRID_RESOLUTION})')
    p.add_argument('--cap', type=int, default=DEFAULT_ENUMERATION_CAP, help='Vertex enumeration cap')
    p.add_argument('--tol', type=float, default=DEFAULT_TOL, help=f'Fixed-point tolerance (default: {DEFAULT_TOL})')
    p.add_argument('--max-iter', type=int, default=DEFAULT_MAX_ITER, help='Value iteration limit')
    if policy:
        p.add_argument('--policy', help='JSON file with an S x A policy matrix')
        p.add_argument('--policy-inline', help='Policy rows, e.g. "0.5,0.5;1,0"')
        p.add_argument('--policy-name', help='Named policy of the instance (default: uniform)')


def build_parser():
    parser = argparse.ArgumentParser(
        prog='robust-mdp-tools',
        description='Robust MDP evaluation, solving, SSP checks and reproduction',
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  robust-mdp-tools evaluate appendix_d --start a --policy-name beta0 --mode oracle
  robust-mdp-tools solve appendix_d --start b --method oracle
  robust-mdp-tools check-ssp example_3_1 --mode strong_s --samples 1000
  robust-mdp-tools verify-theorem sa_gap_fixture --check tractability --operator sa
  robust-mdp-tools reproduce --name appendix_d
        """
    )
    parser.add_argument('--verbose', '-v', action='store_true', help='Log progress (INFO)')
    parser.add_argument('--debug', action='store_true', help='Log details (DEBUG)')
    subparsers = parser.add_subparsers(dest='command', help='Command to run')

    # Evaluate command
    evaluate_p = subparsers.add_parser('evaluate', help='Evaluate a policy')
    evaluate_p.add_argument('instance', help='Library name or instance JSON path')
    evaluate_p.add_argument('--mode', choices=['exact', 'robust-s', 'robust-sa', 'oracle'], default='robust-s')
    evaluate_p.add_argument('--kernel', type=int, default=0, help='Vertex index for --mode exact (default: 0)')
    evaluate_p.add_argument('--start', help='Start state (label or index) instead of mu')
    add_common(evaluate_p, policy=True)

    # Solve command
    solve_p = subparsers.add_parser('solve', help='Compute the robust optimal value and policy')
    solve_p.add_argument('instance', help='Library name or instance JSON path')
    solve_p.add_argument('--method', choices=['dp', 'oracle'], default='dp',
                         help='dp: fixed point of T; oracle: max-min search over stationary policies')
    solve_p.add_argument('--start', help='Start state (label or index) instead of mu')
    add_common(solve_p)

    # Check-ssp command
    ssp_p = subparsers.add_parser('check-ssp', help='Search for SSP violations')
    ssp_p.add_argument('instance', help='Library name or instance JSON path')
    ssp_p.add_argument('--mode', choices=[m.value for m in SspMode], default=SspMode.STRONG_S.value)
    ssp_p.add_argument('--samples', type=int, default=1000, help='Sampled objectives (default: 1000)')
    add_common(ssp_p)

    # Verify-theorem command
    verify_p = subparsers.add_parser('verify-theorem', help='Compare fast operators against the oracles')
    verify_p.add_argument('instance', help='Library name or instance JSON path')
    verify_p.add_argument('--check', choices=['tractability', 'duality', 'horizon', 'dominance'],
                          default='tractability')
    verify_p.add_argument('--operator', choices=['s', 'sa'], default='s',
                          help='Tractability: T^pi (s) or T_hat^pi (sa)')
    verify_p.add_argument('--horizon', type=int, nargs='+', default=[1, 5, 20],
                          help='Horizons for --check horizon (default: 1 5 20)')
    verify_p.add_argument('--expect-strong', action='store_true', help='Duality: require a zero gap')
    verify_p.add_argument('--start', help='Start state (label or index) instead of mu')
    add_common(verify_p, policy=True)

    # Reproduce command
    reproduce_p = subparsers.add_parser('reproduce', help='Check expected values and run the acceptance suite')
    reproduce_p.add_argument('--all', action='store_true', help='Every library instance plus the acceptance suite')
    reproduce_p.add_argument('--name', action='append', help='Library instance to check (repeatable)')
    add_common(reproduce_p)

    # List command
    subparsers.add_parser('list', help='List library instances')

    # Export command
    export_p = subparsers.add_parser('export', help='Write a library or random instance to JSON')
    export_p.add_argument('source', help='Library name or "random"')
    export_p.add_argument('--out', required=True, help='Output JSON path')
    export_p.add_argument('--variant', choices=sorted(VARIANTS), default='s_rectangular')
    export_p.add_argument('--states', type=int, default=3)
    export_p.add_argument('--actions', type=int, default=2)
    export_p.add_argument('--gamma', type=float, default=0.9)
    export_p.add_argument('--state-rewards', action='store_true', help='Rewards independent of the next state')
    export_p.add_argument('--seed', type=int, default=0)

    return parser


COMMANDS = {
    'evaluate': cmd_evaluate,
    'solve': cmd_solve,
    'check-ssp': cmd_check_ssp,
    'verify-theorem': cmd_verify_theorem,
    'reproduce': cmd_reproduce,
    'list': cmd_list,
    'export': cmd_export,
}


def main(argv=None):
    """Main entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)

    if not args.command:
        parser.print_help()
        return 1

    level = logging.DEBUG if args.debug else logging.INFO if args.verbose else logging.WARNING
    logging.basicConfig(level=level, format=LOG_FORMAT)

    started = time.perf_counter()
    try:
        report = COMMANDS[args.command](args)
    except (InvalidInstanceError, OSError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 2
    except (BudgetExceededError, ConvergenceError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return 3
    except RobustMdpError as e:
        print(f"Error: {e}", file=sys.stderr)
        return 1
    if not report.wall_time:
        report.wall_time = time.perf_counter() - started

    payload = json.dumps(rounded(report.to_dict()), indent=2)
    if getattr(args, 'out', None) and args.command != 'export':
        Path(args.out).write_text(payload + "\n", encoding='utf-8')
    if getattr(args, 'json', False):
        print(payload)
    else:
        print_report(report)

    return 0 if report.passed else 1


if __name__ == '__main__':
    sys.exit(main())
