"""Command-line front end: validate, verify, integrate, actions, frequencies.

Every command loads a scenario JSON file, emits a JSON report on stdout (and
optionally to ``--out``) and exits with a stable code:

    0   all requested checks passed
    2   a verification or computation failed
    3   a solved-vs-empirical cross-check mismatched
    64  usage error, malformed JSON or schema violation

Sampling is seeded (``--seed``, default 0) so repeated runs are byte-identical.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import __version__
from .actionangle import (
    ActionAngleError,
    action_integrals,
    b_matrix,
    empirical_frequencies,
    evaluation_frequencies,
    find_fiber_point,
    solve_frequencies,
    torus_lattice,
)
from .cosym import (
    DegenerateStructureError,
    FieldConditionError,
    StructureEvalError,
)
from .exprlang import ExprError
from .fields import sample_box
from .flow import FlowError, drift_report, integrate
from .integrability import (
    bracket_closure_and_corank,
    check_bracket_of_integrals,
    check_commuting_prefix,
    check_first_integrals,
    check_fiber_tangency,
    check_independence,
    check_symmetry_algebra,
    sample_fiber,
)
from .scenarios import Scenario, ScenarioFormatError, load_scenario_file

USAGE_ERROR = 64
CHECK_FAILED = 2
MISMATCH = 3

_RUNTIME_ERRORS = (
    FlowError,
    ActionAngleError,
    DegenerateStructureError,
    FieldConditionError,
    StructureEvalError,
    ExprError,
    ValueError,
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_ERROR, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    value = int(text)
    if value <= 0:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def _positive_float(text: str) -> float:
    value = float(text)
    if value <= 0:
        raise argparse.ArgumentTypeError("must be positive")
    return value


def _float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated float list: {text!r}")


def _emit(report: dict, out_path: str | None) -> None:
    text = json.dumps(report, indent=2)
    print(text)
    if out_path:
        with open(out_path, "w", encoding="utf-8") as handle:
            handle.write(text + "\n")


def _field_from_spec(scenario: Scenario, spec: str):
    S = scenario.structure
    if spec == "reeb":
        return S.reeb_vf()
    if spec == "eval":
        return S.evaluation_vf(scenario.system.hamiltonian)
    if spec.startswith("ham:"):
        name = spec[4:]
        if name == "H":
            return S.hamiltonian_vf(scenario.system.hamiltonian)
        for f in scenario.system.integrals:
            if f.name == name:
                return S.hamiltonian_vf(f)
        raise argparse.ArgumentTypeError(f"no integral named '{name}'")
    raise argparse.ArgumentTypeError(f"bad field spec '{spec}' (reeb|ham:NAME|eval)")


# --- sections -----------------------------------------------------------------

def _validate_section(scenario: Scenario, samples: int, seed: int) -> dict:
    report = scenario.structure.validate(samples=samples, seed=seed)
    return report.to_dict()


def _verify_section(scenario: Scenario, points_n: int, seed: int) -> dict:
    sys_ = scenario.system
    rng = np.random.default_rng(seed)
    points = sample_box(scenario.structure.domain_box, points_n, rng)
    lie_points = points[: max(4, points_n // 8)]
    sections = {
        "first_integrals": check_first_integrals(sys_, points).to_dict(),
        "commuting_prefix": check_commuting_prefix(sys_, points).to_dict(),
        "independence": check_independence(sys_, points).to_dict(),
        "symmetry_algebra": check_symmetry_algebra(sys_, lie_points).to_dict(),
        "fiber_tangency": check_fiber_tangency(sys_, points).to_dict(),
    }
    # closure and corank on flow-generated fiber groups
    base = scenario.base_point()
    seeds = [base]
    extra = sample_box(scenario.structure.domain_box, 4, rng)
    for cand in extra:
        if len(seeds) >= 3:
            break
        try:
            if check_independence(sys_, [cand]).extra["regular_points"] == 1:
                seeds.append(cand)
        except _RUNTIME_ERRORS:
            continue
    torus_ok = True
    try:
        groups = [sample_fiber(sys_, s, 3, rng) for s in seeds]
        induced = bracket_closure_and_corank(sys_, groups, casimirs=scenario.casimirs)
        sections["induced_bracket"] = induced.to_dict()
        torus_ok = induced.closure_ok and induced.corank_ok() and induced.completeness_ok
    except _RUNTIME_ERRORS as err:
        sections["induced_bracket"] = {"pass": False, "error": str(err)}
        torus_ok = False
    noncommuting = [
        (i, j)
        for i in range(sys_.m)
        for j in range(i + 1, sys_.m)
        if i >= sys_.r or j >= sys_.r
    ]
    if noncommuting:
        pair_pts = points[: max(4, points_n // 8)]
        try:
            sections["bracket_of_integrals"] = check_bracket_of_integrals(
                sys_, noncommuting, pair_pts
            ).to_dict()
        except _RUNTIME_ERRORS as err:
            sections["bracket_of_integrals"] = {"pass": False, "error": str(err)}
    ok = (
        all(section.get("pass", True) for section in sections.values()) and torus_ok
    )
    return {"pass": ok, "checks": sections}


def _flow_section(scenario: Scenario, seed: int, tau: float = 20.0, tol: float = 1e-10) -> dict:
    sys_ = scenario.system
    S = scenario.structure
    x0 = scenario.base_point()
    field = S.evaluation_vf(sys_.hamiltonian)
    traj = integrate(field, x0, tau, tol, S.chart, sys_.integrals)
    drifts = drift_report(traj)
    worst = max(drifts.values()) if drifts else 0.0
    fwd = integrate(field, x0, 0.25, tol, S.chart)
    back = integrate(field, fwd.final_state, -0.25, tol, S.chart)
    reversal = float(np.max(np.abs(back.final_state - x0)))
    ok = worst < 1e-7 and reversal < 10 * tol
    return {
        "pass": ok,
        "tau": tau,
        "tol": tol,
        "integral_drift": drifts,
        "drift_threshold": 1e-7,
        "time_reversal_residual": reversal,
        "reversal_threshold": 10 * tol,
        "steps": len(traj.times) - 1,
    }


def _torus_skip_reason(scenario: Scenario) -> str | None:
    if not scenario.fiber_compact:
        return "skipped: noncompact"
    if scenario.lam is None:
        return "skipped: no primitive declared"
    if scenario.system.r + 1 > 2 and scenario.declared_lattice is None:
        return "skipped: no declared lattice for rank above two"
    return None


def _actions_section(scenario: Scenario, fiber, delta: float) -> dict:
    sys_ = scenario.system
    x0 = find_fiber_point(sys_, fiber, scenario.base_point())
    lattice = torus_lattice(
        sys_,
        x0,
        angle_maps=scenario.angle_maps if len(scenario.angle_maps) == sys_.r + 1 else (),
        declared_vectors=scenario.declared_lattice,
    )
    profile = action_integrals(sys_, lattice, scenario.lam)
    return {"pass": True, "fiber": list(map(float, fiber)), **profile.to_dict()}


def _frequency_section(
    scenario: Scenario,
    fiber,
    delta: float,
    modes=("reeb", "eval"),
    ham_index: int | None = None,
    verify_empirical: bool = False,
) -> dict:
    sys_ = scenario.system
    angle_maps = (
        scenario.angle_maps if len(scenario.angle_maps) == sys_.r + 1 else ()
    )
    table = b_matrix(
        sys_,
        fiber,
        delta=delta,
        lam=scenario.lam,
        seed=scenario.base_point(),
        angle_maps=angle_maps,
        declared_vectors=scenario.declared_lattice,
    )
    out = {"pass": True, "table": table.to_dict(), "modes": {}}
    solved = {}
    for mode in modes:
        if mode == "reeb":
            solved["reeb"] = solve_frequencies(table, "reeb")
        elif mode == "eval":
            solved["eval"] = evaluation_frequencies(table, sys_)
        elif mode == "ham":
            solved[f"ham:{ham_index}"] = solve_frequencies(
                table, "hamiltonian", ham_index
            )
    for label, value in solved.items():
        out["modes"][label] = [float(v) for v in value]
    if verify_empirical:
        if not angle_maps:
            raise ActionAngleError("empirical verification needs declared angle maps")
        tol_match = scenario.structure.tol.frequency_match
        x0 = table.lattice.base_point
        mismatch = 0.0
        for label, value in solved.items():
            if label == "reeb":
                field = scenario.structure.reeb_vf()
            elif label == "eval":
                field = scenario.structure.evaluation_vf(sys_.hamiltonian)
            else:
                field = scenario.structure.hamiltonian_vf(
                    sys_.integrals[ham_index - 1]
                )
            slopes, resid = empirical_frequencies(
                sys_, field, x0, angle_maps, tau_end=40.0
            )
            gap = float(np.max(np.abs(slopes - np.asarray(value))))
            mismatch = max(mismatch, gap)
            out["modes"][label] = {
                "solved": [float(v) for v in value],
                "empirical": [float(v) for v in slopes],
                "fit_residual": float(np.max(resid)),
                "mismatch": gap,
            }
        out["empirical_tolerance"] = tol_match
        out["max_mismatch"] = mismatch
        if mismatch > tol_match:
            out["pass"] = False
    return out


def _default_fiber(scenario: Scenario) -> np.ndarray:
    return scenario.system.integral_values(scenario.base_point())


# --- commands -------------------------------------------------------------------

def _cmd_validate(args) -> int:
    scenario = load_scenario_file(args.file)
    section = _validate_section(scenario, args.samples, args.seed)
    report = {
        "scenario": scenario.name,
        "command": "validate",
        "seed": args.seed,
        "report": section,
    }
    _emit(report, args.out)
    return 0 if section["pass"] else CHECK_FAILED


def _cmd_verify(args) -> int:
    scenario = load_scenario_file(args.file)
    section = _verify_section(scenario, args.points, args.seed)
    report = {
        "scenario": scenario.name,
        "command": "verify",
        "seed": args.seed,
        "points": args.points,
        "report": section,
    }
    _emit(report, args.out)
    return 0 if section["pass"] else CHECK_FAILED


def _cmd_integrate(args) -> int:
    scenario = load_scenario_file(args.file)
    field = _field_from_spec(scenario, args.field)
    x0 = np.asarray(args.x0, dtype=float)
    if len(x0) != scenario.chart.dim:
        raise argparse.ArgumentTypeError(
            f"--x0 needs {scenario.chart.dim} coordinates, got {len(x0)}"
        )
    traj = integrate(
        field, x0, args.tau, args.tol, scenario.chart, scenario.system.integrals
    )
    if args.out:
        traj.to_csv(args.out)
    report = {
        "scenario": scenario.name,
        "command": "integrate",
        "field": args.field,
        "tau": args.tau,
        "tol": args.tol,
        "steps": len(traj.times) - 1,
        "final_state": [float(v) for v in scenario.chart.normalize(traj.final_state)],
        "integral_drift": drift_report(traj),
        "csv": args.out,
    }
    _emit(report, None)
    return 0


def _cmd_actions(args) -> int:
    scenario = load_scenario_file(args.file)
    reason = _torus_skip_reason(scenario)
    if reason == "skipped: no primitive declared":
        _emit(
            {
                "scenario": scenario.name,
                "command": "actions",
                "error": "scenario declares no primitive one-form;"
                " add a 'lambda' entry with -d(lambda) = omega",
            },
            args.out,
        )
        return CHECK_FAILED
    fiber = np.asarray(
        args.fiber if args.fiber is not None else _default_fiber(scenario), dtype=float
    )
    if len(fiber) != scenario.system.m:
        raise argparse.ArgumentTypeError(
            f"--fiber needs {scenario.system.m} values, got {len(fiber)}"
        )
    section = _actions_section(scenario, fiber, args.delta)
    report = {
        "scenario": scenario.name,
        "command": "actions",
        "report": section,
    }
    _emit(report, args.out)
    return 0


def _cmd_frequencies(args) -> int:
    scenario = load_scenario_file(args.file)
    fiber = np.asarray(
        args.fiber if args.fiber is not None else _default_fiber(scenario), dtype=float
    )
    if len(fiber) != scenario.system.m:
        raise argparse.ArgumentTypeError(
            f"--fiber needs {scenario.system.m} values, got {len(fiber)}"
        )
    if args.mode == "reeb":
        modes, ham_index = ("reeb",), None
    elif args.mode == "eval":
        modes, ham_index = ("eval",), None
    elif args.mode.startswith("ham:"):
        modes = ("ham",)
        try:
            ham_index = int(args.mode[4:])
        except ValueError:
            raise argparse.ArgumentTypeError(f"bad mode '{args.mode}'")
    else:
        raise argparse.ArgumentTypeError(f"bad mode '{args.mode}' (reeb|eval|ham:K)")
    section = _frequency_section(
        scenario, fiber, args.delta, modes, ham_index, args.verify_empirical
    )
    report = {
        "scenario": scenario.name,
        "command": "frequencies",
        "mode": args.mode,
        "report": section,
    }
    _emit(report, args.out)
    if not section["pass"]:
        return MISMATCH
    return 0


def _cmd_report(args) -> int:
    scenario = load_scenario_file(args.file)
    sections = {"validate": _validate_section(scenario, args.samples, args.seed)}
    sections["verify"] = _verify_section(scenario, args.points, args.seed)
    if args.all:
        sections["flow"] = _flow_section(scenario, args.seed)
        reason = _torus_skip_reason(scenario)
        if reason:
            sections["actions"] = {"status": reason}
            sections["frequencies"] = {"status": reason}
        else:
            fiber = _default_fiber(scenario)
            sections["actions"] = _actions_section(scenario, fiber, args.delta)
            sections["frequencies"] = _frequency_section(
                scenario, fiber, args.delta
            )
    failed = [
        name
        for name, section in sections.items()
        if not section.get("pass", True)
    ]
    report = {
        "scenario": scenario.name,
        "command": "report",
        "seed": args.seed,
        "pass": not failed,
        "failed_sections": failed,
        "sections": sections,
    }
    _emit(report, args.out)
    return 0 if not failed else CHECK_FAILED


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="cosym",
        description="verify and explore models with a closed two-form/one-form"
        " pair: structure validation, integral checks, flows, loop"
        " actions and frequencies",
    )
    parser.add_argument("--version", action="version", version=f"cosym {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("file", help="scenario JSON file")
        p.add_argument("--seed", type=int, default=0, help="sampling seed")
        p.add_argument("--out", default=None, help="also write the JSON report here")

    p = sub.add_parser("validate", help="closedness and volume condition")
    common(p)
    p.add_argument("--samples", type=_positive_int, default=100)
    p.set_defaults(func=_cmd_validate)

    p = sub.add_parser("verify", help="full integral-set verification chain")
    common(p)
    p.add_argument("--points", type=_positive_int, default=120)
    p.set_defaults(func=_cmd_verify)

    p = sub.add_parser("integrate", help="flow a field and record drift")
    common(p)
    p.add_argument("--field", required=True, help="reeb | ham:NAME | eval")
    p.add_argument("--x0", type=_float_list, required=True, help="initial point")
    p.add_argument("--tau", type=float, required=True, help="flow time")
    p.add_argument("--tol", type=_positive_float, default=1e-10)
    p.set_defaults(func=_cmd_integrate)

    p = sub.add_parser("actions", help="period lattice and loop actions")
    common(p)
    p.add_argument("--fiber", type=_float_list, default=None, help="integral values")
    p.add_argument("--delta", type=_positive_float, default=1e-4)
    p.set_defaults(func=_cmd_actions)

    p = sub.add_parser("frequencies", help="frequency matrix and linear solves")
    common(p)
    p.add_argument("--fiber", type=_float_list, default=None)
    p.add_argument("--mode", default="reeb", help="reeb | eval | ham:K")
    p.add_argument("--delta", type=_positive_float, default=1e-4)
    p.add_argument("--verify-empirical", action="store_true")
    p.set_defaults(func=_cmd_frequencies)

    p = sub.add_parser("report", help="aggregate report over all sections")
    common(p)
    p.add_argument("--all", action="store_true", help="include flow/actions/frequencies")
    p.add_argument("--samples", type=_positive_int, default=60)
    p.add_argument("--points", type=_positive_int, default=60)
    p.add_argument("--delta", type=_positive_float, default=1e-4)
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return err.code if isinstance(err.code, int) else USAGE_ERROR
    try:
        return args.func(args)
    except (ScenarioFormatError, argparse.ArgumentTypeError, OSError) as err:
        print(json.dumps({"error": str(err)}, indent=2))
        return USAGE_ERROR
    except _RUNTIME_ERRORS as err:
        print(json.dumps({"error": str(err)}, indent=2))
        return CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
