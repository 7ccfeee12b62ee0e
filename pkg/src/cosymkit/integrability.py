"""Numerical verification that a declared integral set is complete.

The checks mirror the structural requirements on a system (H; f_1..f_m) with
a commuting prefix of length r on a (2n+1)-dimensional structure:

* every f_i is a first integral of the evaluation flow: Z(f) + {f, H} = 0;
* the prefix f_1..f_r commutes with all integrals;
* the integral differentials have rank m and the symmetry fields
  (Y_H, X_{f_1}..X_{f_r}) have rank r+1 on the regular set;
* the symmetry fields commute pairwise;
* the pairwise brackets a_ij = {f_i, f_j} are constant on fibers and the
  antisymmetric matrix a has corank r, with m + r = dim - 1.

Points failing the rank checks are reported and excluded rather than
extrapolated across; every report carries its worst witness.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cosym import CosymplecticStructure, StructureVectorField
from .fields import Point, ScalarField, lie_bracket
from .flow import integrate

__all__ = [
    "IntegralSystem",
    "CheckReport",
    "InducedBracket",
    "check_first_integrals",
    "check_commuting_prefix",
    "check_independence",
    "check_symmetry_algebra",
    "check_fiber_tangency",
    "bracket_closure_and_corank",
    "check_bracket_of_integrals",
    "sample_fiber",
    "svd_rank",
]


@dataclass(frozen=True)
class IntegralSystem:
    """A structure with Hamiltonian, ordered integrals and commuting prefix r.

    ``enforce_completeness=False`` admits deliberately wrong integral counts
    (used to exercise failure reporting).
    """

    structure: CosymplecticStructure
    hamiltonian: ScalarField
    integrals: tuple[ScalarField, ...]
    r: int
    enforce_completeness: bool = True

    def __post_init__(self):
        object.__setattr__(self, "integrals", tuple(self.integrals))
        m = len(self.integrals)
        if not 0 <= self.r <= m:
            raise ValueError(f"need 0 <= r <= m, got r={self.r}, m={m}")
        if self.enforce_completeness and m + self.r != self.structure.chart.dim - 1:
            raise ValueError(
                f"m + r = {m + self.r} but dim - 1 = {self.structure.chart.dim - 1};"
                " pass enforce_completeness=False to allow"
            )

    @property
    def m(self) -> int:
        return len(self.integrals)

    @property
    def n(self) -> int:
        return (self.structure.chart.dim - 1) // 2

    def commuting_fields(self) -> list[StructureVectorField]:
        """X_{f_1}..X_{f_r} followed by the Reeb field."""
        S = self.structure
        return [S.hamiltonian_vf(f) for f in self.integrals[: self.r]] + [S.reeb_vf()]

    def symmetry_fields(self) -> list[StructureVectorField]:
        """Y_H followed by X_{f_1}..X_{f_r}."""
        S = self.structure
        return [S.evaluation_vf(self.hamiltonian)] + [
            S.hamiltonian_vf(f) for f in self.integrals[: self.r]
        ]

    def integral_values(self, x: Point) -> np.ndarray:
        return np.array([f.value(x) for f in self.integrals])


@dataclass
class CheckReport:
    name: str
    passed: bool
    max_residual: float
    tolerance: float
    witness: dict | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "check": self.name,
            "pass": self.passed,
            "max_residual": self.max_residual,
            "tolerance": self.tolerance,
        }
        if self.witness:
            out["witness"] = self.witness
        out.update(self.extra)
        return out


def svd_rank(matrix: np.ndarray, rel_tol: float, abs_floor: float = 0.0) -> int:
    """Rank by singular values above ``max(abs_floor, rel_tol * s_max)``."""
    if matrix.size == 0:
        return 0
    s = np.linalg.svd(matrix, compute_uv=False)
    thr = max(abs_floor, rel_tol * float(s[0]))
    return int(np.sum(s > thr))


def check_first_integrals(sys: IntegralSystem, points) -> CheckReport:
    """Residuals |Z(f_i) + {f_i, H}| at each point."""
    tol = sys.structure.tol.first_integral
    worst = 0.0
    witness = None
    for k, x in enumerate(points):
        frame = sys.structure.frame(x)
        dH = sys.hamiltonian.gradient(x)
        Z = frame.reeb
        for f in sys.integrals:
            df = f.gradient(x)
            resid = abs(float(df @ Z) + frame.bracket(df, dH))
            if resid > worst:
                worst = resid
                witness = {"integral": f.name, "point_index": k, "point": list(map(float, x)), "residual": resid}
    return CheckReport("first_integrals", worst < tol, worst, tol, witness)


def check_commuting_prefix(sys: IntegralSystem, points) -> CheckReport:
    """max |{f_i, f_j}| over i <= r, j <= m at the sampled points."""
    tol = sys.structure.tol.commuting
    worst = 0.0
    witness = None
    for k, x in enumerate(points):
        frame = sys.structure.frame(x)
        grads = [f.gradient(x) for f in sys.integrals]
        for i in range(sys.r):
            for j in range(sys.m):
                if j == i:
                    continue
                val = abs(frame.bracket(grads[i], grads[j]))
                if val > worst:
                    worst = val
                    witness = {
                        "pair": [sys.integrals[i].name, sys.integrals[j].name],
                        "point_index": k,
                        "point": list(map(float, x)),
                        "residual": val,
                    }
    return CheckReport("commuting_prefix", worst < tol, worst, tol, witness)


def check_independence(sys: IntegralSystem, points) -> CheckReport:
    """SVD ranks of the integral differentials and of the symmetry fields.

    A point where the differentials df_1..df_m drop rank is singular: it is
    excluded from the regular set and reported, never extrapolated across.
    At every regular point the symmetry fields (Y_H, X_{f_1}..X_{f_r}) must
    have rank r+1; a drop there is a defect and fails the check.  With m = 0
    and no defects the check passes vacuously.
    """
    tol = sys.structure.tol.rank_rel
    excluded = []
    defects = []
    regular = 0
    for k, x in enumerate(points):
        if sys.m:
            G = np.array([f.gradient(x) for f in sys.integrals])
            if svd_rank(G, tol) != sys.m:
                excluded.append({"point_index": k, "point": list(map(float, x))})
                continue
        regular += 1
        V = np.array([vf(x) for vf in sys.symmetry_fields()])
        rank = svd_rank(V, tol)
        if rank != sys.r + 1:
            defects.append(
                {"point_index": k, "point": list(map(float, x)), "rank": rank}
            )
    return CheckReport(
        "independence",
        not defects,
        float(len(defects)),
        0.0,
        defects[0] if defects else None,
        extra={
            "regular_points": regular,
            "excluded_points": excluded,
            "expected_ranks": [sys.m, sys.r + 1],
        },
    )


def check_symmetry_algebra(sys: IntegralSystem, points) -> CheckReport:
    """Pairwise Lie brackets of (Y_H, X_{f_1}..X_{f_r}) vanish numerically."""
    tol = sys.structure.tol.lie_residual
    fields_ = sys.symmetry_fields()
    worst = 0.0
    witness = None
    labels = [vf.label for vf in fields_]
    for k, x in enumerate(points):
        for i in range(len(fields_)):
            for j in range(i + 1, len(fields_)):
                resid = float(np.max(np.abs(lie_bracket(fields_[i], fields_[j], x))))
                if resid > worst:
                    worst = resid
                    witness = {
                        "pair": [labels[i], labels[j]],
                        "point_index": k,
                        "point": list(map(float, x)),
                        "residual": resid,
                    }
    return CheckReport("symmetry_algebra", worst < tol, worst, tol, witness)


def check_fiber_tangency(sys: IntegralSystem, points) -> CheckReport:
    """Every symmetry field annihilates every integral: <df_j, V> ~ 0."""
    tol = sys.structure.tol.first_integral
    worst = 0.0
    witness = None
    fields_ = sys.symmetry_fields()
    for k, x in enumerate(points):
        vals = [vf(x) for vf in fields_]
        for f in sys.integrals:
            df = f.gradient(x)
            for vf, v in zip(fields_, vals):
                resid = abs(float(df @ v))
                if resid > worst:
                    worst = resid
                    witness = {
                        "integral": f.name,
                        "field": vf.label,
                        "point_index": k,
                        "residual": resid,
                    }
    return CheckReport("fiber_tangency", worst < tol, worst, tol, witness)


@dataclass
class InducedBracket:
    """Sampled pairwise-bracket matrices a_ij grouped by fiber."""

    fiber_groups: list
    matrices: list
    coranks: list
    regular_flags: list
    closure_spread: float
    ddim: int
    dind: int
    dim: int
    casimir_residual: float | None = None
    closure_tol: float = 1e-7

    @property
    def closure_ok(self) -> bool:
        return self.closure_spread < self.closure_tol

    @property
    def completeness_ok(self) -> bool:
        return self.ddim + self.dind == self.dim - 1

    def corank_ok(self) -> bool:
        return all(
            c == self.dind
            for c, reg in zip(self.coranks, self.regular_flags)
            if reg
        )

    def parity_ok(self) -> bool:
        return all((self.ddim - c) % 2 == 0 for c in self.coranks)

    def to_dict(self) -> dict:
        out = {
            "ddim": self.ddim,
            "dind": self.dind,
            "completeness": self.completeness_ok,
            "closure_spread": self.closure_spread,
            "closure_ok": self.closure_ok,
            "corank_ok": self.corank_ok(),
            "parity_ok": self.parity_ok(),
            "fibers": len(self.fiber_groups),
            "regular_points": int(sum(self.regular_flags)),
        }
        if self.casimir_residual is not None:
            out["casimir_residual"] = self.casimir_residual
        return out


def bracket_closure_and_corank(
    sys: IntegralSystem, fiber_samples, casimirs=()
) -> InducedBracket:
    """Closure and corank of the induced bracket on fibers.

    ``fiber_samples`` is a list of groups of points; each group must lie on a
    single fiber (integral values within the fiber-match tolerance).  Groups
    need at least two points for the constancy test to mean anything.
    Optional ``casimirs`` are scalar fields expected to commute with all
    integrals.
    """
    tolcfg = sys.structure.tol
    groups = [list(g) for g in fiber_samples]
    if any(len(g) < 2 for g in groups):
        raise ValueError("each fiber group needs at least two points")
    matrices = []
    coranks = []
    regular = []
    spread = 0.0
    casimir_worst = 0.0 if casimirs else None
    for group in groups:
        fvals = [sys.integral_values(x) for x in group]
        for fv in fvals[1:]:
            if np.max(np.abs(fv - fvals[0])) > tolcfg.fiber_match:
                raise ValueError(
                    "fiber group mixes distinct fibers: "
                    f"{fvals[0].tolist()} vs {fv.tolist()}"
                )
        group_mats = []
        for x in group:
            frame = sys.structure.frame(x)
            grads = [f.gradient(x) for f in sys.integrals]
            a = np.zeros((sys.m, sys.m))
            for i in range(sys.m):
                for j in range(i + 1, sys.m):
                    a[i, j] = frame.bracket(grads[i], grads[j])
                    a[j, i] = -a[i, j]
            group_mats.append(a)
            G = np.array(grads) if sys.m else np.zeros((0, len(x)))
            is_regular = svd_rank(G, tolcfg.rank_rel) == sys.m
            regular.append(is_regular)
            s = np.linalg.svd(a, compute_uv=False) if sys.m else np.array([])
            thr = max(1e-10, (float(s[0]) if len(s) else 0.0) * 1e-8)
            coranks.append(int(np.sum(s <= thr)))
            if casimirs:
                for g in casimirs:
                    dg = g.gradient(x)
                    for df in grads:
                        casimir_worst = max(
                            casimir_worst, abs(frame.bracket(dg, df))
                        )
        base = group_mats[0]
        for a in group_mats[1:]:
            spread = max(spread, float(np.max(np.abs(a - base))))
        matrices.extend(group_mats)
    return InducedBracket(
        fiber_groups=groups,
        matrices=matrices,
        coranks=coranks,
        regular_flags=regular,
        closure_spread=spread,
        ddim=sys.m,
        dind=sys.r,
        dim=sys.structure.chart.dim,
        casimir_residual=casimir_worst,
        closure_tol=tolcfg.closure_fiber,
    )


def check_bracket_of_integrals(sys: IntegralSystem, pairs, points) -> CheckReport:
    """{f_i, f_j} must itself be a first integral, for the given index pairs.

    Refuses when either member of a pair fails the first-integral condition
    at the sampled points (the statement has nothing to say then).  The
    derivatives of the bracket function come from finite differences.
    """
    tolcfg = sys.structure.tol
    S = sys.structure
    members = sorted({i for pair in pairs for i in pair})
    probe = check_first_integrals(
        IntegralSystem(
            S,
            sys.hamiltonian,
            tuple(sys.integrals[i] for i in members),
            r=0,
            enforce_completeness=False,
        ),
        points,
    )
    if not probe.passed:
        raise ValueError(
            f"precondition unmet: {probe.witness['integral']} is not a first "
            f"integral (residual {probe.max_residual:.3e})"
        )
    worst = 0.0
    witness = None
    for (i, j) in pairs:
        g = S.bracket_scalar(sys.integrals[i], sys.integrals[j])
        for k, x in enumerate(points):
            frame = S.frame(x)
            dg = g.gradient(x)
            dH = sys.hamiltonian.gradient(x)
            resid = abs(float(dg @ frame.reeb) + frame.bracket(dg, dH))
            if resid > worst:
                worst = resid
                witness = {
                    "pair": [sys.integrals[i].name, sys.integrals[j].name],
                    "point_index": k,
                    "residual": resid,
                }
    return CheckReport("bracket_of_integrals", worst < tolcfg.bracket_integral_residual, worst, tolcfg.bracket_integral_residual, witness)


def sample_fiber(
    sys: IntegralSystem,
    x0: Point,
    count: int,
    rng: np.random.Generator,
    span: float = 4.0,
    tol: float = 1e-12,
) -> list:
    """Points on the fiber (connected component) of ``x0``, by symmetry flows.

    Flowing the tangent symmetry fields keeps the integral values fixed up to
    integrator error, and stays on the same connected component, which fiber
    grouping by integral values alone cannot guarantee.
    """
    fields_ = sys.symmetry_fields()
    chart = sys.structure.chart
    out = [np.asarray(x0, dtype=float)]
    for _ in range(count - 1):
        x = out[0]
        for vf in fields_:
            tau = float(rng.uniform(0.3, span))
            x = integrate(vf, x, tau, tol, chart).final_state
        out.append(x)
    return out
