"""Numerical toolkit for cosymplectic geometry and integrable Reeb dynamics.

Build a chart with a closed two-form and a closed one-form, derive the Reeb,
Hamiltonian, evaluation and gradient fields from one linear solve per point,
verify declared integral sets, flow the fields with a controlled-error
integrator, and compute period lattices, loop actions and frequencies on
invariant tori.  See README.md for a tour and the ``cosym`` command line.
"""

from .cosym import (
    CosymplecticStructure,
    DegenerateStructureError,
    ToleranceConfig,
    bracket_expr,
    canonical_chart,
    make_canonical,
    make_poincare_cartan,
    twist,
)
from .exprlang import EvalDomainError, Expr, Jet2, ParseError, parse
from .fields import (
    ChartSpec,
    NumericScalarField,
    OneFormField,
    Point,
    ScalarField,
    TwoFormField,
    VectorFieldExpr,
    lie_bracket,
    sample_box,
)
from .flow import SectionSpec, Trajectory, drift_report, integrate, section_crossings
from .integrability import IntegralSystem
from .actionangle import (
    ActionProfile,
    AngleMap,
    FrequencyTable,
    PeriodLattice,
    action_integrals,
    b_matrix,
    detect_period_lattice,
    empirical_frequencies,
    solve_frequencies,
)
from .scenarios import Scenario, builtin, builtin_names

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "ChartSpec",
    "Point",
    "ScalarField",
    "NumericScalarField",
    "OneFormField",
    "TwoFormField",
    "VectorFieldExpr",
    "Expr",
    "Jet2",
    "parse",
    "ParseError",
    "EvalDomainError",
    "lie_bracket",
    "sample_box",
    "CosymplecticStructure",
    "ToleranceConfig",
    "DegenerateStructureError",
    "bracket_expr",
    "canonical_chart",
    "make_canonical",
    "make_poincare_cartan",
    "twist",
    "IntegralSystem",
    "Trajectory",
    "SectionSpec",
    "integrate",
    "drift_report",
    "section_crossings",
    "AngleMap",
    "PeriodLattice",
    "ActionProfile",
    "FrequencyTable",
    "detect_period_lattice",
    "action_integrals",
    "b_matrix",
    "solve_frequencies",
    "empirical_frequencies",
    "Scenario",
    "builtin",
    "builtin_names",
]
