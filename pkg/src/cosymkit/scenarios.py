"""Built-in model systems with hand-derived oracle values.

Every builtin is defined as a plain JSON-able dictionary; the packaged
scenario files under ``data/scenarios`` are byte-identical serializations of
these dictionaries, and external scenario files go through the same schema
validation and construction path.  Oracle entries carry a derivation note so
each expected number is traceable.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib.resources import files as _pkg_files

import jsonschema
import numpy as np

from .actionangle import AngleMap
from .cosym import CosymplecticStructure, ToleranceConfig
from .fields import ChartSpec, OneFormField, ScalarField, TwoFormField
from .integrability import IntegralSystem

__all__ = [
    "Scenario",
    "UnknownScenarioError",
    "ScenarioFormatError",
    "builtin",
    "builtin_names",
    "builtin_dict",
    "builtin_file_path",
    "scenario_json_text",
    "load_scenario_dict",
    "load_scenario_file",
    "schema_dict",
    "schema_file_path",
]

_TWO_PI = 2 * math.pi
_PI_SQRT2 = _TWO_PI / math.sqrt(2.0)


class UnknownScenarioError(Exception):
    def __init__(self, name):
        super().__init__(
            f"unknown scenario '{name}'; available: {', '.join(builtin_names())}"
        )


class ScenarioFormatError(Exception):
    """Scenario JSON failed schema validation or construction."""


@dataclass(frozen=True)
class Scenario:
    """A loaded model: structure, integral system and optional torus data."""

    name: str
    structure: CosymplecticStructure
    system: IntegralSystem
    lam: OneFormField | None
    angle_maps: tuple[AngleMap, ...]
    casimirs: tuple[ScalarField, ...]
    declared_lattice: np.ndarray | None
    fiber_compact: bool
    oracles: dict
    raw: dict

    @property
    def chart(self) -> ChartSpec:
        return self.structure.chart

    def base_point(self) -> np.ndarray:
        """Preferred sample point: declared oracle base point, else an
        off-center point of the domain box (avoids symmetric singular sets)."""
        entry = self.oracles.get("base_point")
        if entry:
            return np.asarray(entry["value"], dtype=float)
        box = np.asarray(self.structure.domain_box, dtype=float)
        return box[:, 0] + 0.61803398875 * (box[:, 1] - box[:, 0])

    def to_dict(self) -> dict:
        return self.raw


# --- catalog ------------------------------------------------------------------

_OSC_1D = {
    "name": "ext-oscillator-1d",
    "chart": {
        "names": ["t", "q", "p"],
        "periodic": [True, False, False],
        "box": [[0.0, _TWO_PI], [-2.5, 2.5], [-2.5, 2.5]],
    },
    "omega": {"q,p": "1"},
    "eta": ["1", "0", "0"],
    "hamiltonian": "(q^2 + p^2)/2",
    "integrals": {"r": 1, "fields": [{"name": "H", "expr": "(q^2 + p^2)/2"}]},
    "lambda": ["0", "p", "0"],
    "angle_maps": [
        {"plane": ["q", "-p"], "label": "phase"},
        {"coordinate": "t", "label": "t"},
    ],
    "fiber_compact": True,
    "oracles": {
        "base_point": {
            "value": [0.0, 1.0, 0.0],
            "note": "lies on the fiber H = 1/2",
        },
        "reeb_frequencies": {
            "value": [0.0, 1.0],
            "note": "the Reeb field is d/dt: no phase motion, unit time rate",
        },
        "evaluation_frequencies": {
            "value": [1.0, 1.0],
            "note": "unit oscillator: q = cos(tau), p = -sin(tau), t = tau",
        },
        "hamiltonian_frequencies": {
            "k": 1,
            "value": [1.0, 0.0],
            "note": "the H-flow advances the phase angle at unit rate, t frozen",
        },
        "action_slope": {
            "value": 1.0,
            "note": "phase-circle action is the enclosed area over 2*pi:"
            " pi*r^2/(2*pi) = H since r^2 = 2H",
        },
    },
}

_PC_1D = {
    "name": "pc-oscillator-1d",
    "chart": {
        "names": ["t", "q", "p"],
        "periodic": [True, False, False],
        "box": [[0.0, _TWO_PI], [-2.5, 2.5], [-2.5, 2.5]],
    },
    "omega": {"t,q": "-q", "t,p": "-p", "q,p": "1"},
    "eta": ["1", "0", "0"],
    "hamiltonian": "0",
    "integrals": {"r": 1, "fields": [{"name": "H", "expr": "(q^2 + p^2)/2"}]},
    "lambda": ["-(q^2 + p^2)/2", "p", "0"],
    "angle_maps": [
        {"plane": ["q", "-p"], "label": "phase"},
        {"coordinate": "t", "label": "t"},
    ],
    "fiber_compact": True,
    "oracles": {
        "base_point": {
            "value": [0.0, 1.0, 0.0],
            "note": "lies on the fiber H = 1/2",
        },
        "reeb_frequencies": {
            "value": [1.0, 1.0],
            "note": "the Reeb field of the twisted structure is the oscillator"
            " evaluation field: phase and time advance together",
        },
        "structure_note": {
            "value": None,
            "note": "omega is the flat form twisted by dH ^ dt; the stored"
            " primitive is p dq - H dt",
        },
    },
}

_OSC_2D_SUPER = {
    "name": "ext-oscillator-2d-super",
    "chart": {
        "names": ["t", "q1", "q2", "p1", "p2"],
        "periodic": [True, False, False, False, False],
        "box": [[0.0, _TWO_PI], [-1.5, 1.5], [-1.5, 1.5], [-1.5, 1.5], [-1.5, 1.5]],
    },
    "omega": {"q1,p1": "1", "q2,p2": "1"},
    "eta": ["1", "0", "0", "0", "0"],
    "hamiltonian": "(q1^2 + q2^2 + p1^2 + p2^2)/2",
    "integrals": {
        "r": 1,
        "fields": [
            {"name": "H", "expr": "(q1^2 + q2^2 + p1^2 + p2^2)/2"},
            {"name": "L", "expr": "q1*p2 - q2*p1"},
            {"name": "F", "expr": "(p1^2 - p2^2 + q1^2 - q2^2)/2"},
        ],
    },
    "lambda": ["0", "p1", "p2", "0", "0"],
    "angle_maps": [
        {"plane": ["q1", "-p1"], "label": "phase1"},
        {"coordinate": "t", "label": "t"},
    ],
    "casimirs": ["(q1^2 + q2^2 + p1^2 + p2^2)/2"],
    "fiber_compact": True,
    "oracles": {
        "base_point": {
            "value": [0.0, 1.0, 0.1, -0.2, 1.1],
            "note": "generic: p1*p2 + q1*q2 = -0.12 != 0 keeps (H, L, F) of rank 3",
        },
        "ddim_dind": {
            "value": [3, 1],
            "note": "three integrals, H central: the pairwise bracket matrix"
            " has the single kernel direction H",
        },
        "induced_corank": {
            "value": 1,
            "note": "{L, F} = 2*(p1*p2 + q1*q2) is nonzero at generic points,"
            " so the 3x3 antisymmetric matrix has rank 2",
        },
        "reeb_frequencies": {
            "value": [0.0, 1.0],
            "note": "canonical structure: the Reeb field moves only t",
        },
        "evaluation_frequencies": {
            "value": [1.0, 1.0],
            "note": "isotropic oscillator: both phases advance at rate 1, as"
            " does t; the first angle tracks mode 1",
        },
    },
}

_OSC_ANISO = {
    "name": "ext-oscillator-anisotropic",
    "chart": {
        "names": ["t", "q1", "q2", "p1", "p2"],
        "periodic": [True, False, False, False, False],
        "box": [[0.0, _TWO_PI], [-2.5, 2.5], [-3.5, 3.5], [-2.5, 2.5], [-5.0, 5.0]],
    },
    "omega": {"q1,p1": "1", "q2,p2": "1"},
    "eta": ["1", "0", "0", "0", "0"],
    "hamiltonian": "(p1^2 + p2^2 + q1^2 + 2*q2^2)/2",
    "integrals": {
        "r": 2,
        "fields": [
            {"name": "H1", "expr": "(p1^2 + q1^2)/2"},
            {"name": "H2", "expr": "(p2^2 + 2*q2^2)/2"},
        ],
    },
    "lambda": ["0", "p1", "p2", "0", "0"],
    "angle_maps": [
        {"plane": ["q1", "-p1"], "label": "phase1"},
        {"plane": ["q2", "-p2/sqrt(2)"], "label": "phase2"},
        {"coordinate": "t", "label": "t"},
    ],
    "period_lattice": [
        [_TWO_PI, 0.0, 0.0],
        [0.0, _PI_SQRT2, 0.0],
        [0.0, 0.0, _TWO_PI],
    ],
    "fiber_compact": True,
    "oracles": {
        "base_point": {
            "value": [0.0, 1.0, 3.0, 0.0, 0.0],
            "note": "mode amplitudes 1 and 3: H1 = 1/2, H2 = 9; the large"
            " second amplitude keeps near-returns of the dense orbit"
            " visibly separated",
        },
        "evaluation_frequencies": {
            "value": [1.0, 1.4142135623730951, 1.0],
            "note": "mode frequencies 1 and sqrt(2) (stiffness 2 in q2), unit"
            " time rate",
        },
        "b_diagonal": {
            "value": [1.0, 0.7071067811865476, 1.0],
            "note": "separable actions I1 = H1, I2 = H2/sqrt(2); eta column"
            " pairs only the t-cycle",
        },
        "period_lattice_note": {
            "value": None,
            "note": "mode periods 2*pi and 2*pi/sqrt(2) under their own"
            " Hamiltonian flows, t-circle period 2*pi under the Reeb flow;"
            " declared because rank-3 lattices are not auto-detected",
        },
    },
}

_FLAT_TORUS = {
    "name": "flat-torus-reeb",
    "chart": {
        "names": ["th1", "th2", "th3"],
        "periodic": [True, True, True],
        "box": [[0.0, _TWO_PI], [0.0, _TWO_PI], [0.0, _TWO_PI]],
    },
    "omega": {"th1,th2": "1"},
    "eta": ["0", "0", "1"],
    "hamiltonian": "0",
    "integrals": {"r": 1, "fields": [{"name": "C1", "expr": "cos(th1)"}]},
    "angle_maps": [
        {"coordinate": "th2", "label": "th2"},
        {"coordinate": "th3", "label": "th3"},
    ],
    "casimirs": ["cos(th1)"],
    "fiber_compact": True,
    "oracles": {
        "base_point": {
            "value": [1.0, 0.5, 0.0],
            "note": "sin(th1) = 0.84 nonzero keeps dC1 of full rank",
        },
        "reeb_vector": {
            "value": [0.0, 0.0, 1.0],
            "note": "constant-coefficient structure: the kernel of omega is"
            " the th3 direction and eta pairs it to 1",
        },
    },
}

_OSC_1D_LINE = {
    "name": "ext-oscillator-1d-line",
    "chart": {
        "names": ["t", "q", "p"],
        "periodic": [False, False, False],
        "box": [[-30.0, 30.0], [-2.5, 2.5], [-2.5, 2.5]],
    },
    "omega": {"q,p": "1"},
    "eta": ["1", "0", "0"],
    "hamiltonian": "(q^2 + p^2)/2",
    "integrals": {"r": 1, "fields": [{"name": "H", "expr": "(q^2 + p^2)/2"}]},
    "lambda": ["0", "p", "0"],
    "angle_maps": [{"plane": ["q", "-p"], "label": "phase"}],
    "fiber_compact": False,
    "oracles": {
        "base_point": {
            "value": [0.0, 1.0, 0.0],
            "note": "lies on the fiber H = 1/2",
        },
        "topology_note": {
            "value": None,
            "note": "t runs over the real line: invariant sets are cylinders,"
            " the Reeb flow never returns, torus machinery must refuse",
        },
    },
}

_CATALOG = {
    d["name"]: d
    for d in (_OSC_1D, _PC_1D, _OSC_2D_SUPER, _OSC_ANISO, _FLAT_TORUS, _OSC_1D_LINE)
}


def builtin_names() -> tuple[str, ...]:
    return tuple(_CATALOG)


def builtin_dict(name: str) -> dict:
    try:
        return _CATALOG[name]
    except KeyError:
        raise UnknownScenarioError(name) from None


def scenario_json_text(data: dict) -> str:
    """Canonical serialization used for the packaged scenario files."""
    return json.dumps(data, indent=2) + "\n"


def schema_file_path():
    return _pkg_files("cosymkit").joinpath("data/schema/scenario.json")


def builtin_file_path(name: str):
    if name not in _CATALOG:
        raise UnknownScenarioError(name)
    return _pkg_files("cosymkit").joinpath(f"data/scenarios/{name}.json")


def schema_dict() -> dict:
    with schema_file_path().open("r", encoding="utf-8") as handle:
        return json.load(handle)


def load_scenario_dict(data: dict) -> Scenario:
    """Validate a scenario dictionary against the schema and construct it."""
    try:
        jsonschema.validate(data, schema_dict())
    except jsonschema.ValidationError as err:
        raise ScenarioFormatError(f"scenario failed schema validation: {err.message}") from err
    try:
        chart = ChartSpec(tuple(data["chart"]["names"]), tuple(data["chart"]["periodic"]))
        box = tuple((lo, hi) for lo, hi in data["chart"]["box"])
        tol = ToleranceConfig.from_dict(data.get("tolerances"))
        omega = TwoFormField.from_upper_sources(data["omega"], chart)
        eta = OneFormField.from_sources(data["eta"], chart)
        lam = (
            OneFormField.from_sources(data["lambda"], chart)
            if "lambda" in data
            else None
        )
        structure = CosymplecticStructure(chart, omega, eta, box, lam, tol)
        H = ScalarField.from_source(data["hamiltonian"], chart, "H")
        integrals = tuple(
            ScalarField.from_source(item["expr"], chart, item["name"])
            for item in data["integrals"]["fields"]
        )
        system = IntegralSystem(structure, H, integrals, int(data["integrals"]["r"]))
        angle_maps = tuple(
            AngleMap.from_spec(spec, chart) for spec in data.get("angle_maps", [])
        )
        casimirs = tuple(
            ScalarField.from_source(src, chart, f"G{k + 1}")
            for k, src in enumerate(data.get("casimirs", []))
        )
        lattice = (
            np.asarray(data["period_lattice"], dtype=float)
            if "period_lattice" in data
            else None
        )
        if lattice is not None and lattice.shape != (system.r + 1, system.r + 1):
            raise ScenarioFormatError(
                f"period_lattice must be {(system.r + 1, system.r + 1)}, got {lattice.shape}"
            )
    except ScenarioFormatError:
        raise
    except Exception as err:
        raise ScenarioFormatError(f"scenario construction failed: {err}") from err
    return Scenario(
        name=data["name"],
        structure=structure,
        system=system,
        lam=lam,
        angle_maps=angle_maps,
        casimirs=casimirs,
        declared_lattice=lattice,
        fiber_compact=bool(data.get("fiber_compact", True)),
        oracles=data.get("oracles", {}),
        raw=data,
    )


def load_scenario_file(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as handle:
        try:
            data = json.load(handle)
        except json.JSONDecodeError as err:
            raise ScenarioFormatError(f"malformed JSON in {path}: {err}") from err
    return load_scenario_dict(data)


def builtin(name: str) -> Scenario:
    """Load a catalog scenario; every builtin passes structure validation."""
    scenario = load_scenario_dict(builtin_dict(name))
    report = scenario.structure.validate(samples=25, seed=0)
    if not report.passed:
        raise ScenarioFormatError(
            f"builtin '{name}' failed structure validation: {report.to_dict()}"
        )
    return scenario
