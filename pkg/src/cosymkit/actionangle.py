"""Period lattices on invariant tori, loop actions and flow frequencies.

On a compact regular fiber the commuting fields (X_{f_1}..X_{f_r}, Z) define
a lattice of flow-time vectors returning the base point; its basis cycles
carry the loop actions I_mu = (1/2pi) * integral of a primitive one-form.
Differentiating the actions across neighboring fibers builds the matrix

    b[mu, nu] = dI_mu / df_nu   (nu <= r),
    b[mu, r]  = (1/2pi) * integral of eta over the cycle  (constant column)

and the linear systems b^T w = e_k give the frequencies of the Reeb flow
(k = r+1) and of the Hamiltonian flows of the prefix integrals (k <= r).

Numeric lattice detection is implemented for two-dimensional tori (r+1 = 2):
scan one flow for near-returns, then polish the return times with a damped
least-squares Newton whose Jacobian comes from finite differences of flow
endpoints.  Higher-rank tori use scenario-declared lattice vectors, which are
still polished and verified here.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .cosym import CosymplecticStructure
from .exprlang import Expr, parse
from .fields import TWO_PI, ChartSpec, OneFormField, Point
from .flow import SectionSpec, Trajectory, integrate, section_crossings
from .integrability import IntegralSystem

__all__ = [
    "ActionAngleError",
    "NoReturnError",
    "ContinuationError",
    "CycleError",
    "AngleUnwrapError",
    "AngleMap",
    "PeriodLattice",
    "ActionProfile",
    "FrequencyTable",
    "find_fiber_point",
    "flow_composite",
    "trace_cycle",
    "refine_lattice_vector",
    "detect_period_lattice",
    "align_lattice_to_angles",
    "torus_lattice",
    "line_integral",
    "action_integrals",
    "b_matrix",
    "solve_frequencies",
    "evaluation_frequencies",
    "empirical_frequencies",
    "winding_ratio_test",
    "min_section_return",
]

# 5-node Gauss-Legendre rule on [0, 1]
_GL_NODES = np.array(
    [
        0.5 - 0.45308992296933200 ,
        0.5 - 0.26923465505284155,
        0.5,
        0.5 + 0.26923465505284155,
        0.5 + 0.45308992296933200,
    ]
)
_GL_WEIGHTS = np.array(
    [
        0.5 * 0.23692688505618909,
        0.5 * 0.47862867049936647,
        0.5 * 0.56888888888888889,
        0.5 * 0.47862867049936647,
        0.5 * 0.23692688505618909,
    ]
)


def _worker_count() -> int:
    """Parallelism cap from the COSYM_THREADS environment variable."""
    try:
        return max(1, int(os.environ.get("COSYM_THREADS", "1")))
    except ValueError:
        return 1


class ActionAngleError(Exception):
    """Base class for torus-machinery failures."""


class NoReturnError(ActionAngleError):
    def __init__(self, horizon):
        super().__init__(f"no flow return found within time horizon {horizon}")
        self.horizon = horizon


class ContinuationError(ActionAngleError):
    """Failed to reach a neighboring fiber."""


class CycleError(ActionAngleError):
    """A traced cycle failed to close or a primitive check failed."""


class AngleUnwrapError(ActionAngleError):
    """Angle samples jumped too far; a smaller output step is required."""


@dataclass(frozen=True)
class AngleMap:
    """A declared angle on the torus neighborhood.

    Either the unwrapped value of a periodic coordinate, or the continuous
    argument of a plane curve (atan2 of two expressions).
    """

    chart: ChartSpec
    label: str
    coordinate: str | None = None
    plane: tuple[Expr, Expr] | None = None

    @classmethod
    def from_spec(cls, spec: dict, chart: ChartSpec) -> "AngleMap":
        label = spec.get("label")
        if "coordinate" in spec:
            name = spec["coordinate"]
            if not chart.periodic[chart.index(name)]:
                raise ValueError(f"angle coordinate '{name}' is not periodic")
            return cls(chart, label or name, coordinate=name)
        if "plane" in spec:
            xs, ys = spec["plane"]
            return cls(
                chart,
                label or f"arg({xs},{ys})",
                plane=(parse(xs, chart), parse(ys, chart)),
            )
        raise ValueError("angle map needs 'coordinate' or 'plane'")

    def to_spec(self) -> dict:
        if self.coordinate is not None:
            return {"coordinate": self.coordinate, "label": self.label}
        return {
            "plane": [str(self.plane[0]), str(self.plane[1])],
            "label": self.label,
        }

    def series(self, states: np.ndarray) -> np.ndarray:
        """Continuous angle values along a sequence of (unwrapped) states."""
        states = np.atleast_2d(states)
        if self.coordinate is not None:
            return states[:, self.chart.index(self.coordinate)].copy()
        xs = np.array([self.plane[0].value(s) for s in states])
        ys = np.array([self.plane[1].value(s) for s in states])
        raw = np.arctan2(ys, xs)
        wrapped_jumps = np.abs((np.diff(raw) + math.pi) % TWO_PI - math.pi)
        if len(wrapped_jumps) and np.max(wrapped_jumps) > 0.9 * math.pi:
            raise AngleUnwrapError(
                f"angle '{self.label}' jumps by {np.max(wrapped_jumps):.3f} rad "
                "between samples; reduce the output step"
            )
        return np.unwrap(raw)


@dataclass(frozen=True)
class PeriodLattice:
    """Basis of flow-time vectors closing up on the torus."""

    field_labels: tuple[str, ...]
    base_point: np.ndarray
    basis: np.ndarray        # rows are lattice vectors
    residuals: np.ndarray    # per-row return distance

    @property
    def rank(self) -> int:
        return self.basis.shape[0]

    def to_dict(self) -> dict:
        return {
            "fields": list(self.field_labels),
            "base_point": [float(v) for v in self.base_point],
            "basis": [[float(v) for v in row] for row in self.basis],
            "residuals": [float(v) for v in self.residuals],
        }


@dataclass(frozen=True)
class ActionProfile:
    lattice: PeriodLattice
    actions: np.ndarray
    eta_pairings: np.ndarray
    fiber_values: np.ndarray
    primitive_residual: float

    def to_dict(self) -> dict:
        return {
            "actions": [float(v) for v in self.actions],
            "eta_pairings": [float(v) for v in self.eta_pairings],
            "fiber": [float(v) for v in self.fiber_values],
            "primitive_residual": float(self.primitive_residual),
            "lattice": self.lattice.to_dict(),
        }


@dataclass(frozen=True)
class FrequencyTable:
    """The matrix b with derivative columns and the constant eta column.

    The actions are redundant: the derivative sub-block b[:, :r] has rank r
    even though there are r+1 of them.  ``derivative_rank`` reports it.
    """

    b: np.ndarray
    fiber: np.ndarray
    delta: float
    actions: np.ndarray
    eta_constancy: float
    cond: float
    lattice: PeriodLattice

    @property
    def derivative_rank(self) -> int:
        block = self.b[:, : self.b.shape[1] - 1]
        if block.size == 0:
            return 0
        s = np.linalg.svd(block, compute_uv=False)
        return int(np.sum(s > max(1e-8, float(s[0]) * 1e-8)))

    def to_dict(self) -> dict:
        return {
            "b": [[float(v) for v in row] for row in self.b],
            "fiber": [float(v) for v in self.fiber],
            "delta": self.delta,
            "actions": [float(v) for v in self.actions],
            "eta_constancy": self.eta_constancy,
            "cond": self.cond,
            "derivative_rank": self.derivative_rank,
        }


# --- fiber location ----------------------------------------------------------

def find_fiber_point(
    sys: IntegralSystem,
    target,
    seed: Point,
    tol: float = 1e-12,
    max_iter: int = 60,
) -> np.ndarray:
    """Least-norm Newton solve of f(x) = target starting from ``seed``."""
    target = np.asarray(target, dtype=float)
    x = np.array(seed, dtype=float)
    for _ in range(max_iter):
        resid = target - sys.integral_values(x)
        if np.max(np.abs(resid)) < tol:
            return x
        J = np.array([f.gradient(x) for f in sys.integrals])
        step, *_ = np.linalg.lstsq(J, resid, rcond=None)
        if not np.all(np.isfinite(step)):
            break
        x = x + step
    raise ContinuationError(
        f"could not reach fiber {target.tolist()} from {np.asarray(seed).tolist()}"
    )


# --- composite flows and lattice refinement ----------------------------------

def flow_composite(fields, times, x0: Point, tol: float, chart: ChartSpec) -> np.ndarray:
    """Apply the commuting flows for the given times (last field first)."""
    x = np.array(x0, dtype=float)
    for vf, tau in reversed(list(zip(fields, times))):
        if abs(tau) > 1e-14:
            x = integrate(vf, x, float(tau), tol, chart).final_state
    return x


def trace_cycle(fields, times, x0: Point, tol: float, chart: ChartSpec) -> list[tuple]:
    """Trajectories of the composite flow, in the order they are traversed.

    Returns (field, trajectory) pairs; zero-time segments are skipped.
    """
    x = np.array(x0, dtype=float)
    segments = []
    for vf, tau in reversed(list(zip(fields, times))):
        if tau == 0.0:
            continue
        traj = integrate(vf, x, float(tau), tol, chart)
        segments.append((vf, traj))
        x = traj.final_state
    return segments


def _displacement(fields, times, x0, tol, chart):
    end = flow_composite(fields, times, x0, tol, chart)
    return chart.wrap_difference(end, x0)


def refine_lattice_vector(
    fields,
    times0,
    x0: Point,
    chart: ChartSpec,
    flow_tol: float = 1e-11,
    return_tol: float = 1e-6,
    max_iter: int = 15,
) -> tuple[np.ndarray, float]:
    """Newton-polish candidate return times; Jacobian by endpoint differences."""
    v = np.array(times0, dtype=float)
    best_v = v.copy()
    best = math.inf
    jac_tol = max(flow_tol, 1e-8)  # derivative columns tolerate looser flows
    for _ in range(max_iter):
        F = _displacement(fields, v, x0, flow_tol, chart)
        resid = float(np.linalg.norm(F))
        if resid < best:
            best, best_v = resid, v.copy()
        if resid < 1e-9:
            break
        F_loose = _displacement(fields, v, x0, jac_tol, chart)
        cols = []
        for j in range(len(v)):
            dj = 1e-6 * max(1.0, abs(v[j]))
            vp = v.copy()
            vp[j] += dj
            cols.append((_displacement(fields, vp, x0, jac_tol, chart) - F_loose) / dj)
        J = np.stack(cols, axis=1)
        step, *_ = np.linalg.lstsq(J, -F, rcond=None)
        if not np.all(np.isfinite(step)):
            break
        v = v + step
        if np.max(np.abs(step)) < 1e-12:
            break
    if best > return_tol:
        raise CycleError(
            f"lattice vector failed to close: residual {best:.3e} at times {best_v.tolist()}"
        )
    return best_v, best


def _near_return_candidates(traj: Trajectory, x0, window, t_min):
    chart = traj.chart
    span = abs(traj.duration)
    n = max(64, int(span / 0.05))
    taus = np.linspace(0.0, traj.times[-1], n + 1)
    states = traj.sample(taus)
    dists = np.array([chart.distance(s, x0) for s in states])
    out = []
    for k in range(1, n):
        if dists[k] <= dists[k - 1] and dists[k] <= dists[k + 1]:
            if dists[k] < window and abs(taus[k]) > t_min:
                out.append(float(taus[k]))
    return out


def detect_period_lattice(
    sys: IntegralSystem,
    x0: Point,
    fields=None,
    horizon: float = 250.0,
    window: float = 0.5,
    scan_tol: float = 1e-9,
    flow_tol: float = 1e-11,
    return_tol: float | None = None,
    t_min: float = 0.3,
) -> PeriodLattice:
    """Detect a lattice basis on a two-dimensional invariant torus.

    Each commuting field is scanned for near-returns of its own flow; each
    candidate is polished with the times of both fields free.  A slanted
    combined scan backs up the pure-field scans when a flow is dense on the
    torus.  Raises NoReturnError when the horizon is exhausted (noncompact or
    too-long periods).
    """
    S = sys.structure
    chart = S.chart
    return_tol = return_tol if return_tol is not None else S.tol.lattice_return
    fields = list(fields) if fields is not None else sys.commuting_fields()
    if len(fields) != 2:
        raise ActionAngleError(
            "numeric lattice detection supports two commuting fields; "
            "declare lattice vectors for higher rank"
        )
    x0 = np.asarray(x0, dtype=float)

    def seek(direction) -> tuple[np.ndarray, float] | None:
        if direction == 0:
            field = fields[0]
            def seed_times(s):
                return (s, 0.0)
        elif direction == 1:
            field = fields[1]
            def seed_times(s):
                return (0.0, s)
        else:
            f0, f1 = fields
            def field(x):
                return f0(x) + f1(x)
            def seed_times(s):
                return (s, s)
        chunk = 8 * TWO_PI
        start = 0.0
        x_start = x0
        while start < horizon:
            tau = min(chunk, horizon - start)
            traj = integrate(field, x_start, tau, scan_tol, chart)
            for s in _near_return_candidates(traj, x0, window, t_min - start):
                try:
                    v, resid = refine_lattice_vector(
                        fields, seed_times(start + s), x0, chart,
                        flow_tol=flow_tol, return_tol=return_tol,
                    )
                except CycleError:
                    continue
                if np.max(np.abs(v)) > t_min:
                    return v, resid
            start += tau
            x_start = traj.final_state
        return None

    found = []
    for direction in (0, 1, 2):
        hit = seek(direction)
        if hit is None:
            continue
        v, resid = hit
        if found:
            det = abs(np.linalg.det(np.array([found[0][0], v])))
            if det < 1e-3 * np.linalg.norm(found[0][0]) * np.linalg.norm(v):
                continue
        found.append((v, resid))
        if len(found) == 2:
            break
    if len(found) < 2:
        raise NoReturnError(horizon)
    basis = np.array([found[0][0], found[1][0]])
    residuals = np.array([found[0][1], found[1][1]])
    return PeriodLattice(
        tuple(getattr(f, "label", "field") for f in fields), x0, basis, residuals
    )


def _cycle_states(segments, per_step: int = 4):
    """Sampled states along a traced cycle, in traversal order."""
    states = []
    for _, traj in segments:
        taus = []
        for i in range(len(traj.times) - 1):
            t0, t1 = traj.times[i], traj.times[i + 1]
            taus.extend(t0 + (t1 - t0) * np.linspace(0, 1, per_step, endpoint=False))
        taus.append(traj.times[-1])
        states.extend(traj.sample(taus))
    return np.array(states)


def cycle_windings(segments, angle_maps) -> np.ndarray:
    """Net winding (in turns) of each declared angle along a traced cycle."""
    states = _cycle_states(segments)
    out = []
    for amap in angle_maps:
        series = amap.series(states)
        out.append((series[-1] - series[0]) / TWO_PI)
    return np.array(out)


def align_lattice_to_angles(
    sys: IntegralSystem,
    lattice: PeriodLattice,
    angle_maps,
    fields=None,
    flow_tol: float = 1e-11,
) -> PeriodLattice:
    """Change the lattice basis so cycle mu winds angle mu once and others not.

    The winding matrix of the detected basis against the declared angles must
    be unimodular; its integer inverse transforms the basis.  Rows are then
    re-polished.
    """
    fields = list(fields) if fields is not None else sys.commuting_fields()
    k = lattice.rank
    if len(angle_maps) != k:
        raise ActionAngleError(
            f"need {k} angle maps to align a rank-{k} lattice, got {len(angle_maps)}"
        )
    chart = sys.structure.chart
    wind_tol = max(flow_tol, 1e-8)  # winding counts only need coarse traces
    W = np.zeros((k, k))
    for mu in range(k):
        segments = trace_cycle(fields, lattice.basis[mu], lattice.base_point, wind_tol, chart)
        W[mu] = cycle_windings(segments, angle_maps)
    Wi = np.rint(W).astype(int)
    if np.max(np.abs(W - Wi)) > 5e-3:
        raise ActionAngleError(f"cycle windings are not integers: {W.tolist()}")
    det = int(round(np.linalg.det(Wi)))
    if abs(det) != 1:
        raise ActionAngleError(
            f"winding matrix {Wi.tolist()} is not unimodular; "
            "angle maps do not match the detected torus"
        )
    if np.array_equal(Wi, np.eye(k, dtype=int)):
        return lattice
    Winv = np.rint(np.linalg.inv(Wi)).astype(int)
    new_basis = []
    new_resid = []
    for mu in range(k):
        guess = Winv[mu].astype(float) @ lattice.basis
        v, resid = refine_lattice_vector(
            fields, guess, lattice.base_point, chart, flow_tol=flow_tol,
            return_tol=sys.structure.tol.lattice_return,
        )
        new_basis.append(v)
        new_resid.append(resid)
    return PeriodLattice(
        lattice.field_labels,
        lattice.base_point,
        np.array(new_basis),
        np.array(new_resid),
    )


def torus_lattice(
    sys: IntegralSystem,
    x0: Point,
    fields=None,
    angle_maps=(),
    declared_vectors=None,
    flow_tol: float = 1e-11,
    **detect_kwargs,
) -> PeriodLattice:
    """Lattice at ``x0``: polish declared vectors or detect, then align."""
    fields = list(fields) if fields is not None else sys.commuting_fields()
    chart = sys.structure.chart
    if declared_vectors is not None:
        basis = []
        residuals = []
        for row in np.asarray(declared_vectors, dtype=float):
            v, resid = refine_lattice_vector(
                fields, row, x0, chart, flow_tol=flow_tol,
                return_tol=sys.structure.tol.lattice_return,
            )
            basis.append(v)
            residuals.append(resid)
        lattice = PeriodLattice(
            tuple(getattr(f, "label", "field") for f in fields),
            np.asarray(x0, dtype=float),
            np.array(basis),
            np.array(residuals),
        )
    else:
        lattice = detect_period_lattice(sys, x0, fields=fields, flow_tol=flow_tol, **detect_kwargs)
    if angle_maps:
        lattice = align_lattice_to_angles(sys, lattice, angle_maps, fields, flow_tol)
    return lattice


# --- loop actions -------------------------------------------------------------

def line_integral(segments, form: OneFormField) -> float:
    """Integral of a one-form along traced segments.

    Gauss-Legendre with five nodes per accepted step; states interpolate from
    the dense output and velocities are exact field evaluations.
    """
    total = 0.0
    for field, traj in segments:
        for i in range(len(traj.times) - 1):
            t0, t1 = traj.times[i], traj.times[i + 1]
            h = t1 - t0
            for node, weight in zip(_GL_NODES, _GL_WEIGHTS):
                x = traj.state_at(t0 + h * node)
                total += weight * h * float(form.at(x) @ field(x))
    return total


def action_integrals(
    sys: IntegralSystem,
    lattice: PeriodLattice,
    lam: OneFormField,
    fields=None,
    flow_tol: float = 1e-11,
) -> ActionProfile:
    """Loop actions (1/2pi) * integral of lambda over each lattice cycle.

    Verifies that -d(lambda) = omega on states sampled from the traced cycles
    and that every cycle closes; also records the eta pairing of each cycle,
    which is the constant column of the frequency matrix.
    """
    S = sys.structure
    chart = S.chart
    fields = list(fields) if fields is not None else sys.commuting_fields()
    x0 = lattice.base_point
    actions = []
    pairings = []
    prim_worst = 0.0
    for mu in range(lattice.rank):
        segments = trace_cycle(fields, lattice.basis[mu], x0, flow_tol, chart)
        if segments:
            end = segments[-1][1].final_state
            gap = float(np.linalg.norm(chart.wrap_difference(end, x0)))
            if gap > 10 * S.tol.lattice_return:
                raise CycleError(f"cycle {mu} failed to close: gap {gap:.3e}")
            check_states = _cycle_states(segments)[:: max(1, lattice.rank * 8)]
            resid = S.check_primitive(check_states, lam)
            prim_worst = max(prim_worst, resid)
            if resid > S.tol.primitive_check:
                raise CycleError(
                    f"one-form is not a primitive of omega: residual {resid:.3e}"
                )
        actions.append(line_integral(segments, lam) / TWO_PI)
        pairings.append(line_integral(segments, S.eta) / TWO_PI)
    return ActionProfile(
        lattice,
        np.array(actions),
        np.array(pairings),
        sys.integral_values(x0),
        prim_worst,
    )


# --- frequency matrix and solves ----------------------------------------------

def b_matrix(
    sys: IntegralSystem,
    fiber,
    delta: float = 1e-4,
    lam: OneFormField | None = None,
    seed: Point | None = None,
    fields=None,
    angle_maps=(),
    declared_vectors=None,
    flow_tol: float = 1e-11,
    **detect_kwargs,
) -> FrequencyTable:
    """Frequency matrix at the given fiber, by central differences of actions.

    Derivative columns use fibers ``fiber +- delta * e_nu`` for nu <= r,
    reached by Newton continuation; lattice vectors at the displaced fibers
    are polished from the base lattice.  The last column is the eta pairing
    of each base cycle; its spread across the continuation fibers is recorded
    as ``eta_constancy`` (it must be constant).
    """
    S = sys.structure
    lam = lam if lam is not None else S.primitive
    if lam is None:
        raise ActionAngleError("no primitive one-form available for actions")
    fields = list(fields) if fields is not None else sys.commuting_fields()
    fiber = np.asarray(fiber, dtype=float)
    if seed is None:
        box = np.asarray(S.domain_box, dtype=float)
        seed = box[:, 0] + 0.61803398875 * (box[:, 1] - box[:, 0])
    x0 = find_fiber_point(sys, fiber, seed)
    lattice0 = torus_lattice(
        sys, x0, fields=fields, angle_maps=angle_maps,
        declared_vectors=declared_vectors, flow_tol=flow_tol, **detect_kwargs,
    )
    base = action_integrals(sys, lattice0, lam, fields, flow_tol)
    k = lattice0.rank
    b = np.zeros((k, k))
    pairing_rows = [base.eta_pairings]

    def continuation(task):
        nu, sgn = task
        target = fiber.copy()
        target[nu] += sgn * delta
        x = find_fiber_point(sys, target, x0)
        lat = torus_lattice(
            sys, x, fields=fields, angle_maps=(),
            declared_vectors=lattice0.basis, flow_tol=flow_tol,
        )
        return action_integrals(sys, lat, lam, fields, flow_tol)

    tasks = [(nu, sgn) for nu in range(sys.r) for sgn in (+1.0, -1.0)]
    workers = _worker_count()
    if workers > 1 and len(tasks) > 1:
        # independent immutable inputs; results joined in task order
        with ThreadPoolExecutor(max_workers=workers) as pool:
            profiles = dict(zip(tasks, pool.map(continuation, tasks)))
    else:
        profiles = {task: continuation(task) for task in tasks}
    for nu in range(sys.r):
        plus = profiles[(nu, +1.0)]
        minus = profiles[(nu, -1.0)]
        pairing_rows.extend([plus.eta_pairings, minus.eta_pairings])
        b[:, nu] = (plus.actions - minus.actions) / (2 * delta)
    b[:, k - 1] = base.eta_pairings
    pairing_rows = np.array(pairing_rows)
    eta_constancy = float(np.max(np.abs(pairing_rows - pairing_rows[0])))
    return FrequencyTable(
        b=b,
        fiber=fiber,
        delta=delta,
        actions=base.actions,
        eta_constancy=eta_constancy,
        cond=float(np.linalg.cond(b)),
        lattice=lattice0,
    )


def solve_frequencies(table: FrequencyTable, mode: str, k: int | None = None) -> np.ndarray:
    """Solve b^T w = e_mode for the flow frequencies in the cycle basis.

    ``mode`` is "reeb" (right-hand side selects the eta column) or
    "hamiltonian" with a 1-based prefix index ``k``.
    """
    b = table.b
    size = b.shape[0]
    if table.cond > 1e8:
        raise ActionAngleError(f"frequency matrix is ill-conditioned: cond={table.cond:.3e}")
    rhs = np.zeros(size)
    if mode == "reeb":
        rhs[size - 1] = 1.0
    elif mode == "hamiltonian":
        if k is None or not 1 <= k <= size - 1:
            raise ValueError(f"hamiltonian mode needs a prefix index 1..{size - 1}")
        rhs[k - 1] = 1.0
    else:
        raise ValueError(f"unknown mode '{mode}'")
    return np.linalg.solve(b.T, rhs)


def evaluation_frequencies(
    table: FrequencyTable, sys: IntegralSystem, probes=None
) -> np.ndarray:
    """Frequencies of the evaluation flow Y_H in the cycle basis.

    Writes dH as a constant combination of the prefix differentials
    df_1..df_r (fit at probe points); Y_H = Z + sum c_nu X_{f_nu} then gives
    w_eval = w_reeb + sum c_nu W^nu.  Fails when H is not generated by the
    commuting prefix.
    """
    if probes is None:
        probes = [table.lattice.base_point]
    rows = []
    rhs = []
    for x in probes:
        G = np.array([f.gradient(x) for f in sys.integrals[: sys.r]])
        if sys.r == 0:
            G = np.zeros((0, len(x)))
        rows.append(G.T)
        rhs.append(sys.hamiltonian.gradient(x))
    Gs = np.vstack(rows) if sys.r else np.zeros((0, 0))
    hs = np.concatenate(rhs)
    if sys.r == 0:
        if np.max(np.abs(hs)) > 1e-8:
            raise ActionAngleError("H is not constant and the prefix is empty")
        coeffs = np.zeros(0)
    else:
        coeffs, *_ = np.linalg.lstsq(Gs, hs, rcond=None)
        resid = np.max(np.abs(Gs @ coeffs - hs))
        if resid > 1e-8 * max(1.0, float(np.max(np.abs(hs)))):
            raise ActionAngleError(
                f"dH is not a constant combination of the prefix differentials "
                f"(residual {resid:.3e})"
            )
    omega = solve_frequencies(table, "reeb")
    for nu, c in enumerate(coeffs, start=1):
        if abs(c) > 1e-12:
            omega = omega + c * solve_frequencies(table, "hamiltonian", nu)
    return omega


# --- empirical frequencies and winding ----------------------------------------

def empirical_frequencies(
    sys: IntegralSystem,
    field,
    x0: Point,
    angle_maps,
    tau_end: float,
    sample_step: float = 0.1,
    flow_tol: float = 1e-10,
) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares slopes of the declared angles along one trajectory.

    Returns (slopes, residuals); the residual is the max deviation of the
    unwrapped angle from its linear fit.  A residual below the configured
    angle-fit tolerance certifies linear flow in these angles.
    """
    chart = sys.structure.chart
    traj = integrate(field, x0, tau_end, flow_tol, chart)
    taus = np.arange(0.0, tau_end, sample_step)
    taus = np.append(taus, tau_end)
    states = traj.sample(taus)
    A = np.vstack([taus, np.ones_like(taus)]).T
    slopes = []
    residuals = []
    for amap in angle_maps:
        series = amap.series(states)
        coef, *_ = np.linalg.lstsq(A, series, rcond=None)
        fit = A @ coef
        slopes.append(float(coef[0]))
        residuals.append(float(np.max(np.abs(series - fit))))
    return np.array(slopes), np.array(residuals)


def winding_ratio_test(
    freqs, max_denominator: int = 32, rational_tol: float = 1e-4
) -> dict:
    """Classify pairwise frequency ratios as commensurate or not.

    A ratio counts as rational when some fraction with denominator up to
    ``max_denominator`` approximates it within ``rational_tol`` (well above
    the measurement error of the slope fits).
    """
    freqs = np.asarray(freqs, dtype=float)
    pairs = []
    any_irrational = False
    for i in range(len(freqs)):
        for j in range(i + 1, len(freqs)):
            if freqs[j] == 0.0 and freqs[i] == 0.0:
                continue
            lo, hi = sorted([abs(freqs[i]), abs(freqs[j])])
            if hi == 0.0:
                continue
            ratio = lo / hi if hi else 0.0
            frac = Fraction(ratio).limit_denominator(max_denominator)
            err = abs(ratio - float(frac))
            rational = err <= rational_tol
            any_irrational = any_irrational or not rational
            pairs.append(
                {
                    "pair": [i, j],
                    "ratio": ratio,
                    "closest_fraction": f"{frac.numerator}/{frac.denominator}",
                    "error": err,
                    "rational": rational,
                }
            )
    return {"pairs": pairs, "irrational_winding": any_irrational}


def min_section_return(
    sys: IntegralSystem,
    field,
    x0: Point,
    tau_max: float,
    section_coordinate: str | None = None,
    flow_tol: float = 1e-9,
    t_min: float = 1.0,
) -> tuple[float, float]:
    """Closest approach to ``x0`` among section returns up to ``tau_max``.

    The section is the level set of a periodic coordinate through ``x0``
    (defaults to the first periodic coordinate), the natural candidate times
    for near returns.  Returns (min distance, time of that crossing).
    """
    chart = sys.structure.chart
    if section_coordinate is None:
        idx = next(i for i, per in enumerate(chart.periodic) if per)
        section_coordinate = chart.names[idx]
    x0 = np.asarray(x0, dtype=float)
    traj = integrate(field, x0, tau_max, flow_tol, chart)
    events = section_crossings(
        traj,
        SectionSpec(section_coordinate, float(x0[chart.index(section_coordinate)]), direction=1),
        field=field,
    )
    best = (math.inf, math.nan)
    for ev in events:
        if ev.time < t_min:
            continue
        dist = chart.distance(ev.state, x0)
        if dist < best[0]:
            best = (dist, ev.time)
    if not math.isfinite(best[0]):
        raise NoReturnError(tau_max)
    return best
