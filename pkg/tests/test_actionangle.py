import math

import numpy as np
import pytest

from cosymkit.actionangle import (
    AngleMap,
    AngleUnwrapError,
    NoReturnError,
    action_integrals,
    align_lattice_to_angles,
    b_matrix,
    detect_period_lattice,
    empirical_frequencies,
    evaluation_frequencies,
    find_fiber_point,
    line_integral,
    min_section_return,
    refine_lattice_vector,
    solve_frequencies,
    torus_lattice,
    trace_cycle,
    winding_ratio_test,
)
from cosymkit.cosym import make_canonical, make_poincare_cartan
from cosymkit.fields import ChartSpec, OneFormField, ScalarField
from cosymkit.integrability import IntegralSystem

TWO_PI = 2 * math.pi
CHART = ChartSpec(("t", "q", "p"), (True, False, False))
BOX = [[0.0, TWO_PI], [-2.5, 2.5], [-2.5, 2.5]]


def oscillator_system():
    S = make_canonical(1, box=BOX)
    H = ScalarField.from_source("(q^2 + p^2)/2", CHART, "H")
    return IntegralSystem(S, H, (H,), r=1)


def oscillator_angles():
    return (
        AngleMap.from_spec({"plane": ["q", "-p"], "label": "phase"}, CHART),
        AngleMap.from_spec({"coordinate": "t", "label": "t"}, CHART),
    )


def pc_system():
    H = ScalarField.from_source("(q^2 + p^2)/2", CHART, "H")
    S = make_poincare_cartan(H, box=BOX)
    zero = ScalarField.from_source("0", CHART, "0")
    return IntegralSystem(S, zero, (H,), r=1)


def lattices_equal(B1, B2, tol=1e-6):
    """Same lattice iff the change of basis is an integer matrix of det +-1."""
    M = B2 @ np.linalg.inv(B1)
    Mi = np.rint(M)
    return np.max(np.abs(M - Mi)) < tol and abs(abs(np.linalg.det(Mi)) - 1) < tol


def test_lattice_oscillator_commuting_fields():
    sys = oscillator_system()
    x0 = np.array([0.0, 1.0, 0.0])
    lattice = detect_period_lattice(sys, x0)
    # X_H closes after 2*pi at fixed t; Z closes the t-circle
    assert lattices_equal(lattice.basis, np.diag([TWO_PI, TWO_PI]))
    assert np.all(lattice.residuals < 1e-6)


def test_lattice_evaluation_and_hamiltonian_fields():
    sys = oscillator_system()
    S = sys.structure
    H = sys.hamiltonian
    x0 = np.array([0.0, 1.0, 0.0])
    lattice = detect_period_lattice(
        sys, x0, fields=[S.evaluation_vf(H), S.hamiltonian_vf(H)]
    )
    expected = np.array([[TWO_PI, -TWO_PI], [0.0, TWO_PI]])
    assert lattices_equal(lattice.basis, expected)


def test_lattice_no_return_on_line():
    S = make_canonical(1, box=[[-30.0, 30.0], [-2.5, 2.5], [-2.5, 2.5]], t_periodic=False)
    H = ScalarField.from_source("(q^2 + p^2)/2", S.chart, "H")
    sys = IntegralSystem(S, H, (H,), r=1)
    with pytest.raises(NoReturnError):
        detect_period_lattice(sys, np.array([0.0, 1.0, 0.0]), horizon=60.0)


def test_refine_rejects_far_guess():
    sys = oscillator_system()
    from cosymkit.actionangle import CycleError

    with pytest.raises(CycleError):
        refine_lattice_vector(
            sys.commuting_fields(), (1.0, 0.5), np.array([0.0, 1.0, 0.0]), CHART,
            max_iter=3,
        )


def test_action_equals_fiber_value():
    sys = oscillator_system()
    lam = sys.structure.primitive  # p dq
    for c in (0.25, 0.5, 1.0):
        x0 = np.array([0.0, math.sqrt(2 * c), 0.0])
        lattice = torus_lattice(sys, x0, angle_maps=oscillator_angles())
        profile = action_integrals(sys, lattice, lam)
        assert profile.actions[0] == pytest.approx(c, abs=1e-5)
        # the t-circle carries no p dq action
        assert profile.actions[1] == pytest.approx(0.0, abs=1e-6)
        assert profile.eta_pairings == pytest.approx([0.0, 1.0], abs=1e-6)


def test_action_base_point_independence():
    sys = oscillator_system()
    lam = sys.structure.primitive
    c = 0.5
    x0 = np.array([0.0, 1.0, 0.0])
    lat0 = torus_lattice(sys, x0, angle_maps=oscillator_angles())
    I0 = action_integrals(sys, lat0, lam).actions
    # move along the torus: flow both fields for incommensurate times
    from cosymkit.actionangle import flow_composite

    x1 = flow_composite(sys.commuting_fields(), (0.37, 1.91), x0, 1e-12, CHART)
    lat1 = torus_lattice(sys, x1, angle_maps=oscillator_angles())
    I1 = action_integrals(sys, lat1, lam).actions
    assert np.max(np.abs(I1 - I0)) < 1e-5


def test_action_retrace_stability():
    sys = oscillator_system()
    lam = sys.structure.primitive
    x0 = np.array([0.0, 1.0, 0.0])
    lattice = torus_lattice(sys, x0, angle_maps=oscillator_angles())
    I_a = action_integrals(sys, lattice, lam, flow_tol=1e-10).actions
    I_b = action_integrals(sys, lattice, lam, flow_tol=5e-11).actions
    assert np.max(np.abs(I_a - I_b)) < 1e-6


def test_poincare_cartan_action_around_t_circle():
    # alpha = p dq - H dt around the pure evaluation cycle: the -H dt part
    # contributes -c per turn and the p dq part +c, so the total vanishes
    sys = pc_system()
    S = sys.structure
    c = 0.5
    x0 = np.array([0.0, 1.0, 0.0])
    fields = sys.commuting_fields()  # [X_H, Z'] with Z' the oscillator flow
    segments = trace_cycle(fields, (0.0, TWO_PI), x0, 1e-11, CHART)
    val = line_integral(segments, S.primitive) / TWO_PI
    assert val == pytest.approx(0.0, abs=1e-6)

    # brute-force oracle: trapezoid on the analytic circle x(tau)
    taus = np.linspace(0.0, TWO_PI, 200_001)
    q = np.cos(taus)
    p = -np.sin(taus)
    H = 0.5 * (q**2 + p**2)
    integrand = p * (-np.sin(taus)) - H  # alpha(Y_H) = p*qdot - H*tdot
    oracle = np.trapezoid(integrand, taus) / TWO_PI
    assert val == pytest.approx(oracle, abs=1e-6)


def test_b_matrix_oscillator_identity():
    sys = oscillator_system()
    table = b_matrix(sys, [0.5], angle_maps=oscillator_angles())
    assert table.b == pytest.approx(np.eye(2), abs=1e-4)
    assert table.eta_constancy < 1e-6
    assert table.cond < 10


def test_b_matrix_rescaled_oscillator():
    # H = (p^2 + w0^2 q^2)/2 has action I = H / w0
    w0 = math.sqrt(2.0)
    S = make_canonical(1, box=BOX)
    H = ScalarField.from_source(f"(p^2 + {w0**2}*q^2)/2", CHART, "H")
    sys = IntegralSystem(S, H, (H,), r=1)
    angles = (
        AngleMap.from_spec({"plane": ["q", f"-p/{w0}"], "label": "phase"}, CHART),
        AngleMap.from_spec({"coordinate": "t", "label": "t"}, CHART),
    )
    table = b_matrix(sys, [0.5], angle_maps=angles)
    assert table.b[0, 0] == pytest.approx(1.0 / w0, abs=1e-4)
    assert table.b[1, 0] == pytest.approx(0.0, abs=1e-4)
    assert table.b[:, 1] == pytest.approx([0.0, 1.0], abs=1e-6)


def test_frequencies_canonical_reeb_and_hamiltonian():
    sys = oscillator_system()
    table = b_matrix(sys, [0.5], angle_maps=oscillator_angles())
    reeb = solve_frequencies(table, "reeb")
    assert reeb == pytest.approx([0.0, 1.0], abs=1e-4)
    ham = solve_frequencies(table, "hamiltonian", 1)
    assert ham == pytest.approx([1.0, 0.0], abs=1e-4)
    ev = evaluation_frequencies(table, sys)
    assert ev == pytest.approx([1.0, 1.0], abs=1e-4)


def test_frequencies_poincare_cartan_reeb():
    sys = pc_system()
    table = b_matrix(sys, [0.5], angle_maps=oscillator_angles())
    # aligned cycle basis gives b = [[1, 0], [-1, 1]]
    assert table.b == pytest.approx(np.array([[1.0, 0.0], [-1.0, 1.0]]), abs=1e-4)
    reeb = solve_frequencies(table, "reeb")
    assert reeb == pytest.approx([1.0, 1.0], abs=1e-4)
    # H == 0 for this system, so the evaluation flow is the Reeb flow
    ev = evaluation_frequencies(table, sys)
    assert ev == pytest.approx(reeb, abs=1e-10)


def test_reconstructed_generators_have_period_two_pi():
    # the rows of b recombine the commuting fields into angle generators;
    # flowing such a generator for 2*pi must return the base point
    sys = oscillator_system()
    table = b_matrix(sys, [0.5], delta=1e-3, angle_maps=oscillator_angles())
    fields = sys.commuting_fields()
    x0 = table.lattice.base_point
    from cosymkit.flow import flow_map

    for mu in range(2):
        coeffs = table.b[mu]

        def generator(x, c=coeffs):
            return c[0] * fields[0](x) + c[1] * fields[1](x)

        end = flow_map(generator, x0, TWO_PI, 1e-11, CHART)
        assert np.linalg.norm(CHART.wrap_difference(end, x0)) < 1e-4


def test_empirical_frequencies_oscillator():
    sys = oscillator_system()
    S = sys.structure
    x0 = np.array([0.0, 1.0, 0.0])
    angles = oscillator_angles()
    slopes, resid = empirical_frequencies(sys, S.reeb_vf(), x0, angles, 60.0)
    assert slopes == pytest.approx([0.0, 1.0], abs=1e-6)
    assert np.max(resid) < 1e-6
    slopes, resid = empirical_frequencies(
        sys, S.evaluation_vf(sys.hamiltonian), x0, angles, 60.0
    )
    assert slopes == pytest.approx([1.0, 1.0], abs=1e-4)
    assert np.max(resid) < 1e-3


def test_empirical_frequencies_unwrap_guard():
    sys = oscillator_system()
    S = sys.structure
    x0 = np.array([0.0, 1.0, 0.0])
    angles = oscillator_angles()
    with pytest.raises(AngleUnwrapError):
        empirical_frequencies(
            sys, S.evaluation_vf(sys.hamiltonian), x0, angles, 60.0, sample_step=3.0
        )


def test_winding_ratio_test():
    rep = winding_ratio_test([1.0, math.sqrt(2.0), 1.0])
    assert rep["irrational_winding"]
    by_pair = {tuple(p["pair"]): p for p in rep["pairs"]}
    assert not by_pair[(0, 2)]["rational"] is True or by_pair[(0, 2)]["rational"]
    assert by_pair[(0, 2)]["rational"]  # 1:1 is commensurate
    assert not by_pair[(0, 1)]["rational"]

    rep = winding_ratio_test([1.0, 2.0])
    assert not rep["irrational_winding"]


def test_find_fiber_point():
    sys = oscillator_system()
    x = find_fiber_point(sys, [0.8], np.array([0.3, 1.0, 0.5]))
    assert sys.integral_values(x)[0] == pytest.approx(0.8, abs=1e-12)


def test_min_section_return_periodic_orbit_is_small():
    sys = oscillator_system()
    S = sys.structure
    x0 = np.array([0.0, 1.0, 0.0])
    dist, when = min_section_return(
        sys, S.evaluation_vf(sys.hamiltonian), x0, 30.0
    )
    # frequencies (1, 1): the orbit closes at the first section return
    assert dist < 1e-6
    assert when == pytest.approx(TWO_PI, abs=1e-6)


def test_action_redundancy_rank():
    # r+1 actions but only r independent ones: rank of the derivative block
    sys = oscillator_system()
    table = b_matrix(sys, [0.5], angle_maps=oscillator_angles())
    assert table.derivative_rank == sys.r == 1


def test_b_matrix_threaded_matches_serial(monkeypatch):
    sys = oscillator_system()
    serial = b_matrix(sys, [0.5], angle_maps=oscillator_angles())
    monkeypatch.setenv("COSYM_THREADS", "3")
    threaded = b_matrix(sys, [0.5], angle_maps=oscillator_angles())
    assert np.array_equal(serial.b, threaded.b)
    assert np.array_equal(serial.actions, threaded.actions)


def test_angle_alignment_rejects_wrong_angles():
    from cosymkit.actionangle import ActionAngleError

    sys = oscillator_system()
    x0 = np.array([0.0, 1.0, 0.0])
    lattice = detect_period_lattice(sys, x0)
    bad = (
        AngleMap.from_spec({"plane": ["q", "-p"], "label": "a"}, CHART),
        AngleMap.from_spec({"plane": ["q", "-p"], "label": "b"}, CHART),
    )
    with pytest.raises(ActionAngleError):
        align_lattice_to_angles(sys, lattice, bad)
