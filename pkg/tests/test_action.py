import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from liouvlab import action
from liouvlab import geometry as geo
from liouvlab.solver import reference_spec, solve


def test_action_parts_add_up(coarse_sol):
    rep = action.classical_action(coarse_sol)
    assert rep.S_total == pytest.approx(rep.I_value + rep.G_interaction, rel=1e-14)
    assert rep.I_value == pytest.approx(sum(rep.terms.values()), rel=1e-14)
    assert rep.S_flat == pytest.approx(rep.S_total - rep.weyl)
    assert rep.quadrature_error < 1e-7
    d = rep.as_dict()
    assert d["background_constant_excluded"] is True
    assert d["S_flat"] == rep.S_flat


def test_action_needs_solution():
    with pytest.raises(ValueError):
        action.classical_action(None)


def test_weyl_term_reference():
    d = geo.reference_divisor()
    # w0(i) = w0(-i) = w0(1) = 0, w0(0) = ln 2, delta(-0.75) = 0.46875
    assert action.weyl_term(d) == pytest.approx(2 * 0.46875 * np.log(2))


@settings(max_examples=30)
@given(hst.permutations([0, 1, 2]))
def test_interaction_permutation_invariant(perm):
    d = geo.reference_divisor()
    d2 = geo.Divisor(tuple(d.punctures[i] for i in perm))
    assert action.interaction_term(d2) == pytest.approx(action.interaction_term(d), rel=1e-13)


@settings(max_examples=30)
@given(hst.floats(-1.2, 1.2))
def test_interaction_isometry_invariant(theta):
    d = geo.reference_divisor()
    c, s = np.cos(theta), np.sin(theta)
    if min(abs(s * p.location + c) for p in d) < 1e-2:
        return
    assert action.interaction_term(d.transformed(theta)) == pytest.approx(
        action.interaction_term(d), abs=1e-10)


def test_action_isometry_invariant(ref_sol):
    s2 = solve(ref_sol.spec.transformed(0.3), h=0.05)
    S1 = action.classical_action(ref_sol)
    S2 = action.classical_action(s2)
    assert S2.S_total == pytest.approx(S1.S_total, abs=1e-5)
    # the flat-metric action carries the anomaly and is not invariant
    assert abs(S2.S_flat - S1.S_flat) > 1e-2


def test_fd_background_difference_is_anomaly(coarse_sol):
    # S - S_flat is the explicit Weyl term, so the two derivatives differ by its derivative
    spec = coarse_sol.spec
    idx = 2
    kw = dict(sol=coarse_sol, tol=1e-11)
    g0 = action.action_derivative_fd(spec, idx, background="g0", **kw).value
    flat = action.action_derivative_fd(spec, idx, background="flat", **kw).value
    h = 1e-4
    x0 = spec.divisor.punctures[idx].location
    dw = (action.weyl_term(spec.divisor.moved(idx, x0 + h))
          - action.weyl_term(spec.divisor.moved(idx, x0 - h))) / (2 * h)
    assert (g0 - flat).real == pytest.approx(dw, abs=1e-5)


def test_fd_matches_accessory_bulk(coarse_sol):
    from liouvlab import descendants as dsc
    rep = dsc.accessory_parameters(coarse_sol, with_l2=False)
    fd = action.action_derivative_fd(coarse_sol.spec, 0, sol=coarse_sol, tol=1e-11)
    assert abs(rep.c[0] + 0.5 * fd.value) <= 1e-3 * (1 + abs(rep.c[0]))
    assert fd.error < 1e-4


def test_fd_rejects_background():
    with pytest.raises(ValueError):
        action.action_derivative_fd(reference_spec(), 0, background="sphere")


@pytest.mark.parametrize("index, bulk", [(0, True), (1, False)])
def test_default_step(index, bulk):
    spec = reference_spec()
    step = action.default_step(spec, index)
    assert 0 < step <= 1e-3
    assert spec.divisor.punctures[index].is_bulk is bulk


def test_regularized_action_sequence(coarse_sol):
    seq = action.regularized_action(coarse_sol.spec, [(0.2, 0.2), (0.1, 0.1)], disc=coarse_sol.disc)
    S = action.classical_action(coarse_sol).S_total
    assert [s[:2] for s in seq] == [(0.2, 0.2), (0.1, 0.1)]
    gaps = [abs(s - S) for _, _, s in seq]
    assert gaps[1] < gaps[0]
    # masks only remove positive curvature, so the action drops
    assert all(s < S for _, _, s in seq)
