import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from liouvlab import descendants as dsc


@given(hst.floats(-0.99, 2.0))
def test_conformal_weight(c):
    assert dsc.conformal_weight(c) == pytest.approx(-c - 0.5 * c * c)


def _synthetic(xs, ws, cs):
    entries = [dsc.Entry(complex(x), w, i, complex(x).imag != 0, 2 * complex(c), 0.0)
               for i, (x, w, c) in enumerate(zip(xs, ws, cs))]
    return dsc.DescendantReport(entries)


def test_ward_terms_formula():
    rep = _synthetic([1j, -1j, 2.0], [-0.5, -0.5, -0.3], [0.1 + 0.2j, 0.1 - 0.2j, 0.4])
    d = dsc.conformal_weight([-0.5, -0.5, -0.3])
    x = np.array([1j, -1j, 2.0])
    c = np.array([0.1 + 0.2j, 0.1 - 0.2j, 0.4])
    assert np.allclose(dsc.ward_terms(rep, 0), c)
    assert np.allclose(dsc.ward_terms(rep, 2), c * x ** 2 + 2 * d * x)


def test_ward_residuals_vanish_for_consistent_data():
    # two boundary entries: n=0 gives c2 = -c1; n=1 gives c1 (x1 - x2) = -(d1 + d2);
    # n=2 then holds when d1 = d2
    x1, x2, w = -1.0, 1.0, -0.4
    d = float(dsc.conformal_weight(w))
    c1 = -2 * d / (x1 - x2)
    rep = _synthetic([x1, x2], [w, w], [c1, -c1])
    assert np.all(dsc.global_ward_residuals(rep) < 1e-14)


def test_l2_ward_formula():
    rep = _synthetic([0.0, 1.0, 3.0], [-0.3, -0.4, -0.5], [0.2, -0.1, 0.05])
    d = dsc.conformal_weight([-0.3, -0.4, -0.5])
    expect = d[0] / 1.0 + 0.2 / 1.0 + d[2] / 4.0 + 0.05 / -2.0
    assert dsc.l2_ward(rep, 1) == pytest.approx(expect)


def test_stress_tensor_pole_raises(ref_report):
    model = dsc.stress_tensor(ref_report)
    with pytest.raises(dsc.DescendantError):
        model(np.array([1j]))


@settings(max_examples=30, deadline=None)
@given(hst.floats(-3, 3), hst.floats(0.05, 3))
def test_stress_tensor_reflection(ref_report, a, b):
    model = dsc.stress_tensor(ref_report)
    z = complex(a, b)
    if np.min(np.abs(model.x - z)) < 1e-3:
        return
    assert model(np.array([np.conj(z)]))[0] == pytest.approx(np.conj(model(np.array([z]))[0]),
                                                            rel=1e-12, abs=1e-12)


def test_accessory_symmetry(ref_report):
    c = ref_report.c
    assert c[1] == pytest.approx(np.conj(c[0]), abs=1e-12)
    for e in ref_report.entries:
        if not e.bulk:
            assert e.accessory.imag == 0.0
        assert e.l1_error < 1e-4
    assert set(ref_report.meta["boundary_r"]) == {2, 3}


def test_report_as_dict(ref_report):
    d = ref_report.as_dict()
    assert len(d["entries"]) == 4
    assert d["entries"][0]["accessory"][1] == pytest.approx(ref_report.c[0].imag)


@pytest.mark.parametrize("t", [-1.0, 0.5, 2.0])
def test_boundary_trace_matches_field(ref_sol, ref_engine, t):
    # the Green representation must carry the key constant, not the plain mean
    assert ref_engine.boundary_trace(t) == pytest.approx(float(ref_sol.Phi_flat(t + 0j)), abs=1e-5)


@pytest.mark.parametrize("z", [0.5 + 0.5j, -0.7 + 1.2j])
def test_field_derivatives_match_field(ref_sol, ref_engine, z):
    Phi, d1, d2 = ref_engine.field_derivatives(z)
    assert Phi == pytest.approx(float(ref_sol.Phi_flat(z)), abs=1e-5)
    h = 1e-4
    f = lambda u: float(ref_sol.Phi_flat(u))  # noqa: E731
    fd = 0.5 * ((f(z + h) - f(z - h)) - 1j * (f(z + 1j * h) - f(z - 1j * h))) / (2 * h)
    assert d1 == pytest.approx(fd, abs=1e-3)


def test_l1_bulk_routes_agree(ref_sol, ref_engine):
    v, err, vd, errd = dsc.l1_bulk(ref_sol, 0, ref_engine, direct=True)
    assert abs(v - vd) <= max(1e-4, 10 * (err + errd))


def test_l1_bulk_rejects_boundary_entry(ref_sol, ref_engine):
    with pytest.raises(dsc.DescendantError):
        dsc.l1_bulk(ref_sol, 2, ref_engine)


def test_direct_stress_needs_bulk_point(ref_sol, ref_engine):
    with pytest.raises(dsc.DescendantError):
        dsc.stress_tensor_direct(ref_sol, 0.5 + 0j, ref_engine)


def test_hem_probe_too_close(ref_sol, ref_report, ref_engine):
    with pytest.raises(dsc.DescendantError):
        dsc.hem_residuals(ref_sol, ref_report, (), [1e-3], ref_engine)


def test_hem_sigma_positive_report(ref_sol, ref_report, ref_engine):
    hem = dsc.hem_residuals(ref_sol, ref_report, [0.5 + 0.5j], [0.5, 2.0], ref_engine)
    assert hem.bulk_residual <= 1e-8 * max(1.0, hem.bulk_scale)
    conv = hem.convention["sigma_positive"]
    assert conv["preferred"] == "half_quarter"
    assert conv["half_quarter"] < 1e-3
    assert "sigma_zero" not in hem.convention
    assert len(hem.as_dict()["boundary"]) == 2
