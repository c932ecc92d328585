import json

import numpy as np
import pytest

from dflab.errors import DegenerateGradient, PreconditionError, ProjectionError, SpecError
from dflab.geometry import (
    DomainSpec,
    boundary_sample,
    collar_sample,
    complex_derivs,
    dr_norm,
    fubini_study_metric,
    load_spec,
    metric_at,
    normalized_jet,
    project_to_level,
    rng_stream,
    to_complex,
    to_real,
)
from dflab.jet import eval_grad, eval_value

from oracles import (
    FS_EIGS_AT_E1,
    FS_HOLOMORPHIC_CURVATURE,
    holomorphic_sectional_curvature_at_origin,
    random_unitary,
    sympy_chess,
)

BALL = "abs2(z1) + abs2(z2) - 1"
EGG = "abs2(z1) + abs2(z2)^2 - 1"


def make(rho=BALL, n=2, half=1.1, **kw):
    return DomainSpec(n=n, rho=rho, box=[[-half, half]] * (2 * n), **kw)


def test_complex_real_round_trip():
    p = np.arange(6.0)
    np.testing.assert_array_equal(to_real(to_complex(p)), p)
    np.testing.assert_array_equal(to_complex(p), [0 + 1j, 2 + 3j, 4 + 5j])


@pytest.mark.parametrize("text", [BALL, EGG, "(abs2(z1) + abs2(z2) - 1)*exp(4*x1*y2)", "x1*y2 - y1*x2 + x1^2*y1"])
def test_complex_hessian_matches_symbolic(text):
    p = np.array([0.3, -0.2, 0.5, 0.1])
    _, cd = complex_derivs(make(text), p)
    np.testing.assert_allclose(cd.chess, sympy_chess(text, 2, p), atol=1e-12)
    np.testing.assert_allclose(cd.chess, cd.chess.conj().T, atol=0)


def test_wirtinger_first_derivatives():
    # rho = |z1|^2 gives d rho = conj(z1) dz1
    p = np.array([0.3, -0.7, 0.0, 0.0])
    _, cd = complex_derivs(make("abs2(z1)"), p)
    np.testing.assert_allclose(cd.d_rho, [0.3 + 0.7j, 0], atol=1e-15)
    np.testing.assert_allclose(cd.dbar_rho, np.conj(cd.d_rho))


def test_fubini_study_eigenvalues():
    g = fubini_study_metric(np.array([1.0, 0.0]))
    np.testing.assert_allclose(np.linalg.eigvalsh(g), FS_EIGS_AT_E1, atol=1e-15)
    np.testing.assert_allclose(fubini_study_metric(np.zeros(3)), np.eye(3))


def test_fubini_study_is_unitarily_invariant():
    rng = np.random.default_rng(0)
    U = random_unitary(rng, 2)
    z = rng.normal(size=2) + 1j * rng.normal(size=2)
    g = fubini_study_metric(z)
    gu = fubini_study_metric(U @ z)
    # pull-back of g at Uz by X -> U X
    np.testing.assert_allclose(U.T @ gu @ U.conj(), g, atol=1e-14)


def test_fubini_study_holomorphic_sectional_curvature():
    H = holomorphic_sectional_curvature_at_origin(fubini_study_metric)
    assert H == pytest.approx(FS_HOLOMORPHIC_CURVATURE, rel=1e-7)


def test_fubini_study_is_complex_hessian_of_potential():
    p = np.array([0.4, -0.3, 0.2, 0.5])
    spec = make("log(1 + abs2(z1) + abs2(z2))")
    _, cd = complex_derivs(spec, p)
    np.testing.assert_allclose(cd.chess, fubini_study_metric(to_complex(p)), atol=1e-14)


def test_dr_norm_convention():
    spec = make()
    p = np.array([1.0, 0.0, 0.0, 0.0])
    _, cd = complex_derivs(spec, p)
    assert dr_norm(cd, metric_at(spec, p)) == pytest.approx(2 / np.sqrt(2))


def test_projection_lands_on_level():
    spec = make(EGG)
    seeds = rng_stream(1, "t").uniform(-0.9, 0.9, size=(50, 4))
    pts, ok = project_to_level(spec, seeds, -0.05)
    assert ok.mean() > 0.9
    np.testing.assert_allclose(eval_value(spec.rho, pts[ok]), -0.05, atol=1e-13)


def test_boundary_sample_on_sphere():
    spec = make(seed=4)
    bs = boundary_sample(spec, 2000)
    assert bs.complete and len(bs) == 2000
    np.testing.assert_allclose(np.sum(bs.points**2, axis=1), 1.0, atol=1e-12)
    np.testing.assert_allclose(bs.weights, 1.0, atol=1e-12)
    # uniform surface measure on S^3 has E[x1^2] = 1/4
    assert np.mean(bs.points[:, 0] ** 2) == pytest.approx(0.25, abs=0.02)


def test_boundary_weights_follow_gradient():
    spec = make(EGG, seed=2)
    bs = boundary_sample(spec, 300)
    _, g = eval_grad(spec.rho, bs.points)
    w = np.linalg.norm(g, axis=1)
    np.testing.assert_allclose(bs.weights, w / w.mean())


def test_sampling_is_deterministic_and_seeded():
    a = boundary_sample(make(EGG, seed=3), 100).points
    b = boundary_sample(make(EGG, seed=3), 100).points
    c = boundary_sample(make(EGG, seed=4), 100).points
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, c)


def test_collar_sample_levels():
    spec = make(EGG, collar_width=0.1)
    pts, complete = collar_sample(spec, 0.01, 0.1, 500)
    assert complete and len(pts) == 500
    v = eval_value(spec.rho, pts)
    assert np.all((-v >= 0.01 - 1e-12) & (-v <= 0.1 + 1e-12))


def test_collar_band_checked():
    spec = make(collar_width=0.1)
    with pytest.raises(PreconditionError):
        collar_sample(spec, 0.05, 0.2, 10)
    with pytest.raises(PreconditionError):
        collar_sample(spec, 0.05, 0.01, 10)


def test_normalized_jet_has_unit_gradient_at_boundary():
    spec = make("4*(abs2(z1) + abs2(z2) - 1)", collar_width=0.5)
    p = np.array([0.95, 0.0, 0.0, 0.0])
    jet = normalized_jet(spec, p)
    # rho = 4(|z|^2 - 1) has |grad| = 8 on the sphere
    assert jet.value == pytest.approx(4 * (0.95**2 - 1) / 8)
    assert np.linalg.norm(jet.grad) == pytest.approx(0.95)


def test_normalized_jet_errors():
    spec = make(collar_width=0.1)
    with pytest.raises(ProjectionError):
        normalized_jet(spec, np.array([0.5, 0.0, 0.0, 0.0]))
    with pytest.raises(DegenerateGradient):
        normalized_jet(make("abs2(z1) - 0.01", collar_width=0.1), np.zeros(4))


def test_spec_validation():
    with pytest.raises(SpecError, match="degenerate"):
        make("abs2(z1) + 5").check_nondegenerate()
    with pytest.raises(SpecError, match="box"):
        DomainSpec(n=2, rho=BALL, box=[[0, 1]] * 3)
    with pytest.raises(SpecError, match="metric"):
        make(metric="hyperbolic")
    with pytest.raises(SpecError, match="unknown field"):
        DomainSpec.from_dict({"n": 2, "rho": BALL, "box": [[-1, 1]] * 4, "colour": 1})
    with pytest.raises(SpecError, match="missing"):
        DomainSpec.from_dict({"n": 2, "rho": BALL})


def test_load_spec_reports_json_position(tmp_path):
    f = tmp_path / "bad.json"
    f.write_text('{\n  "n": 2,\n  "rho": "x1"\n  "box": []\n}')
    with pytest.raises(SpecError, match="line 4, column 3"):
        load_spec(f)


def test_spec_dict_round_trip(tmp_path):
    spec = make(EGG, metric="fubini_study", seed=9, name="egg")
    f = tmp_path / "s.json"
    f.write_text(json.dumps(spec.to_dict()))
    again = load_spec(f)
    assert again.to_dict() == spec.to_dict()
