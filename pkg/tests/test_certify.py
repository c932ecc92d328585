import math

import numpy as np
import pytest

from dflab import certify as C
from dflab.errors import LowerBoundViolated, PreconditionError
from dflab.geometry import DomainSpec, complex_derivs
from dflab.jet import eval_value

BALL = "abs2(z1) + abs2(z2) - 1"
EGG = "abs2(z1) + abs2(z2)^2 - 1"
DIMPLE = "abs2(z1) + abs2(z2) - 1 - 0.5*x1^4"
TILTED = "(abs2(z1) + abs2(z2) - 1)*exp(4*x1*y2)"
COLLAR = (0.01, 0.1)


def make(rho, **kw):
    kw.setdefault("collar_width", 0.1)
    return DomainSpec(n=2, rho=rho, box=[[-1.3, 1.3]] * 4, **kw)


@pytest.fixture(scope="module")
def ball_data():
    return C.collar_data(make(BALL), COLLAR, 2000)


@pytest.fixture(scope="module")
def dimple_data():
    return C.collar_data(make(DIMPLE), COLLAR, 1000)


INTERIOR = np.array([[0.5, -0.2, 0.3, 0.1], [0.1, 0.6, -0.4, 0.2], [-0.3, 0.1, 0.2, -0.7]])


@pytest.mark.parametrize("text", [BALL, EGG, TILTED])
@pytest.mark.parametrize("eta", [0.3, 0.75, 1.0])
def test_hessian_hat_matches_differentiated_composite(text, eta):
    spec = make(text)
    composite = make(f"-(-({text}))^{eta!r}")
    jet, cd = complex_derivs(spec, INTERIOR)
    _, cd_hat = complex_derivs(composite, INTERIOR)
    np.testing.assert_allclose(C.hessian_hat(cd, jet.value, eta), cd_hat.chess, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("text", [BALL, EGG, TILTED])
def test_oka_form_matches_differentiated_log(text):
    jet, cd = complex_derivs(make(text), INTERIOR)
    _, cd_log = complex_derivs(make(f"-log(-({text}))"), INTERIOR)
    np.testing.assert_allclose(C.oka_form(cd, jet.value), cd_log.chess, rtol=1e-10, atol=1e-12)


@pytest.mark.parametrize("eta", [0.2, 0.6, 1.0])
def test_hat_and_log_forms_differ_by_positive_factor(eta):
    jet, cd = complex_derivs(make(TILTED), INTERIOR)
    s = -jet.value
    np.testing.assert_allclose(
        C.hessian_hat(cd, jet.value, eta), (eta * s**eta)[:, None, None] * C.log_form(cd, jet.value, eta), rtol=1e-12
    )


def test_relative_margins():
    M = np.array([np.diag([2.0, -1.0]), np.zeros((2, 2)), np.diag([3.0, 3.0])])
    np.testing.assert_allclose(C.relative_margins(M), [-0.5, 0.0, 1.0])


def test_ball_certified(ball_data):
    res = C.certify_exponent(make(BALL), 0.99, data=ball_data)
    assert res.verdict == C.CERTIFIED and res.min_margin > 0
    assert res.n_samples == 2000


def test_dimple_refuted_with_witness(dimple_data):
    spec = make(DIMPLE)
    for eta in (0.05, 0.5, 1.0):
        a = C.certify_exponent(spec, eta, data=dimple_data)
        b = C.certify_via_log(spec, eta, data=dimple_data)
        assert a.verdict == b.verdict == C.REFUTED
        assert a.witness == b.witness
        assert -eval_value(spec.rho, np.array(a.witness)) > 0


def test_verdict_is_monotone_in_eta():
    spec = make(TILTED)
    data = C.collar_data(spec, COLLAR, 800)
    verdicts = [C.certify_exponent(spec, eta, data=data).verdict for eta in np.linspace(0.05, 1.0, 40)]
    first_fail = verdicts.index(C.REFUTED)
    assert all(v == C.CERTIFIED for v in verdicts[:first_fail])
    assert all(v == C.REFUTED for v in verdicts[first_fail:])


def test_index_bisection(ball_data):
    est = C.estimate_index(make(BALL), 0.01, data=ball_data)
    assert est.lo >= 0.99 and est.hi == 1.0 and not est.inconclusive
    assert est.hi - est.lo <= 0.01


def test_index_below_floor_is_inconclusive(dimple_data):
    est = C.estimate_index(make(DIMPLE), 0.01, data=dimple_data)
    assert est.inconclusive and est.lo == 0.0 and est.hi == C.BISECTION_FLOOR


def test_index_agrees_with_direct_scan():
    spec = make(TILTED)
    data = C.collar_data(spec, COLLAR, 800)
    est = C.estimate_index(spec, 0.005, data=data)
    assert C.certify_exponent(spec, est.lo, data=data).verdict == C.CERTIFIED
    assert C.certify_exponent(spec, est.hi, data=data).verdict == C.REFUTED


def test_shrinking_collar_recovers_certificate():
    res = C.certify_with_shrink(make(TILTED), 0.7, COLLAR, 1000)
    assert res.verdict == C.CERTIFIED
    assert res.collar == pytest.approx((0.0025, 0.025))
    assert len(res.warnings) == 2 and "shrunk" in res.warnings[0]


def test_eta_precondition():
    for eta in (0.0, -0.1, 1.5, math.nan):
        with pytest.raises(PreconditionError):
            C.certify_exponent(make(BALL), eta, COLLAR, 10)
    with pytest.raises(PreconditionError):
        C.estimate_index(make(BALL), 0.6)


def test_closed_form_bounds():
    assert C.i0_lower_bound(3.0, 0.0) == 1.0
    assert C.i0_lower_bound(1.0, 0.5) == pytest.approx(max(min(1 / 2, 0.5), 0.5))
    assert C.i0_lower_bound(1.0, 0.1) == pytest.approx(1 - 0.02)
    assert C.i0_lower_bound(1.0, 10.0) == pytest.approx(1 / 800)
    assert C.i0_cpn(0.3) == C.i0_lower_bound(1 / 12, 0.3)
    assert C.i0_key_bound(1.0) == 1.0
    assert C.i0_key_bound(1.1) == pytest.approx(0.8)
    assert C.i0_key_bound(3.0) == pytest.approx(1 / 16)
    for bad in [(0.0, 1.0), (-1.0, 0.0), (1.0, -0.1)]:
        with pytest.raises(PreconditionError):
            C.i0_lower_bound(*bad)
    with pytest.raises(PreconditionError):
        C.i0_key_bound(0.9)


def test_oka_index_of_ball(ball_data):
    est = C.estimate_oka_index(make(BALL), data=ball_data)
    # for the normalized r = (|z|^2 - 1)/2 the Oka form dominates 1/(-r) >= 10 on this collar
    assert est.K >= 9.9 and est.raw_min == est.K


def test_oka_index_clipped_for_dimple(dimple_data):
    est = C.estimate_oka_index(make(DIMPLE), data=dimple_data)
    assert est.raw_min < 0 and est.K == 0.0


def test_sandwich(ball_data):
    spec = make(BALL)
    lo, _ = C.sandwich_ratios(ball_data, 1.0)
    K = float(lo.min())
    res = C.verify_sandwich(spec, K, data=ball_data)
    assert res.lower_bound_ok and res.min_ratio == pytest.approx(1.0)
    assert res.K1 >= 1.0
    with pytest.raises(LowerBoundViolated) as info:
        C.verify_sandwich(spec, 1.05 * K, data=ball_data)
    assert info.value.ratio < 1 and len(info.value.witness) == 4
    soft = C.verify_sandwich(spec, 1.05 * K, data=ball_data, strict=False)
    assert not soft.lower_bound_ok


def test_sandwich_near_subset(ball_data):
    centre = ball_data.points[:1]
    res = C.verify_sandwich(make(BALL), 1.0, data=ball_data, near=(centre, 0.3))
    assert 0 < res.n_samples < len(ball_data)


def test_ohsawa_sibony(ball_data):
    spec = make(BALL)
    res = C.ohsawa_sibony_check(spec, 1.0, 0.5, 9.9, 1.0, data=ball_data)
    assert res.verdict == C.CERTIFIED
    edge = C.ohsawa_sibony_check(spec, 1.0, 0.5, 9.9, 0.5, data=ball_data)
    assert edge.verdict == C.INCONCLUSIVE and edge.warnings
    with pytest.raises(PreconditionError):
        C.ohsawa_sibony_check(spec, 10.0, 0.5, 9.9, 1.0, data=ball_data)
    with pytest.raises(PreconditionError):
        C.ohsawa_sibony_check(spec, 1.0, 0.5, 9.9, 0.4, data=ball_data)


def test_hypothesis_constants(ball_data, dimple_data):
    assert np.all(C.hypothesis_constants(make(BALL), 0.5, ball_data) > 0)
    assert np.any(C.hypothesis_constants(make(DIMPLE), 0.5, dimple_data) < 0)


def test_positive_multiple_of_ball_reaches_index_one_only_near_the_boundary():
    spec = make("-(1 - abs2(z1) - abs2(z2))*exp(-abs2(z1) - abs2(z2))")
    wide = C.estimate_index(spec, 0.01, collar=COLLAR, count=1000)
    thin = C.estimate_index(spec, 0.01, collar=(1e-4, 1e-3), count=1000)
    assert 0.85 < wide.lo < 0.95
    assert thin.lo >= 0.99
