"""Diederich-Fornaess exponent certification, Oka and DF index estimates, and the
closed-form lower bounds for the DF index.

Positivity of ``ddbar(-(-r)^eta)`` in the sense of distributions is replaced by
pointwise positivity on collar samples, which is equivalent for C^2 defining
functions.  A Hermitian matrix M passes when ``lambda_min(M) >= -tol * |M|``;
the recorded margin is ``lambda_min(M) / |M|`` (spectral norm, 0 when M = 0).
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.linalg

from .errors import LowerBoundViolated, PreconditionError
from .geometry import ComplexDerivs, DomainSpec, collar_sample, hermitian_part, metric_at, normalized_jets, wirtinger
from .levi import normal_frame, tangential_restriction

log = logging.getLogger(__name__)

CERTIFIED, REFUTED, INCONCLUSIVE = "Certified", "Refuted", "Inconclusive"
TAKEUCHI_K = 1.0 / 12.0
BISECTION_FLOOR = 0.01


def _outer(cd: ComplexDerivs):
    """Matrix of the (1,1)-form d r ^ dbar r, i.e. (X r) conj(Y r)."""
    d = cd.d_rho
    return d[..., :, None] * np.conj(d)[..., None, :]


def hessian_hat(cd: ComplexDerivs, rho_val, eta):
    """Complex Hessian of ``-(-r)^eta``:
    ``eta (-r)^(eta-1) chess + eta (1-eta) (-r)^(eta-2) d r (x) conj(d r)``.
    """
    rho_val = np.asarray(rho_val, dtype=float)
    if np.any(rho_val >= 0):
        raise PreconditionError("hessian_hat needs rho < 0")
    if not 0 < eta <= 1:
        raise PreconditionError(f"eta must lie in (0, 1], got {eta}")
    s = -rho_val
    a = (eta * s ** (eta - 1.0))[..., None, None]
    b = (eta * (1.0 - eta) * s ** (eta - 2.0))[..., None, None]
    return hermitian_part(a * cd.chess + b * _outer(cd))


def log_form(cd: ComplexDerivs, rho_val, eta):
    """``chess/(-r) + (1-eta) d r (x) conj(d r) / r^2``: the log-form inequality minus its right side."""
    rho_val = np.asarray(rho_val, dtype=float)
    if np.any(rho_val >= 0):
        raise PreconditionError("log_form needs rho < 0")
    s = -rho_val
    return hermitian_part(cd.chess / s[..., None, None] + ((1.0 - eta) / s**2)[..., None, None] * _outer(cd))


def oka_form(cd: ComplexDerivs, rho_val):
    """Complex Hessian of ``-log(-r)``."""
    return log_form(cd, rho_val, 0.0)


def relative_margins(M):
    """Per-matrix ``lambda_min / |M|_2`` for a stack of Hermitian matrices."""
    lam = np.linalg.eigvalsh(M)
    norm = np.max(np.abs(lam), axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(norm > 0, lam[..., 0] / np.where(norm > 0, norm, 1.0), 0.0)


def generalized_min_eigs(M, g):
    """Smallest eigenvalue of the pencil (M, g) for each stacked pair."""
    return np.array([scipy.linalg.eigh(np.conj(a), np.conj(b), eigvals_only=True)[0] for a, b in zip(M, g)])


@dataclass
class CertificateResult:
    eta: float
    verdict: str
    min_margin: float
    witness: list
    collar: tuple
    n_samples: int
    form: str = "hat"
    warnings: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


@dataclass
class IndexEstimate:
    lo: float
    hi: float
    iterations: int
    resolution: float
    inconclusive: bool = False
    history: list = field(default_factory=list)

    def to_dict(self):
        return asdict(self)


@dataclass
class CollarData:
    """Normalized jets on a fixed set of collar samples, reused across exponents."""

    points: np.ndarray
    cd: ComplexDerivs
    r: np.ndarray
    g: np.ndarray
    collar: tuple
    complete: bool

    def __len__(self):
        return len(self.points)


def default_collar(spec: DomainSpec):
    return (0.1 * spec.collar_width, spec.collar_width)


def collar_data(spec: DomainSpec, collar=None, count=None, tag="collar") -> CollarData:
    collar = tuple(float(c) for c in (collar or default_collar(spec)))
    count = count or spec.samples["collar"]
    pts, complete = collar_sample(spec, collar[0], collar[1], count, tag=tag)
    nj = normalized_jets(spec, pts)
    cd = wirtinger(nj.jets, spec.n)
    return CollarData(pts, cd, np.asarray(nj.jets.value), metric_at(spec, pts), collar, complete)


def _check_eta(eta):
    if not (isinstance(eta, (int, float)) and 0 < eta <= 1):
        raise PreconditionError(f"eta must lie in (0, 1], got {eta!r}")


def _verdict(spec, eta, margins, data, form):
    i = int(np.argmin(margins))
    m = float(margins[i])
    if m < -spec.tol:
        verdict = REFUTED
    elif data.complete:
        verdict = CERTIFIED
    else:
        verdict = INCONCLUSIVE
    return CertificateResult(
        eta=float(eta),
        verdict=verdict,
        min_margin=m,
        witness=data.points[i].tolist(),
        collar=data.collar,
        n_samples=len(data),
        form=form,
    )


def certify_exponent(spec: DomainSpec, eta, collar=None, count=None, data=None) -> CertificateResult:
    """Test ``ddbar(-(-r)^eta) >= 0`` on collar samples of the normalized defining function."""
    _check_eta(eta)
    data = data or collar_data(spec, collar, count)
    return _verdict(spec, eta, relative_margins(hessian_hat(data.cd, data.r, eta)), data, "hat")


def certify_via_log(spec: DomainSpec, eta, collar=None, count=None, data=None) -> CertificateResult:
    """Test the equivalent ``ddbar(-log(-r)) >= eta d r ^ dbar r / r^2`` on the same samples."""
    _check_eta(eta)
    data = data or collar_data(spec, collar, count)
    return _verdict(spec, eta, relative_margins(log_form(data.cd, data.r, eta)), data, "log")


def certify_with_shrink(spec: DomainSpec, eta, collar=None, count=None, rounds=3, factor=0.5):
    """Certify, re-testing a refuted exponent on collars shrunk towards the boundary.

    The exponent condition only needs to hold on some neighbourhood of the
    boundary, so a refutation is final only if it persists on every shrunk collar.
    """
    collar = tuple(collar or default_collar(spec))
    res = certify_exponent(spec, eta, collar, count)
    warnings = []
    for k in range(rounds):
        if res.verdict != REFUTED:
            break
        shrunk = (collar[0] * factor ** (k + 1), collar[1] * factor ** (k + 1))
        warnings.append(
            f"refuted on collar [{res.collar[0]:g}, {res.collar[1]:g}] (witness {res.witness}); "
            f"re-testing on shrunk collar [{shrunk[0]:g}, {shrunk[1]:g}]"
        )
        res = certify_exponent(spec, eta, shrunk, count)
    res.warnings = warnings + res.warnings
    return res


def estimate_index(spec: DomainSpec, resolution, collar=None, count=None, data=None) -> IndexEstimate:
    """Bisection for the DF index of the defining function on a fixed sample set."""
    if not 1e-4 < resolution < 0.5:
        raise PreconditionError(f"resolution must lie in (1e-4, 0.5), got {resolution}")
    data = data or collar_data(spec, collar, count)
    lo, hi = BISECTION_FLOOR, 1.0
    first = certify_exponent(spec, lo, data=data)
    history = [(lo, first.verdict)]
    if first.verdict != CERTIFIED:
        return IndexEstimate(0.0, lo, 0, resolution, inconclusive=True, history=history)
    iterations = 0
    while hi - lo > resolution:
        mid = 0.5 * (lo + hi)
        res = certify_exponent(spec, mid, data=data)
        history.append((mid, res.verdict))
        iterations += 1
        if res.verdict == CERTIFIED:
            lo = mid
        else:
            hi = mid
    return IndexEstimate(lo, hi, iterations, resolution, history=history)


@dataclass
class OkaEstimate:
    K: float
    raw_min: float
    witness: list
    collar: tuple
    n_samples: int

    def to_dict(self):
        return asdict(self)


def estimate_oka_index(spec: DomainSpec, collar=None, count=None, data=None) -> OkaEstimate:
    """Infimum over collar samples of the smallest eigenvalue of ddbar(-log(-r)) relative to the metric."""
    data = data or collar_data(spec, collar, count)
    lam = generalized_min_eigs(oka_form(data.cd, data.r), data.g)
    i = int(np.argmin(lam))
    raw = float(lam[i])
    if raw < 0:
        log.warning("ddbar(-log(-r)) has a negative eigenvalue %.3g on the collar: no strong Oka property", raw)
    return OkaEstimate(max(raw, 0.0), raw, data.points[i].tolist(), data.collar, len(data))


# -- closed-form bounds --------------------------------------------------------


def i0_lower_bound(K, S) -> float:
    """``max{min{K/(8 S^2), 1/2}, 1 - 2 S^2/K}``; S = 0 gives 1."""
    if not K > 0:
        raise PreconditionError(f"K must be positive, got {K}")
    if S < 0:
        raise PreconditionError(f"S must be nonnegative, got {S}")
    if S == 0:
        return 1.0
    s2 = S * S
    return max(min(K / (8.0 * s2), 0.5), 1.0 - 2.0 * s2 / K)


def i0_cpn(S) -> float:
    """Lower bound for pseudoconvex domains in CP^n, using the Takeuchi constant 1/12."""
    return i0_lower_bound(TAKEUCHI_K, S)


def i0_key_bound(K1) -> float:
    """``max{min{1/(8(K1-1)), 1/2}, 3 - 2 K1}``; at K1 = 1 the first branch is +inf."""
    if not K1 >= 1:
        raise PreconditionError(f"K1 must be at least 1, got {K1}")
    first = 0.5 if K1 == 1 else min(1.0 / (8.0 * (K1 - 1.0)), 0.5)
    return max(first, 3.0 - 2.0 * K1)


# -- sandwich and Ohsawa-Sibony checks ----------------------------------------


@dataclass
class SandwichResult:
    K: float
    K1: float
    min_ratio: float
    lower_bound_ok: bool
    witness_max: list
    witness_min: list
    n_samples: int

    def to_dict(self):
        return asdict(self)


def sandwich_ratios(data: CollarData, K):
    """Extreme values over tangential X of ``chess(X, conj X) / ((-r) |X|^2 K)`` per sample."""
    lo = np.empty(len(data))
    hi = np.empty(len(data))
    for i in range(len(data)):
        cd = data.cd[i]
        fr = normal_frame(cd, data.g[i])
        if fr.tangent.shape[1] == 0:
            lo[i] = hi[i] = np.nan
            continue
        # the frame is metric-orthonormal, so |X|^2 = |c|^2 in frame coordinates
        levi = tangential_restriction(cd.chess, fr.tangent)
        lam = np.linalg.eigvalsh(np.conj(levi)) / (-data.r[i] * K)
        lo[i], hi[i] = lam[0], lam[-1]
    return lo, hi


def verify_sandwich(spec: DomainSpec, K, collar=None, count=None, data=None, near=None, strict=True):
    """Smallest K1 with ``K |X_t|^2 <= chess(X_t, conj X_t)/(-r) <= K K1 |X_t|^2`` on the samples.

    ``near`` optionally restricts to samples within that distance of given points
    (typically the sampled weak set), passed as ``(points, radius)``.
    """
    if not K > 0:
        raise PreconditionError(f"K must be positive, got {K}")
    data = data or collar_data(spec, collar, count)
    if near is not None:
        centers, radius = near
        centers = np.atleast_2d(centers)
        dist = np.min(np.linalg.norm(data.points[:, None, :] - centers[None, :, :], axis=2), axis=1)
        keep = dist <= radius
        if not keep.any():
            raise PreconditionError("no collar samples lie near the given points")
        data = CollarData(data.points[keep], data.cd[keep], data.r[keep], data.g[keep], data.collar, data.complete)
    lo, hi = sandwich_ratios(data, K)
    if np.all(np.isnan(lo)):
        raise PreconditionError("no tangential directions in complex dimension 1")
    imin, imax = int(np.nanargmin(lo)), int(np.nanargmax(hi))
    ok = bool(lo[imin] >= 1.0 - spec.tol)
    result = SandwichResult(
        K=float(K),
        K1=float(hi[imax]),
        min_ratio=float(lo[imin]),
        lower_bound_ok=ok,
        witness_max=data.points[imax].tolist(),
        witness_min=data.points[imin].tolist(),
        n_samples=len(data),
    )
    if strict and not ok:
        raise LowerBoundViolated(
            f"tangential ratio {lo[imin]:.6g} < 1: K={K:g} exceeds the tangential lower bound",
            witness=result.witness_min,
            ratio=result.min_ratio,
        )
    return result


def ohsawa_sibony_check(spec: DomainSpec, c, eta, K, I0, collar=None, count=None, data=None) -> CertificateResult:
    """Check ``ddbar(-log(-r)) >= c w + (1 - c/K) eta d r ^ dbar r / r^2`` and the matching
    bound for ``ddbar(-(-r)^eta)`` pointwise on collar samples."""
    if not 0 < c < K:
        raise PreconditionError(f"need 0 < c < K = {K:g}, got c = {c}")
    if not 0 < eta <= I0:
        raise PreconditionError(f"need 0 < eta < I0 = {I0:g}, got eta = {eta}")
    data = data or collar_data(spec, collar, count)
    r, cd, g = data.r, data.cd, data.g
    s = -r
    lower = c * g + ((1.0 - c / K) * eta / s**2)[:, None, None] * _outer(cd)
    m1 = relative_margins(oka_form(cd, r) - lower)
    m2 = relative_margins(hessian_hat(cd, r, eta) - (eta * s**eta)[:, None, None] * lower)
    res = _verdict(spec, eta, np.minimum(m1, m2), data, "ohsawa-sibony")
    if eta == I0 and res.verdict == CERTIFIED:
        # the statement only covers the open interval (0, I0)
        res.verdict = INCONCLUSIVE
        res.warnings.append("eta equals I0: outside the open range where the inequalities are asserted")
    return res


def hypothesis_constants(spec: DomainSpec, eta, data: CollarData):
    """Per-sample best c with ``ddbar(-(-r)^eta) >= c (-r)^eta (w + d r ^ dbar r / r^2)``."""
    s = -data.r
    B = (s**eta)[:, None, None] * (data.g + (1.0 / s**2)[:, None, None] * _outer(data.cd))
    return generalized_min_eigs(hessian_hat(data.cd, data.r, eta), B)


def nan_to_none(x):
    return None if isinstance(x, float) and math.isnan(x) else x
