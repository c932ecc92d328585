"""Monge-Ampere densities, boundary flux densities and their quadratures.

Conventions: real covectors are ordered dx1, dy1, ..., dxn, dyn;
``d^c u = i (dbar u - d u)`` so ``dd^c u = 2i ddbar u`` and
``(dd^c |z|^2)^n = 4^n n! dV``.  All densities are taken against Lebesgue
measure of the chart; the metric never enters d or d^c.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.optimize import brentq

from .certify import hypothesis_constants, collar_data
from .errors import DegenerateGradient, HypothesisFailed, NumericalError, PreconditionError, SamplingError
from .forms import AltForm
from .geometry import ComplexDerivs, DomainSpec, complex_derivs, rng_stream, wirtinger
from .jet import eval_grad, eval_jet2, eval_value

CHUNK = 200_000
FIT_FLOOR = 1e-14


def _dz_forms(n, batch=()):
    """1-forms dz_j and dzbar_j as AltForms on R^{2n}."""
    dz, dzb = [], []
    for j in range(n):
        c = np.zeros(tuple(batch) + (2 * n,), dtype=complex)
        c[..., 2 * j] = 1.0
        c[..., 2 * j + 1] = 1j
        dz.append(AltForm(2 * n, 1, c))
        dzb.append(AltForm(2 * n, 1, np.conj(c)))
    return dz, dzb


def del_forms(cd: ComplexDerivs):
    """(d rho, dbar rho, ddbar rho) expanded over the real covector basis."""
    n = cd.n
    batch = cd.d_rho.shape[:-1]
    d = np.zeros(batch + (2 * n,), dtype=complex)
    d[..., 0::2] = cd.d_rho
    d[..., 1::2] = 1j * cd.d_rho
    db = np.zeros(batch + (2 * n,), dtype=complex)
    db[..., 0::2] = cd.dbar_rho
    db[..., 1::2] = -1j * cd.dbar_rho
    return AltForm(2 * n, 1, d), AltForm(2 * n, 1, db), _levi_two_form(cd.chess)


def _levi_two_form(A):
    """The (1,1)-form sum_jk A[j,k] dz_j ^ dzbar_k."""
    n = A.shape[-1]
    dz, dzb = _dz_forms(n)
    out = AltForm.zero(2 * n, 2, A.shape[:-2])
    for j in range(n):
        for k in range(n):
            out = out + dz[j].wedge(dzb[k]) * A[..., j, k]
    return out


def one_forms(cd: ComplexDerivs):
    """(d rho, d^c rho, dd^c rho)."""
    d, db, ddb = del_forms(cd)
    return d + db, (db - d) * 1j, ddb * 2j


def ma_density(cd: ComplexDerivs, n: int | None = None, check=True):
    """Lebesgue density of ``(dd^c rho)^n``; cross-checked against ``4^n n! det(chess)``."""
    n = n or cd.n
    _, _, ddc = one_forms(cd)
    dens = ddc.power(n).top().real
    if check:
        ref = 4.0**n * math.factorial(n) * np.linalg.det(cd.chess).real
        scale = 4.0**n * math.factorial(n) * np.max(np.abs(cd.chess), axis=(-2, -1)) ** n
        if np.any(np.abs(dens - ref) > 1e-8 * np.maximum(scale, 1e-300)):
            raise NumericalError("wedge-engine Monge-Ampere density disagrees with the determinant formula")
    return dens


def _check_hat_args(rho_val, eta):
    if np.any(np.asarray(rho_val) >= 0):
        raise PreconditionError("hat forms need rho < 0")
    if not 0 < eta <= 1:
        raise PreconditionError(f"eta must lie in (0, 1], got {eta}")


def hat_forms(cd: ComplexDerivs, rho_val, eta):
    """(d^c rho_hat, dd^c rho_hat) for ``rho_hat = -(-rho)^eta`` from the closed-form expressions."""
    _check_hat_args(rho_val, eta)
    s = -np.asarray(rho_val, dtype=float)
    d, db, ddb = del_forms(cd)
    dc_hat = (db - d) * (1j * eta * s ** (eta - 1.0))
    ddc_hat = ddb * (2j * eta * s ** (eta - 1.0)) + d.wedge(db) * (2j * eta * (1.0 - eta) * s ** (eta - 2.0))
    return dc_hat, ddc_hat


def pullback_identity_check(cd: ComplexDerivs, rho_val, eta):
    """Max relative coefficient error between ``d^c rho_hat ^ (dd^c rho_hat)^(n-1)`` and
    ``eta^n (-rho)^(n(eta-1)) d^c rho ^ (dd^c rho)^(n-1)``."""
    _check_hat_args(rho_val, eta)
    n = cd.n
    s = -np.asarray(rho_val, dtype=float)
    dc_hat, ddc_hat = hat_forms(cd, rho_val, eta)
    lhs = dc_hat.wedge(ddc_hat.power(n - 1))
    _, dc, ddc = one_forms(cd)
    rhs = dc.wedge(ddc.power(n - 1)) * (eta**n * s ** (n * (eta - 1.0)))
    diff = np.max(np.abs(lhs.coeffs - rhs.coeffs), axis=-1)
    ref = np.max(np.abs(rhs.coeffs), axis=-1)
    return np.where(ref > 0, diff / np.where(ref > 0, ref, 1.0), diff)


def _flux_top(cd: ComplexDerivs, grad, rho_val, eta):
    n = cd.n
    gnorm = np.linalg.norm(grad, axis=-1)
    nu = AltForm(2 * n, 1, (grad / gnorm[..., None]).astype(complex))
    dc_hat, ddc_hat = hat_forms(cd, rho_val, eta)
    return nu.wedge(dc_hat).wedge(ddc_hat.power(n - 1)).top().real


def surface_flux_density(spec: DomainSpec, p, eta):
    """Density against dS of the pull-back of ``d^c rho_hat ^ (dd^c rho_hat)^(n-1)`` to the level set through p.

    Computed as the Lebesgue density of ``(d rho/|d rho|) ^ d^c rho_hat ^ (dd^c rho_hat)^(n-1)``.
    """
    p = np.asarray(p, dtype=float)
    jet, cd = complex_derivs(spec, p)
    gnorm = np.linalg.norm(jet.grad, axis=-1)
    if np.any(gnorm == 0):
        raise DegenerateGradient("grad rho vanishes; the level set is singular here")
    return _flux_top(cd, jet.grad, jet.value, eta)


# -- quadrature -----------------------------------------------------------------


@dataclass
class Estimate:
    value: float
    stderr: float
    n_samples: int
    n_hits: int
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)


def _chunks(total):
    k = 0
    start = 0
    while start < total:
        size = min(CHUNK, total - start)
        yield k, size
        k += 1
        start += size


def _map_chunks(fn, total, threads=1):
    jobs = list(_chunks(total))
    if threads and threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(lambda a: fn(*a), jobs))
    return [fn(*a) for a in jobs]


def _box_points(spec, tag, k, size):
    lo, hi = spec.box[:, 0], spec.box[:, 1]
    return lo + (hi - lo) * rng_stream(spec.seed, tag, k).random((size, 2 * spec.n))


def ma_hat_density(spec: DomainSpec, pts, eta):
    """Lebesgue density of ``(dd^c rho_hat)^n`` at interior points."""
    jet = eval_jet2(spec.rho, pts)
    cd = wirtinger(jet, spec.n)
    _, ddc_hat = hat_forms(cd, jet.value, eta)
    return ddc_hat.power(spec.n).top().real


def f_interior(spec: DomainSpec, eta, t, eps0=math.inf, samples=None, density=None, threads=1) -> Estimate:
    """Monte Carlo integral of ``(dd^c rho_hat)^n`` over ``{-eps0 < rho < -t}``.

    ``density(spec, points, eta)`` may replace the Monge-Ampere density (used to
    exercise the divergence fit on a known envelope).
    """
    if not 0 < t < eps0:
        raise PreconditionError(f"need 0 < t < eps0, got t={t}, eps0={eps0}")
    if not 0 < eta <= 1:
        raise PreconditionError(f"eta must lie in (0, 1], got {eta}")
    total = int(samples or spec.samples["volume"])
    density = density or ma_hat_density

    def chunk(k, size):
        pts = _box_points(spec, "volume", k, size)
        v = eval_value(spec.rho, pts)
        inside = (v < -t) & (v > -eps0)
        vals = density(spec, pts[inside], eta) if inside.any() else np.zeros(0)
        return float(vals.sum()), float(np.sum(vals * vals)), int(inside.sum())

    parts = _map_chunks(chunk, total, threads)
    s1 = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    hits = sum(p[2] for p in parts)
    vol = spec.box_volume
    mean = s1 / total
    var = max(s2 / total - mean * mean, 0.0)
    return Estimate(vol * mean, vol * math.sqrt(var / total), total, hits)


def flux_boundary(spec: DomainSpec, eta, t, samples=None, h=None, threads=1) -> Estimate:
    """Surface integral over ``{rho = -t}`` of :func:`surface_flux_density`.

    Uniform box samples inside the shell ``|rho + t| < h/2`` (h = t/100) are
    weighted by ``|grad rho| / h`` (coarea formula).  The estimate on the inner
    half shell is returned in ``extra`` as a shell-thickness check.
    """
    if not t > 0:
        raise PreconditionError(f"t must be positive, got {t}")
    if not 0 < eta <= 1:
        raise PreconditionError(f"eta must lie in (0, 1], got {eta}")
    total = int(samples or spec.samples["shell"])
    h = h or t / 100.0

    def chunk(k, size):
        pts = _box_points(spec, "shell", k, size)
        v = eval_value(spec.rho, pts)
        shell = np.abs(v + t) < 0.5 * h
        if not shell.any():
            return 0.0, 0.0, 0, 0.0, 0.0
        sp = pts[shell]
        jet = eval_jet2(spec.rho, sp)
        cd = wirtinger(jet, spec.n)
        gnorm = np.linalg.norm(jet.grad, axis=1)
        if np.any(gnorm == 0):
            raise DegenerateGradient("grad rho vanishes on the level set")
        w = _flux_top(cd, jet.grad, jet.value, eta) * gnorm
        half = np.abs(jet.value + t) < 0.25 * h
        wh = w[half]
        return float(w.sum()), float(np.sum(w * w)), int(shell.sum()), float(wh.sum()), float(np.sum(wh * wh))

    parts = _map_chunks(chunk, total, threads)
    vol = spec.box_volume

    def combine(i1, i2, width):
        s1 = sum(p[i1] for p in parts)
        s2 = sum(p[i2] for p in parts)
        mean = s1 / total
        var = max(s2 / total - mean * mean, 0.0)
        return vol * mean / width, vol * math.sqrt(var / total) / width

    value, err = combine(0, 1, h)
    half_value, half_err = combine(3, 4, 0.5 * h)
    hits = sum(p[2] for p in parts)
    if hits == 0:
        raise SamplingError(f"no box samples fell in the shell around rho = {-t:g}; raise the shell sample count")
    return Estimate(
        value,
        err,
        total,
        hits,
        extra={
            "h": h,
            "half_shell_value": half_value,
            "half_shell_stderr": half_err,
            "shell_check_ok": bool(abs(half_value - value) < max(half_err, err)),
        },
    )


def stokes_check(spec: DomainSpec, eta, t_values, eps0=math.inf, volume_samples=None, shell_samples=None, threads=1):
    """Compare interior Monge-Ampere mass with the boundary flux at each t.

    With finite ``eps0`` both sides are differenced against their values at eps0.
    """
    rows = []
    if math.isfinite(eps0):
        base = flux_boundary(spec, eta, eps0, samples=shell_samples, threads=threads)
    for t in t_values:
        fi = f_interior(spec, eta, t, eps0, samples=volume_samples, threads=threads)
        fb = flux_boundary(spec, eta, t, samples=shell_samples, threads=threads)
        flux, flux_err = fb.value, fb.stderr
        if math.isfinite(eps0):
            flux, flux_err = flux - base.value, math.hypot(flux_err, base.stderr)
        err = math.hypot(fi.stderr, flux_err)
        gap = abs(fi.value - flux)
        rows.append(
            {
                "t": float(t),
                "f_interior": fi.value,
                "f_interior_err": fi.stderr,
                "flux": flux,
                "flux_err": flux_err,
                "combined_err": err,
                "gap_sigma": gap / err if err > 0 else (0.0 if gap == 0 else math.inf),
                "consistent": bool(gap <= 3 * err),
                "shell_check_ok": fb.extra["shell_check_ok"],
            }
        )
    return rows


# -- decay and divergence fits ----------------------------------------------------


@dataclass
class DecayFit:
    slope: float
    intercept: float
    r2: float
    t_grid: list
    values: list
    n_excluded: int
    expected: dict = field(default_factory=dict)

    def to_dict(self):
        d = asdict(self)
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}


def _linfit(x, y):
    A = np.vstack([x, np.ones_like(x)]).T
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2


def fit_loglog(t, values, floor=FIT_FLOOR):
    """Least-squares slope of log(value) against log(t) over values above ``floor * scale``."""
    t = np.asarray(t, dtype=float)
    values = np.asarray(values, dtype=float)
    scale = max(1.0, float(np.max(np.abs(values)))) if values.size else 1.0
    keep = values > floor * scale
    excluded = int((~keep).sum())
    if keep.sum() < 2:
        return math.nan, math.nan, math.nan, excluded
    slope, intercept, r2 = _linfit(np.log(t[keep]), np.log(values[keep]))
    return slope, intercept, r2, excluded


def normal_line_point(spec: DomainSpec, z, t):
    """Point on the inward normal line from boundary point ``z`` where ``rho = -t``."""
    z = np.asarray(z, dtype=float)
    _, g = eval_grad(spec.rho, z)
    gn = float(np.linalg.norm(g))
    if gn == 0:
        raise DegenerateGradient("grad rho vanishes at the boundary point")
    nhat = g / gn

    def f(s):
        return float(eval_value(spec.rho, z - s * nhat)) + t

    hi = max(2.0 * t / gn, 1e-12)
    limit = spec.diameter
    while f(hi) > 0:
        hi *= 2.0
        if hi > limit:
            raise NumericalError(f"level rho = {-t:g} not reached along the inward normal")
    s = brentq(f, 0.0, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    return z - s * nhat


def decay_fit_pointwise(spec: DomainSpec, z, eta, t_grid, rank=None) -> DecayFit:
    """Log-log slope of the flux density along the inward normal from a boundary point."""
    t_grid = np.asarray(t_grid, dtype=float)
    if np.any(t_grid <= 0):
        raise PreconditionError("t_grid must be positive")
    pts = np.array([normal_line_point(spec, z, t) for t in t_grid])
    values = surface_flux_density(spec, pts, eta)
    slope, intercept, r2, excluded = fit_loglog(t_grid, values)
    expected = {}
    if rank is not None:
        n = spec.n
        expected = {
            "n-1-rank+n(eta-1)": (n - 1 - rank) + n * (eta - 1.0),
            "n*eta-k (k=rank+1)": n * eta - (rank + 1),
            "n*eta-k-1 (k=rank+1)": n * eta - (rank + 2),
        }
    return DecayFit(slope, intercept, r2, t_grid.tolist(), np.asarray(values).tolist(), excluded, expected)


@dataclass
class DivergenceResult:
    fit: DecayFit
    errors: list
    hypothesis_c: float | None
    hypothesis_fail_fraction: float | None

    def to_dict(self):
        return {
            "fit": self.fit.to_dict(),
            "errors": self.errors,
            "hypothesis_c": self.hypothesis_c,
            "hypothesis_fail_fraction": self.hypothesis_fail_fraction,
        }


def check_strong_hypothesis(spec: DomainSpec, eta, collar=None, count=None, max_fail=0.01):
    """Verify ``ddbar(-(-rho)^eta) >= c (-rho)^eta (w + d rho ^ dbar rho / rho^2)`` with some c > 0."""
    data = collar_data(spec, collar, count, tag="hypothesis")
    c = hypothesis_constants(spec, eta, data)
    bad = c <= spec.tol
    frac = float(bad.mean())
    if frac > max_fail:
        i = int(np.argmin(c))
        raise HypothesisFailed(
            f"strengthened psh bound fails on {100 * frac:.1f}% of collar samples (min c = {c[i]:.3g})",
            fail_fraction=frac,
            witness=data.points[i].tolist(),
        )
    return float(np.min(c[~bad])), frac


def log_divergence_check(
    spec: DomainSpec,
    t_grid,
    eta=None,
    eps0=math.inf,
    samples=None,
    density=None,
    check_hypothesis=True,
    collar=None,
    threads=1,
) -> DivergenceResult:
    """Fit ``f(t)`` against ``-log t``; a positive slope is the logarithmic divergence."""
    eta = 1.0 / spec.n if eta is None else eta
    c = frac = None
    if check_hypothesis:
        c, frac = check_strong_hypothesis(spec, eta, collar)
    t_grid = np.asarray(t_grid, dtype=float)
    ests = [f_interior(spec, eta, t, eps0, samples=samples, density=density, threads=threads) for t in t_grid]
    values = np.array([e.value for e in ests])
    slope, intercept, r2 = _linfit(-np.log(t_grid), values)
    fit = DecayFit(slope, intercept, r2, t_grid.tolist(), values.tolist(), 0)
    return DivergenceResult(fit, [e.stderr for e in ests], c, frac)
