"""Domains, Wirtinger calculus, Hermitian metrics and sampling near the boundary.

Real points are stored interleaved, ``(x1, y1, x2, y2, ...)``, so that
``z_j = p[2j] + i p[2j+1]``.  Hermitian forms follow the convention
``A(X, conj(Y)) = sum_jk A[j, k] X_j conj(Y_k)`` for (1,0)-vectors X, Y.
"""

from __future__ import annotations

import json
import math
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import qmc

from .errors import (
    DegenerateGradient,
    DimensionError,
    PreconditionError,
    ProjectionError,
    SamplingError,
    SpecError,
)
from .expr import Expression, parse
from .jet import Jet2, eval_grad, eval_jet2, eval_value

METRICS = ("euclidean", "fubini_study")
DEFAULT_SAMPLES = {"boundary": 1000, "collar": 2000, "volume": 1_000_000, "shell": 8_000_000}
NEWTON_MAX_ITER = 50
LEVEL_TOL = 1e-12


# -- coordinates -------------------------------------------------------------


def to_complex(p):
    p = np.asarray(p, dtype=float)
    return p[..., 0::2] + 1j * p[..., 1::2]


def to_real(z):
    z = np.asarray(z, dtype=complex)
    p = np.empty(z.shape[:-1] + (2 * z.shape[-1],))
    p[..., 0::2] = z.real
    p[..., 1::2] = z.imag
    return p


# -- domain specification ----------------------------------------------------


@dataclass
class DomainSpec:
    n: int
    rho: Expression
    box: np.ndarray
    metric: str = "euclidean"
    collar_width: float | None = None
    tol: float = 1e-9
    rank_tol: float = 1e-6
    samples: dict = field(default_factory=dict)
    seed: int = 0
    name: str = ""
    rho_text: str | None = None

    def __post_init__(self):
        if not 1 <= self.n <= 4:
            raise DimensionError(f"complex dimension must be in 1..4, got {self.n}")
        if isinstance(self.rho, str):
            self.rho_text = self.rho
            self.rho = parse(self.rho, self.n)
        if self.rho_text is None:
            self.rho_text = str(self.rho)
        if self.rho.n != self.n:
            raise DimensionError(f"expression dimension {self.rho.n} != spec dimension {self.n}")
        self.box = np.asarray(self.box, dtype=float)
        if self.box.shape != (2 * self.n, 2):
            raise SpecError(f"box must have shape ({2 * self.n}, 2), got {self.box.shape}")
        if np.any(self.box[:, 1] <= self.box[:, 0]):
            raise SpecError("box: every lower bound must be below its upper bound")
        if self.metric not in METRICS:
            raise SpecError(f"metric must be one of {METRICS}, got {self.metric!r}")
        if self.collar_width is None:
            self.collar_width = 0.05 * self.diameter
        if not self.collar_width > 0:
            raise SpecError("collar_width must be positive")
        if not (self.tol > 0 and self.rank_tol > 0):
            raise SpecError("tol and rank_tol must be positive")
        unknown = set(self.samples) - set(DEFAULT_SAMPLES)
        if unknown:
            raise SpecError(f"unknown sample counts: {sorted(unknown)}")
        self.samples = {**DEFAULT_SAMPLES, **{k: int(v) for k, v in self.samples.items()}}
        self.seed = int(self.seed)

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.box[:, 1] - self.box[:, 0]))

    @property
    def box_volume(self) -> float:
        return float(np.prod(self.box[:, 1] - self.box[:, 0]))

    @property
    def level_tol(self) -> float:
        return LEVEL_TOL * max(1.0, self.diameter)

    def in_box(self, p):
        p = np.asarray(p)
        return np.all((p >= self.box[:, 0]) & (p <= self.box[:, 1]), axis=-1)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "name": self.name,
            "rho": self.rho_text,
            "box": self.box.tolist(),
            "metric": self.metric,
            "collar_width": self.collar_width,
            "tol": self.tol,
            "rank_tol": self.rank_tol,
            "samples": dict(self.samples),
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DomainSpec":
        if not isinstance(data, dict):
            raise SpecError("spec document must be a JSON object")
        missing = [k for k in ("n", "rho", "box") if k not in data]
        if missing:
            raise SpecError(f"missing required field(s): {', '.join(missing)}")
        known = {"n", "rho", "box", "metric", "collar_width", "tol", "rank_tol", "samples", "seed", "name"}
        extra = set(data) - known
        if extra:
            raise SpecError(f"unknown field(s): {', '.join(sorted(extra))}")
        n = data["n"]
        if not isinstance(n, int) or isinstance(n, bool):
            raise SpecError(f"field 'n': expected an integer, got {n!r}")
        if not isinstance(data["rho"], str):
            raise SpecError("field 'rho': expected an expression string")
        box = data["box"]
        if not (isinstance(box, list) and all(isinstance(b, list) and len(b) == 2 for b in box)):
            raise SpecError("field 'box': expected a list of [lo, hi] pairs")
        keys = ("metric", "collar_width", "tol", "rank_tol", "samples", "seed", "name")
        kwargs = {k: data[k] for k in keys if k in data}
        return cls(n=n, rho=data["rho"], box=box, **kwargs)

    def check_nondegenerate(self, count=4096):
        """Raise :class:`SpecError` unless rho takes both signs inside the box."""
        pts = uniform_in_box(self, count, "nondegenerate")
        pts = np.vstack([pts, self.box.mean(axis=1)])
        values = eval_value(self.rho, pts)
        if not (np.any(values < 0) and np.any(values > 0)):
            raise SpecError("rho does not change sign inside the box; the domain is degenerate")


def load_spec(path) -> DomainSpec:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise SpecError(f"cannot read spec file {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    try:
        spec = DomainSpec.from_dict(data)
    except (SpecError, DimensionError) as exc:
        raise SpecError(f"{path}: {exc}") from exc
    spec.check_nondegenerate()
    return spec


# -- random streams ----------------------------------------------------------


def rng_stream(seed: int, *keys) -> np.random.Generator:
    """Counter-based generator keyed by ``(seed, *keys)``; string keys are hashed."""
    words = [int(seed) & 0xFFFFFFFF]
    for k in keys:
        words.append(zlib.crc32(k.encode()) if isinstance(k, str) else int(k) & 0xFFFFFFFF)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


def uniform_in_box(spec: DomainSpec, count: int, *keys):
    lo, hi = spec.box[:, 0], spec.box[:, 1]
    return lo + (hi - lo) * rng_stream(spec.seed, *keys).random((count, 2 * spec.n))


def stratified_in_box(spec: DomainSpec, count: int, *keys):
    sampler = qmc.LatinHypercube(d=2 * spec.n, rng=rng_stream(spec.seed, *keys))
    return qmc.scale(sampler.random(count), spec.box[:, 0], spec.box[:, 1])


# -- Wirtinger calculus ------------------------------------------------------


@dataclass(frozen=True)
class ComplexDerivs:
    """Coefficients of d-bar rho, d rho and the complex Hessian rho_{z_j zbar_k}."""

    dbar_rho: np.ndarray
    d_rho: np.ndarray
    chess: np.ndarray

    @property
    def n(self) -> int:
        return self.d_rho.shape[-1]

    def __getitem__(self, key):
        return ComplexDerivs(self.dbar_rho[key], self.d_rho[key], self.chess[key])

    def scaled(self, factor):
        f = np.asarray(factor, dtype=float)
        return ComplexDerivs(self.dbar_rho * f[..., None], self.d_rho * f[..., None], self.chess * f[..., None, None])


def hermitian_part(a):
    return 0.5 * (a + np.conj(np.swapaxes(a, -1, -2)))


def wirtinger(jet: Jet2, n: int) -> ComplexDerivs:
    """Convert a real 2-jet into complex first derivatives and the complex Hessian."""
    if jet.grad.shape[-1] != 2 * n:
        raise DimensionError(f"jet has {jet.grad.shape[-1]} real coordinates, expected {2 * n}")
    g = jet.grad
    gx, gy = g[..., 0::2], g[..., 1::2]
    d_rho = 0.5 * (gx - 1j * gy)
    dbar_rho = 0.5 * (gx + 1j * gy)
    h = jet.hess
    hxx = h[..., 0::2, 0::2]
    hyy = h[..., 1::2, 1::2]
    hxy = h[..., 0::2, 1::2]  # [j, k] = rho_{x_j y_k}
    hyx = h[..., 1::2, 0::2]  # [j, k] = rho_{y_j x_k}
    chess = 0.25 * ((hxx + hyy) + 1j * (hxy - hyx))
    return ComplexDerivs(dbar_rho, d_rho, hermitian_part(chess))


def complex_derivs(spec: DomainSpec, p):
    jet = eval_jet2(spec.rho, p)
    return jet, wirtinger(jet, spec.n)


# -- metrics -----------------------------------------------------------------


def fubini_study_metric(z) -> np.ndarray:
    """Fubini-Study metric (holomorphic sectional curvature 2) in the affine chart.

    ``g[j, k] = ((1 + |z|^2) delta_jk - conj(z_j) z_k) / (1 + |z|^2)^2``, the
    complex Hessian of ``log(1 + |z|^2)``.
    """
    z = np.asarray(z, dtype=complex)
    s = np.sum(np.abs(z) ** 2, axis=-1)[..., None, None]
    n = z.shape[-1]
    eye = np.eye(n)
    g = ((1 + s) * eye - np.conj(z)[..., :, None] * z[..., None, :]) / (1 + s) ** 2
    return hermitian_part(g)


def metric_at(spec: DomainSpec, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if spec.metric == "euclidean":
        return np.broadcast_to(np.eye(spec.n, dtype=complex), p.shape[:-1] + (spec.n, spec.n)).copy()
    return fubini_study_metric(to_complex(p))


def covector_norm(a, g) -> np.ndarray:
    """Dual norm of the (1,0)-covector with coefficients ``a`` for the metric ``g``."""
    sol = np.linalg.solve(np.conj(g), np.conj(a)[..., None])[..., 0]
    return np.sqrt(np.abs(np.einsum("...j,...j->...", a, sol)))


def dr_norm(cd: ComplexDerivs, g) -> np.ndarray:
    """``|d r|_omega`` under the convention |X|_omega = |Re X| for unit real directions.

    This is ``sqrt(2)`` times the dual norm of the coefficient vector of d r; in
    the Euclidean metric it equals ``|grad r| / sqrt(2)``.
    """
    return math.sqrt(2.0) * covector_norm(cd.d_rho, g)


# -- projection and sampling -------------------------------------------------


def project_to_level(spec: DomainSpec, pts, level=0.0, max_iter=NEWTON_MAX_ITER):
    """Newton iteration along grad(rho) onto ``{rho = level}``.

    Returns ``(points, converged)``; points leaving the box, meeting a vanishing
    gradient or missing the tolerance after ``max_iter`` steps are flagged.
    """
    pts = np.array(pts, dtype=float, copy=True)
    level = np.broadcast_to(np.asarray(level, dtype=float), pts.shape[:-1])
    tol = spec.level_tol
    max_step = 0.25 * spec.diameter
    active = np.ones(pts.shape[:-1], dtype=bool)
    ok = np.zeros(pts.shape[:-1], dtype=bool)
    for _ in range(max_iter + 1):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        v, g = eval_grad(spec.rho, pts[idx])
        res = v - level[idx]
        done = np.abs(res) < tol
        if done.any():
            # one extra step polishes the residual well below tol
            gd = g[done]
            g2 = np.einsum("ij,ij->i", gd, gd)
            safe = g2 > 0
            pts[idx[done][safe]] -= (res[done][safe] / g2[safe])[:, None] * gd[safe]
            ok[idx[done]] = True
            active[idx[done]] = False
        keep = ~done
        idx, res, g = idx[keep], res[keep], g[keep]
        g2 = np.einsum("ij,ij->i", g, g)
        dead = g2 < 1e-28
        active[idx[dead]] = False
        idx, res, g, g2 = idx[~dead], res[~dead], g[~dead], g2[~dead]
        step = (res / g2)[:, None] * g
        length = np.linalg.norm(step, axis=1)
        step *= np.minimum(1.0, max_step / np.maximum(length, 1e-300))[:, None]
        pts[idx] -= step
    v = eval_value(spec.rho, pts)
    ok &= np.abs(v - level) < tol
    ok &= spec.in_box(pts)
    return pts, ok


@dataclass
class BoundarySample:
    points: np.ndarray
    weights: np.ndarray
    requested: int

    def __len__(self):
        return len(self.points)

    @property
    def complete(self) -> bool:
        return len(self.points) >= self.requested


def boundary_sample(spec: DomainSpec, count: int, tag="boundary") -> BoundarySample:
    """Points on ``{rho = 0}`` with weights approximating surface measure.

    Stratified seeds are drawn in the box, the ones with the smallest
    first-order distance |rho|/|grad rho| (a thin shell) are Newton-projected onto the boundary, and each point is
    weighted by |grad rho| to undo the 1/|grad rho| shell density.
    """
    if count < 1:
        raise PreconditionError("count must be positive")
    seeds = stratified_in_box(spec, 20 * count, tag, count)
    values, grads = eval_grad(spec.rho, seeds)
    with np.errstate(divide="ignore"):
        dist = np.abs(values) / np.linalg.norm(grads, axis=1)
    order = np.argsort(dist, kind="stable")[: int(math.ceil(1.5 * count))]
    order = np.sort(order)
    pts, ok = project_to_level(spec, seeds[order], 0.0)
    pts = pts[ok][:count]
    if len(pts) < count / 2:
        raise SamplingError(f"only {len(pts)} of {count} boundary seeds converged")
    _, g = eval_grad(spec.rho, pts)
    w = np.linalg.norm(g, axis=1)
    w = w / w.mean()
    return BoundarySample(pts, w, count)


def collar_sample(spec: DomainSpec, t_min: float, t_max: float, count: int, tag="collar"):
    """Interior points with ``-rho`` in ``[t_min, t_max]``.

    Each point starts from a boundary sample and is pushed inward by Newton
    steps onto a level drawn uniformly from the band.  Returns ``(points,
    complete)`` where ``complete`` says whether the full budget was met.
    """
    if not 0 < t_min < t_max <= spec.collar_width:
        raise PreconditionError(
            f"collar band must satisfy 0 < t_min < t_max <= collar_width={spec.collar_width:g};"
            f" got [{t_min:g}, {t_max:g}]"
        )
    if count < 1:
        raise PreconditionError("count must be positive")
    base = boundary_sample(spec, int(math.ceil(1.25 * count)), tag + "/base").points
    levels = -rng_stream(spec.seed, tag, "levels", count).uniform(t_min, t_max, len(base))
    # small inward nudge so the first Newton step starts inside the domain
    _, g = eval_grad(spec.rho, base)
    gn2 = np.einsum("ij,ij->i", g, g)
    start = base + (levels / gn2)[:, None] * g
    pts, ok = project_to_level(spec, start, levels)
    pts = pts[ok]
    v = eval_value(spec.rho, pts)
    band = (-v >= t_min - spec.level_tol) & (-v <= t_max + spec.level_tol)
    pts = pts[band][:count]
    if len(pts) < count / 2:
        raise SamplingError(f"only {len(pts)} of {count} collar points could be placed in [{t_min:g}, {t_max:g}]")
    return pts, len(pts) >= count


@dataclass(frozen=True)
class NormalizedJets:
    jets: Jet2  # jets of r~ = rho / |grad rho(pi(p))|
    factors: np.ndarray  # |grad rho| at the projected point
    feet: np.ndarray  # approximate boundary projections


def normalized_jets(spec: DomainSpec, pts) -> NormalizedJets:
    """Batched :func:`normalized_jet`; raises if any point cannot be projected."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    jet = eval_jet2(spec.rho, pts)
    gnorm = np.linalg.norm(jet.grad, axis=1)
    if np.any(gnorm == 0):
        raise DegenerateGradient("grad rho vanishes at an input point")
    far = np.abs(jet.value) > spec.collar_width
    if np.any(far):
        raise ProjectionError(
            f"{int(far.sum())} point(s) lie beyond the collar |rho| <= {spec.collar_width:g}; no boundary projection"
        )
    feet, ok = project_to_level(spec, pts, 0.0)
    if not ok.all():
        raise ProjectionError(f"Newton projection to the boundary failed for {int((~ok).sum())} point(s)")
    _, gf = eval_grad(spec.rho, feet)
    factors = np.linalg.norm(gf, axis=1)
    return NormalizedJets(jet.scaled(1.0 / factors), factors, feet)


def normalized_jet(spec: DomainSpec, p) -> Jet2:
    """2-jet at ``p`` of ``rho / |grad rho|``, the gradient norm frozen at the boundary projection of ``p``."""
    return normalized_jets(spec, np.asarray(p, dtype=float)[None, :]).jets[0]
