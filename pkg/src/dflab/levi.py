"""Levi-form analysis at boundary points: tangential frames, ranks, the weak set,
and the scalar invariants S(r) and K0."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DegenerateGradient, NotOnBoundary
from .geometry import ComplexDerivs, DomainSpec, complex_derivs, hermitian_part, metric_at
from .jet import eval_value

BOUNDARY_TOL = 1e-9


def hform(A, X, Y=None):
    """Evaluate the Hermitian form ``A(X, conj(Y)) = sum A[j,k] X_j conj(Y_k)``."""
    Y = X if Y is None else Y
    return np.einsum("...j,...jk,...k->...", X, A, np.conj(Y))


@dataclass(frozen=True)
class Frame:
    L_nu: np.ndarray  # (n,) metric-unit complex normal, L_nu r > 0
    tangent: np.ndarray  # (n, n-1), metric-orthonormal basis of T^{1,0}(r)
    P_tau: np.ndarray  # (n, n) projector X -> X_tau


def normal_frame(cd: ComplexDerivs, g) -> Frame:
    """Split C^n into the complex normal line and T^{1,0}(r) = {X : X r = 0}.

    With ``G = conj(g)`` the inner product reads ``<X, Y> = Y^H G X`` and
    ``X r = dbar^H X``, so the normal direction is ``G^{-1} dbar``.
    """
    n = cd.n
    G = np.conj(g)
    dbar = cd.dbar_rho
    w = np.linalg.solve(G, dbar)
    norm2 = np.real(np.vdot(dbar, w))
    if not norm2 > 0:
        raise DegenerateGradient("d rho vanishes; no complex normal direction")
    L_nu = w / np.sqrt(norm2)
    P_nu = np.outer(L_nu, np.conj(L_nu)) @ G
    # Cholesky G = C C^H turns the metric into the standard one in coordinates C^H X
    C = np.linalg.cholesky(G)
    q = np.linalg.solve(C, dbar)
    q = q / np.linalg.norm(q)
    # orthonormal complement of q in the transformed coordinates
    full = np.linalg.svd(q[:, None], full_matrices=True)[0]
    W = full[:, 1:]
    tangent = scipy.linalg.solve_triangular(C.conj().T, W, lower=False) if n > 1 else np.zeros((n, 0), complex)
    return Frame(L_nu, tangent, np.eye(n) - P_nu)


@dataclass(frozen=True)
class LeviData:
    point: np.ndarray
    L_nu: np.ndarray
    P_tau: np.ndarray
    frame: np.ndarray  # tangential orthonormal frame, columns
    levi: np.ndarray  # (n-1, n-1) Hermitian matrix, levi[a,b] = chess(E_a, conj(E_b))
    eigs: np.ndarray  # ascending
    eigvecs: np.ndarray  # X-coordinates in the frame: column c gives X = frame @ c
    rank: int
    null_basis: np.ndarray  # (n, k) orthonormal null vectors
    chess: np.ndarray
    rank_tol: float

    @property
    def min_eig(self) -> float:
        return float(self.eigs[0]) if len(self.eigs) else float("inf")

    @property
    def spectral_gap(self) -> float:
        """Distance of the spectrum from the rank threshold; small values flag borderline ranks."""
        if not len(self.eigs):
            return float("inf")
        return float(np.min(np.abs(self.eigs - self.rank_tol)))

    def null_vectors(self, threshold):
        sel = self.eigs <= threshold
        return self.frame @ self.eigvecs[:, sel]


def tangential_restriction(chess, frame):
    """Matrix of the form ``chess`` on the frame columns: ``E^T chess conj(E)``."""
    return hermitian_part(frame.T @ chess @ np.conj(frame))


def levi_from_derivs(point, cd: ComplexDerivs, g, rank_tol) -> LeviData:
    fr = normal_frame(cd, g)
    levi = tangential_restriction(cd.chess, fr.tangent)
    # levi(c, conj c) = c^T levi conj(c) = c^H conj(levi) c, so eigenvectors of conj(levi) are X-coordinates
    eigs, vecs = np.linalg.eigh(np.conj(levi)) if levi.size else (np.zeros(0), np.zeros((0, 0), complex))
    rank = int(np.sum(eigs > rank_tol))
    null = fr.tangent @ vecs[:, eigs <= rank_tol]
    return LeviData(
        point=np.asarray(point, dtype=float),
        L_nu=fr.L_nu,
        P_tau=fr.P_tau,
        frame=fr.tangent,
        levi=levi,
        eigs=eigs,
        eigvecs=vecs,
        rank=rank,
        null_basis=null,
        chess=cd.chess,
        rank_tol=rank_tol,
    )


def levi_at(spec: DomainSpec, p) -> LeviData:
    """Levi data of ``spec.rho`` at the boundary point ``p``."""
    p = np.asarray(p, dtype=float)
    value = float(eval_value(spec.rho, p))
    if abs(value) > BOUNDARY_TOL * max(1.0, spec.diameter):
        raise NotOnBoundary(f"|rho(p)| = {abs(value):.3g} exceeds the boundary tolerance")
    _, cd = complex_derivs(spec, p)
    if not np.any(np.abs(cd.d_rho) > 0):
        raise DegenerateGradient("d rho vanishes at the boundary point")
    return levi_from_derivs(p, cd, metric_at(spec, p), spec.rank_tol)


def levi_map(spec: DomainSpec, points) -> list:
    return [levi_at(spec, p) for p in np.atleast_2d(points)]


def weak_set(spec: DomainSpec, points, threshold=None) -> list:
    """Boundary samples whose smallest Levi eigenvalue is at most ``threshold`` (default rank_tol)."""
    threshold = spec.rank_tol if threshold is None else threshold
    out = []
    for p in np.atleast_2d(points):
        data = levi_at(spec, p)
        if len(data.eigs) and data.eigs[0] <= threshold:
            out.append((p, data))
    return out


def s_at(data: LeviData, null_threshold=None) -> float:
    """max over unit X_l in the null space of |chess(X_l, conj(L_nu))|.

    The map X_l -> X_l^T chess conj(L_nu) is linear, so on an orthonormal null
    basis N its maximum over the unit sphere is the norm of N^T chess conj(L_nu).
    """
    N = data.null_basis if null_threshold is None else data.null_vectors(null_threshold)
    if N.shape[1] == 0:
        return 0.0
    v = N.T @ data.chess @ np.conj(data.L_nu)
    return float(np.linalg.norm(v))


def compute_S(spec: DomainSpec, weak) -> float:
    """S(r) estimated over the sampled weak set; 0 when the weak set is empty."""
    values = [s_at(data) for _, data in weak]
    return max(values, default=0.0)


def s_sensitivity(spec: DomainSpec, levi_list, factor=10.0) -> dict:
    """S(r) on the weak set and on the widened band of near-weak points (eigs <= factor * rank_tol)."""
    wide = factor * spec.rank_tol
    weak = [d for d in levi_list if len(d.eigs) and d.eigs[0] <= spec.rank_tol]
    band = [d for d in levi_list if len(d.eigs) and d.eigs[0] <= wide]
    return {
        "S": max((s_at(d) for d in weak), default=0.0),
        "S_band": max((s_at(d, wide) for d in band), default=0.0),
        "n_weak": len(weak),
        "n_band": len(band),
        "band_threshold": wide,
    }


def s_trend(spec: DomainSpec, levi_list, fractions=(0.125, 0.25, 0.5, 1.0)) -> list:
    """Running maximum of S over growing prefixes of the sample list."""
    out = []
    total = len(levi_list)
    for f in fractions:
        k = max(1, int(round(f * total))) if total else 0
        sub = levi_list[:k]
        weak = [d for d in sub if len(d.eigs) and d.eigs[0] <= spec.rank_tol]
        out.append({"samples": k, "S": max((s_at(d) for d in weak), default=0.0)})
    return out


def compute_K0(spec: DomainSpec, points) -> float:
    """max over the samples of the metric operator norm of the complex Hessian."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    _, cd = complex_derivs(spec, pts)
    g = metric_at(spec, pts)
    best = 0.0
    for A, G in zip(cd.chess, g):
        lam = scipy.linalg.eigh(np.conj(A), np.conj(G), eigvals_only=True)
        best = max(best, float(np.max(np.abs(lam))))
    return best
