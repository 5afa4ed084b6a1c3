"""Bol's isoperimetric inequality on level sets and weighted symmetrization.

For a metric ``e^v`` the mass and weighted perimeter of ``ω`` are
``m = ∫_ω e^v`` and ``ℓ = ∫_{∂ω} e^{v/2} ds``; the inequality reads
``2ℓ² ≥ m(8π - m)``. Level sets ``{v > t}`` of a P1 field are clipped
exactly, triangle by triangle, so `m` and `ℓ` come from the same polygonal
region.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import DegenerateThreshold, EmptyPositivePart
from .geometry import Mesh, _DUNAVANT5
from .laplace import gradients

EIGHT_PI = 8 * math.pi


# ---------------------------------------------------------------------------
# the standard bubble


def bubble_U(x):
    """``U(x) = -2 log(1 + |x|²/8)``, an entire solution of ``ΔU + e^U = 0``."""
    x = np.asarray(x, dtype=float)
    r2 = np.einsum("...i,...i->...", x, x) if x.ndim and x.shape[-1] == 2 else x * x
    return -2.0 * np.log1p(r2 / 8.0)


def bubble_U_radial(r):
    r = np.asarray(r, dtype=float)
    return -2.0 * np.log1p(r * r / 8.0)


def bubble_z(r):
    """``z(r) = (8 - r²)/(8 + r²)``, the radial kernel element of ``Δ + e^U``."""
    r = np.asarray(r, dtype=float)
    return (8 - r * r) / (8 + r * r)


def bubble_mass(r):
    """``∫_{B_r} e^U = 8π r²/(8 + r²)``."""
    r = np.asarray(r, dtype=float)
    return EIGHT_PI * r * r / (8 + r * r)


def bubble_radius(m):
    """Inverse of `bubble_mass`; infinite at ``m = 8π``."""
    m = np.asarray(m, dtype=float)
    with np.errstate(divide="ignore"):
        return np.sqrt(8 * m / np.maximum(EIGHT_PI - m, 0.0))


def _radial_laplacian(f1, f2, r):
    return f2 + f1 / r


def residual_U(r):
    """``ΔU + e^U`` from analytic radial derivatives."""
    r = np.asarray(r, dtype=float)
    d = 8 + r * r
    U1 = -4 * r / d
    U2 = -4 * (8 - r * r) / d**2
    return _radial_laplacian(U1, U2, r) + np.exp(bubble_U_radial(r))


def residual_z(r):
    """``Δz + e^U z`` from analytic radial derivatives."""
    r = np.asarray(r, dtype=float)
    d = 8 + r * r
    z1 = -32 * r / d**2
    z2 = -32 * (8 - 3 * r * r) / d**3
    return _radial_laplacian(z1, z2, r) + np.exp(bubble_U_radial(r)) * bubble_z(r)


# ---------------------------------------------------------------------------
# level sets of P1 fields


def _tri_exp_integral(P, vals):
    """``∫ e^v`` over triangles ``P (k,3,2)`` with linear ``v`` given at vertices."""
    if len(P) == 0:
        return 0.0
    bary, w = _DUNAVANT5
    e1, e2 = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
    area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    vq = vals @ bary.T
    return math.fsum((area[:, None] * w[None, :] * np.exp(vq)).ravel())


def _clip_above(mesh: Mesh, v, t):
    """Sub-triangles of ``{v > t}`` as ``(P, vals)`` plus contour segments."""
    tri = mesh.triangles
    V = v[tri]
    P = mesh.nodes[tri]
    above = V > t
    n_up = above.sum(axis=1)
    pieces_P = [P[n_up == 3]]
    pieces_v = [V[n_up == 3]]
    seg_a, seg_b, seg_edges = [], [], []
    for k_up in (1, 2):
        sel = np.flatnonzero(n_up == k_up)
        if len(sel) == 0:
            continue
        up = above[sel]
        # rotate so the odd vertex (alone on its side) comes first
        odd = np.argmax(up if k_up == 1 else ~up, axis=1)
        order = (odd[:, None] + np.arange(3)[None, :]) % 3
        Pk = np.take_along_axis(P[sel], order[..., None], axis=1)
        Vk = np.take_along_axis(V[sel], order, axis=1)
        Tk = np.take_along_axis(tri[sel], order, axis=1)
        s1 = (t - Vk[:, 0]) / (Vk[:, 1] - Vk[:, 0])
        s2 = (t - Vk[:, 0]) / (Vk[:, 2] - Vk[:, 0])
        X1 = Pk[:, 0] + s1[:, None] * (Pk[:, 1] - Pk[:, 0])
        X2 = Pk[:, 0] + s2[:, None] * (Pk[:, 2] - Pk[:, 0])
        tt = np.full(len(sel), t)
        if k_up == 1:
            pieces_P.append(np.stack([Pk[:, 0], X1, X2], 1))
            pieces_v.append(np.column_stack([Vk[:, 0], tt, tt]))
        else:
            # quadrilateral X1, P1, P2, X2 split into two triangles
            pieces_P.append(np.stack([X1, Pk[:, 1], Pk[:, 2]], 1))
            pieces_v.append(np.column_stack([tt, Vk[:, 1], Vk[:, 2]]))
            pieces_P.append(np.stack([X1, Pk[:, 2], X2], 1))
            pieces_v.append(np.column_stack([tt, Vk[:, 2], tt]))
        seg_a.append(X1)
        seg_b.append(X2)
        seg_edges.append(np.stack([np.sort(Tk[:, [0, 1]], axis=1), np.sort(Tk[:, [0, 2]], axis=1)], 1))
    Pc = np.concatenate(pieces_P)
    Vc = np.concatenate(pieces_v)
    if seg_a:
        A, B, E = np.concatenate(seg_a), np.concatenate(seg_b), np.concatenate(seg_edges)
    else:
        A = B = np.zeros((0, 2))
        E = np.zeros((0, 2, 2), dtype=np.int64)
    return Pc, Vc, A, B, E


def _topology(mesh: Mesh, v, t, seg_edges):
    """Component count and loop count per component of ``{v > t}``."""
    n = mesh.n_nodes
    up = v > t
    tri = mesh.triangles
    E = np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    E = E[up[E[:, 0]] & up[E[:, 1]]]
    G = sp.coo_matrix((np.ones(len(E)), (E[:, 0], E[:, 1])), shape=(n, n))
    _, label = connected_components(G, directed=False)
    comps = np.unique(label[up])
    if len(seg_edges) == 0:
        return len(comps), {int(c): 0 for c in comps}
    # contour loops: segments are linked through shared crossing edges
    keys = seg_edges[:, :, 0] * n + seg_edges[:, :, 1]
    uniq, inv = np.unique(keys.ravel(), return_inverse=True)
    inv = inv.reshape(-1, 2)
    ns = len(seg_edges)
    S = sp.coo_matrix((np.ones(ns), (inv[:, 0], inv[:, 1])), shape=(len(uniq),) * 2)
    n_loops, loop_of = connected_components(S, directed=False)
    first = np.unique(loop_of[inv[:, 0]], return_index=True)[1]
    i, j = seg_edges[first, 0, 0], seg_edges[first, 0, 1]
    node = np.where(up[i], i, j)
    per = {int(c): 0 for c in comps}
    for c in label[node]:
        per[int(c)] += 1
    return len(comps), per


@dataclass
class LevelSet:
    t: float
    m: float
    ell: float
    length: float
    components: int
    simply_connected: bool
    loops: int

    @property
    def margin(self) -> float:
        return 2 * self.ell**2 - self.m * (EIGHT_PI - self.m)

    def __iter__(self):
        return iter((self.m, self.ell, self.components, self.simply_connected))


def level_set(mesh: Mesh, v, t: float) -> LevelSet:
    v = np.asarray(v, dtype=float)
    lo, hi = float(v.min()), float(v.max())
    if not (lo < t < hi):
        raise DegenerateThreshold(f"threshold {t} outside ({lo}, {hi})")
    if np.any(v == t):
        raise DegenerateThreshold(f"threshold {t} coincides with a nodal value")
    Pc, Vc, A, B, E = _clip_above(mesh, v, t)
    m = _tri_exp_integral(Pc, Vc)
    seg = np.linalg.norm(B - A, axis=1)
    length = math.fsum(seg)
    # the contour of the linear interpolant sits at v = t, so the midpoint weight is e^{t/2}
    ell = math.exp(t / 2) * length
    ncomp, per = _topology(mesh, v, t, E)
    simple = all(k == 1 for k in per.values())
    return LevelSet(float(t), m, ell, length, ncomp, simple, int(sum(per.values())))


def level_set_metrics(mesh: Mesh, v, t: float):
    """``(m, ℓ, component_count, simply_connected)`` of ``{v > t}``."""
    return tuple(level_set(mesh, v, t))


def _nudge(v, t, span):
    """Move `t` off nodal values by 1e-12 of the range."""
    eps = 1e-12 * span
    for _ in range(8):
        if not np.any(np.abs(v - t) < eps):
            break
        t += 2 * eps
    return t


# ---------------------------------------------------------------------------
# Bol check on solutions


@dataclass
class BolReport:
    levels: list
    tol_bol: float
    overall_pass: bool
    strict_multiply_connected: bool
    rho: Optional[float] = None
    extras: dict = field(default_factory=dict)

    @property
    def thresholds(self):
        return [l.t for l in self.levels]

    @property
    def margins(self) -> np.ndarray:
        return np.array([l.margin for l in self.levels])

    def rows(self) -> list:
        return [{"t": l.t, "m": l.m, "ell": l.ell, "margin": l.margin, "components": l.components,
                 "simply_connected": l.simply_connected} for l in self.levels]

    def to_dict(self) -> dict:
        return {"rho": self.rho, "tol_bol": self.tol_bol, "overall_pass": self.overall_pass,
                "strict_multiply_connected": self.strict_multiply_connected,
                "min_margin": float(self.margins.min()) if self.levels else None, **self.extras}


def bol_levels(mesh: Mesh, v, n_thresholds: int = 32, C: float = 5.0, lower=None) -> BolReport:
    """Margins on `n_thresholds` equispaced levels between `lower` and ``max v``.

    By default `lower` is the largest boundary value, so every level set is
    compactly contained in the domain.
    """
    v = np.asarray(v, dtype=float)
    hi = float(v.max())
    lo = float(v[mesh.boundary].max()) if lower is None else float(lower)
    span = hi - lo
    if span <= 0:
        raise DegenerateThreshold("field has no interior excess over its boundary values")
    ts = lo + span * (np.arange(n_thresholds) + 0.5) / n_thresholds
    levels = [level_set(mesh, v, _nudge(v, float(t), span)) for t in ts]
    h = mesh.target_h
    top = math.exp(hi / 2)
    tol = C * h * top * max(l.length for l in levels)
    ok = all(l.margin >= -tol for l in levels)
    strict = all(l.margin > 0 for l in levels if not l.simply_connected)
    return BolReport(levels, tol, ok and strict, strict)


def bol_field(point) -> np.ndarray:
    """``v = u + log h + log ρ - log ∫h e^u`` so that ``∫ e^v = ρ``."""
    weight = point.weight
    logh = weight.log_h(point.mesh.nodes) if weight is not None else 0.0
    return point.u + logh + math.log(point.rho) - point.log_Z


def bol_check(mesh: Mesh, solution, n_thresholds: int = 32, C: float = 5.0) -> BolReport:
    if solution.rho > EIGHT_PI * (1 + 1e-12):
        raise ValueError("Bol check needs rho <= 8π")
    v = bol_field(solution)
    rep = bol_levels(mesh, v, n_thresholds, C)
    rep.rho = solution.rho
    return rep


# ---------------------------------------------------------------------------
# the annular counterexample


def counterexample_metrics(alpha: float, a: float, r1: float, r2: float):
    """Closed-form ``(m, ℓ, margin_8pi)`` for the annulus ``r1 < |x| < r2`` and
    ``v_α = log(8(1+α)²a²|x|^{2α} / (1 + a²|x|^{2(1+α)})²)``."""
    if not (-1 < alpha < 0):
        raise ValueError("alpha must lie in (-1, 0)")
    if not (0 < r1 < r2) or a <= 0:
        raise ValueError("need 0 < r1 < r2 and a > 0")
    k = 1 + alpha
    s1, s2 = a * a * r1 ** (2 * k), a * a * r2 ** (2 * k)
    m = EIGHT_PI * k * (1 / (1 + s1) - 1 / (1 + s2))
    c = 2 * math.pi * math.sqrt(8) * k * a
    ell = c * r1**k / (1 + s1) + c * r2**k / (1 + s2)
    return m, ell, 2 * ell**2 - m * (EIGHT_PI - m)


def counterexample_density(alpha, a, r):
    k = 1 + alpha
    r = np.asarray(r, dtype=float)
    return 8 * k * k * a * a * r ** (2 * alpha) / (1 + a * a * r ** (2 * k)) ** 2


def counterexample_mass_quadrature(alpha, a, r1, r2, n: int = 40, panels: int = 60) -> float:
    """``∫ e^{v_α}`` over the annulus by Gauss-Legendre in ``log r`` (radial)."""
    x, w = np.polynomial.legendre.leggauss(n)
    edges = np.linspace(math.log(r1), math.log(r2), panels + 1)
    total = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        s = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        r = np.exp(s)
        total.append(0.5 * (hi - lo) * float(w @ (counterexample_density(alpha, a, r) * r * r)))
    return 2 * math.pi * math.fsum(total)


# ---------------------------------------------------------------------------
# symmetrization


@dataclass
class RadialProfile:
    radii: np.ndarray
    values: np.ndarray

    def __call__(self, r):
        return np.interp(r, self.radii, self.values)


@dataclass
class SymmetrizationReport:
    profile: RadialProfile
    R0: float
    equimeasurability: np.ndarray
    weighted_l2: tuple
    dirichlet: tuple
    levels: np.ndarray
    energy_tol: float = 1e-2  # relative slack; radial inputs are equality cases

    @property
    def max_equimeasurability(self) -> float:
        return float(np.max(np.abs(self.equimeasurability)))

    @property
    def energy_inequality(self) -> bool:
        star, orig = self.dirichlet
        return star <= orig * (1 + self.energy_tol)

    def to_dict(self) -> dict:
        return {"R0": self.R0, "max_equimeasurability": self.max_equimeasurability,
                "weighted_l2_star": self.weighted_l2[0], "weighted_l2": self.weighted_l2[1],
                "dirichlet_star": self.dirichlet[0], "dirichlet": self.dirichlet[1],
                "energy_inequality": self.energy_inequality}


def _superlevel_mass(mesh, phi, ev_log, t):
    """``∫_{φ>t} e^v`` with `v` linear on each clipped piece."""
    tri = mesh.triangles
    V = phi[tri]
    L = ev_log[tri]
    P = mesh.nodes[tri]
    above = V > t
    n_up = above.sum(axis=1)
    parts = [_tri_exp_integral(P[n_up == 3], L[n_up == 3])]
    for k_up in (1, 2):
        sel = np.flatnonzero(n_up == k_up)
        if len(sel) == 0:
            continue
        up = above[sel]
        odd = np.argmax(up if k_up == 1 else ~up, axis=1)
        order = (odd[:, None] + np.arange(3)[None, :]) % 3
        Pk = np.take_along_axis(P[sel], order[..., None], axis=1)
        Vk = np.take_along_axis(V[sel], order, axis=1)
        Lk = np.take_along_axis(L[sel], order, axis=1)
        s1 = (t - Vk[:, 0]) / (Vk[:, 1] - Vk[:, 0])
        s2 = (t - Vk[:, 0]) / (Vk[:, 2] - Vk[:, 0])
        X1 = Pk[:, 0] + s1[:, None] * (Pk[:, 1] - Pk[:, 0])
        X2 = Pk[:, 0] + s2[:, None] * (Pk[:, 2] - Pk[:, 0])
        L1 = Lk[:, 0] + s1 * (Lk[:, 1] - Lk[:, 0])
        L2 = Lk[:, 0] + s2 * (Lk[:, 2] - Lk[:, 0])
        if k_up == 1:
            parts.append(_tri_exp_integral(np.stack([Pk[:, 0], X1, X2], 1), np.column_stack([Lk[:, 0], L1, L2])))
        else:
            parts.append(_tri_exp_integral(np.stack([X1, Pk[:, 1], Pk[:, 2]], 1), np.column_stack([L1, Lk[:, 1], Lk[:, 2]])))
            parts.append(_tri_exp_integral(np.stack([X1, Pk[:, 2], X2], 1), np.column_stack([L1, Lk[:, 2], L2])))
    return math.fsum(parts)


def _positive_part_weighted(mesh, phi, ev_log, fn, n_sub=4):
    """``∫_{φ>0} e^v fn(φ)`` by uniform sub-triangle sampling of the clipped set."""
    bary, w = _DUNAVANT5
    tri = mesh.triangles
    # refine each triangle into n_sub² pieces and keep the pieces' quadrature points where φ > 0
    pts = []
    for i in range(n_sub):
        for j in range(n_sub - i):
            pts.append([(i + 1 / 3) / n_sub, (j + 1 / 3) / n_sub])
            if i + j < n_sub - 1:
                pts.append([(i + 2 / 3) / n_sub, (j + 2 / 3) / n_sub])
    lam = np.array(pts)
    B = np.column_stack([1 - lam.sum(1), lam])
    PH = phi[tri] @ B.T
    EV = ev_log[tri] @ B.T
    area = np.abs(mesh.areas)[:, None] / len(B)
    vals = np.where(PH > 0, np.exp(EV) * fn(np.maximum(PH, 0.0)), 0.0) * area
    return math.fsum(vals.ravel())


def symmetrize(mesh: Mesh, phi, v, n_levels: int = 400, n_check: int = 20, n_radii: int = 200) -> SymmetrizationReport:
    """Decreasing rearrangement of `phi` with respect to ``e^v`` into the frame of ``e^U``.

    The radius ``r(t)`` solves ``∫_{B_r} e^U = ∫_{φ>t} e^v`` and the profile is
    ``φ*(r(t)) = t``.
    """
    phi = np.asarray(phi, dtype=float)
    v = np.asarray(v, dtype=float)
    top = float(phi.max())
    if top <= 0:
        raise EmptyPositivePart("phi has no positive part")
    # levels clustered near the top, where r(t) varies fastest
    s = np.linspace(0.0, 1.0, n_levels + 1)
    ts = top * (1 - (1 - s) ** 2)
    ts[-1] = top * (1 - 1e-9)
    ts[0] = 0.0
    mass = np.array([_superlevel_mass(mesh, phi, v, _nudge(phi, float(t), top) if t > 0 else 0.0) for t in ts])
    mass = np.minimum.accumulate(mass)
    r_of_t = bubble_radius(mass)
    R0 = float(r_of_t[0])
    # profile: r increasing ⇔ t decreasing
    radii = r_of_t[::-1]
    values = ts[::-1]
    keep = np.concatenate([[True], np.diff(radii) > 0])
    radii, values = radii[keep], values[keep]
    if radii[0] > 0:
        radii = np.concatenate([[0.0], radii])
        values = np.concatenate([[top], values])
    profile = RadialProfile(radii, values)

    # equimeasurability at levels between the construction grid
    tc = top * (np.arange(n_check) + 0.5) / n_check
    eq = []
    for t in tc:
        t = _nudge(phi, float(t), top)
        m_phi = _superlevel_mass(mesh, phi, v, t)
        # radius where the profile drops to t, by linear interpolation of the decreasing profile
        r_star = float(np.interp(-t, -values, radii))
        m_star = float(bubble_mass(r_star))
        eq.append((m_star - m_phi) / max(m_phi, 1e-300))
    eq = np.array(eq)

    # weighted L² (radial quadrature of e^U φ*²)
    l2_star = _radial_integral(profile, lambda r, f: np.exp(bubble_U_radial(r)) * f * f, R0)
    l2 = _positive_part_weighted(mesh, phi, v, lambda f: f * f)

    # Dirichlet energies: coarea form on the level grid for φ*, P1 gradients for φ
    dt = np.diff(ts)
    dr = -np.diff(r_of_t)
    rm = 0.5 * (r_of_t[1:] + r_of_t[:-1])
    ok = dr > 0
    d_star = math.fsum((2 * math.pi * rm[ok] * dt[ok] ** 2 / dr[ok]).tolist())
    g = gradients(mesh, phi)
    frac = _positive_fraction(mesh, phi)
    d_orig = math.fsum((np.einsum("ij,ij->i", g, g) * np.abs(mesh.areas) * frac).tolist())
    return SymmetrizationReport(profile, R0, eq, (l2_star, l2), (d_star, d_orig), tc)


def _radial_integral(profile, fn, R, n=4000):
    r = np.linspace(0.0, R, n + 1) if math.isfinite(R) else None
    if r is None:
        raise ValueError("R0 is infinite")
    rm = 0.5 * (r[1:] + r[:-1])
    return 2 * math.pi * math.fsum((fn(rm, profile(rm)) * rm * np.diff(r)).tolist())


def _positive_fraction(mesh, phi):
    """Area fraction of each triangle where the linear interpolant is positive."""
    V = phi[mesh.triangles]
    out = np.zeros(len(V))
    n_up = (V > 0).sum(axis=1)
    out[n_up == 3] = 1.0
    for k_up in (1, 2):
        sel = np.flatnonzero(n_up == k_up)
        if len(sel) == 0:
            continue
        up = V[sel] > 0
        odd = np.argmax(up if k_up == 1 else ~up, axis=1)
        Vk = np.take_along_axis(V[sel], ((odd[:, None] + np.arange(3)[None, :]) % 3), axis=1)
        f = (Vk[:, 0] / (Vk[:, 0] - Vk[:, 1])) * (Vk[:, 0] / (Vk[:, 0] - Vk[:, 2]))
        out[sel] = f if k_up == 1 else 1 - f
    return out
