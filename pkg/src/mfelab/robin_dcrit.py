"""Solvability criterion at the critical parameter 8π.

The weight `h` enters through ``log h + 4πγ``; its maximizer `q` and the
regularized singular integral

    D_h(q) = ∫_{Ω∖B_δ} r̂/|x-q|⁴ + ∫_{B_δ} (r̂-1)/|x-q|⁴ - π/δ²,
    r̂(x)  = (h(x)/h(q)) exp(8π(G̃(x,q) - γ(q))),

decide whether the minimizer branch survives at ρ = 8π (``D > 0``, second
kind) or blows up (``D <= 0``, first kind).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .errors import DeltaTooLarge, InvalidWeight, MaximizerOnBoundaryRing, NotCritical
from .geometry import DomainSpec, Mesh, _hex_lattice
from .laplace import HarmonicFit, RobinData, green_regular, harmonic_fit, robin_values

FIRST_KIND = "first_kind"
SECOND_KIND = "second_kind"


# ---------------------------------------------------------------------------
# weights


def _poly_laplacian(terms):
    out = {}
    for (i, j), c in terms.items():
        if i >= 2:
            out[(i - 2, j)] = out.get((i - 2, j), 0.0) + c * i * (i - 1)
        if j >= 2:
            out[(i, j - 2)] = out.get((i, j - 2), 0.0) + c * j * (j - 1)
    return out


def _poly_eval(terms, x, y):
    out = np.zeros(np.broadcast(x, y).shape)
    for (i, j), c in terms.items():
        out = out + c * x**i * y**j
    return out


def _poly_shift(terms, q):
    """Coefficients of ``p(q + d) - p(q)`` as a polynomial in ``d``."""
    out = {}
    for (i, j), c in terms.items():
        for a in range(i + 1):
            for b in range(j + 1):
                if a == b == 0:
                    continue
                k = c * math.comb(i, a) * math.comb(j, b) * q[0] ** (i - a) * q[1] ** (j - b)
                out[(a, b)] = out.get((a, b), 0.0) + k
    return out


@dataclass(frozen=True)
class WeightSpec:
    """Positive weight ``h = exp(p(x))`` with `p` a polynomial.

    ``constant_one`` has ``p = 0``; ``exp_harmonic`` requires ``Δp = 0``;
    ``exp_harmonic_plus_quartic`` adds ``-t x₁⁴`` to a harmonic `p`.
    `coeffs` maps monomial exponents ``(i, j)`` to the coefficient of
    ``x₁^i x₂^j``.
    """

    kind: str = "constant_one"
    coeffs: tuple = ()
    t: float = 0.0

    def __post_init__(self):
        if self.kind not in ("constant_one", "exp_harmonic", "exp_harmonic_plus_quartic"):
            raise InvalidWeight(f"unknown weight kind {self.kind!r}")
        if isinstance(self.coeffs, dict):
            object.__setattr__(self, "coeffs", tuple(sorted((tuple(k), float(v)) for k, v in self.coeffs.items())))
        harmonic = dict(self.coeffs)
        if self.kind == "constant_one" and any(c != 0 for c in harmonic.values()):
            raise InvalidWeight("constant_one takes no coefficients")
        scale = max([abs(c) for c in harmonic.values()] + [1.0])
        if any(abs(c) > 1e-12 * scale for c in _poly_laplacian(harmonic).values()):
            raise InvalidWeight("log h polynomial is not harmonic")

    @classmethod
    def constant_one(cls):
        return cls()

    @classmethod
    def exp_harmonic(cls, coeffs):
        return cls("exp_harmonic", coeffs)

    @classmethod
    def exp_harmonic_plus_quartic(cls, coeffs, t):
        return cls("exp_harmonic_plus_quartic", coeffs, float(t))

    @property
    def log_harmonic(self) -> bool:
        return self.kind != "exp_harmonic_plus_quartic"

    @property
    def terms(self) -> dict:
        out = dict(self.coeffs)
        if self.kind == "exp_harmonic_plus_quartic" and self.t:
            out[(4, 0)] = out.get((4, 0), 0.0) - self.t
        return out

    def log_h(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return _poly_eval(self.terms, pts[..., 0], pts[..., 1])

    def __call__(self, pts) -> np.ndarray:
        return np.exp(self.log_h(pts))

    def grad_log_h(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        gx = {(i - 1, j): c * i for (i, j), c in self.terms.items() if i > 0}
        gy = {(i, j - 1): c * j for (i, j), c in self.terms.items() if j > 0}
        x, y = pts[..., 0], pts[..., 1]
        return np.stack([_poly_eval(gx, x, y), _poly_eval(gy, x, y)], axis=-1)

    def shifted_log_h(self, q):
        """``d -> log h(q + d) - log h(q)`` evaluated without cancellation."""
        terms = _poly_shift(self.terms, np.asarray(q, dtype=float))
        return lambda d: _poly_eval(terms, np.asarray(d)[..., 0], np.asarray(d)[..., 1])

    def to_dict(self) -> dict:
        return {"kind": self.kind, "coeffs": [[i, j, c] for (i, j), c in self.coeffs], "t": self.t}

    @classmethod
    def from_dict(cls, d) -> "WeightSpec":
        coeffs = {(int(i), int(j)): float(c) for i, j, c in d.get("coeffs", [])}
        return cls(d.get("kind", "constant_one"), coeffs, float(d.get("t", 0.0)))


# ---------------------------------------------------------------------------
# quadrature helpers shared with the test-function energy


def ray_quadrature(spec: DomainSpec, q, r_min: float, fn, power: float = 4.0, n_theta: int = 2048,
                   panel: float = 0.2, order: int = 8) -> float:
    """``∫_{Ω∖B(q, r_min)} fn(x) |x-q|^{-power} dx`` in polar coordinates about `q`.

    Radial integrals use composite Gauss-Legendre in ``log r``; angles use the
    periodic trapezoid rule.
    """
    q = np.asarray(q, dtype=float)
    thetas = 2 * math.pi * (np.arange(n_theta) + 0.5) / n_theta
    starts, ends = spec.ray_intervals(q, thetas)
    a = np.maximum(starts, r_min)
    ok = np.isfinite(ends) & (ends > a)
    th = np.broadcast_to(thetas[:, None], a.shape)[ok]
    ua, ub = np.log(a[ok]), np.log(ends[ok])
    npan = np.maximum(1, np.ceil((ub - ua) / panel).astype(int))
    pid = np.repeat(np.arange(len(ua)), npan)
    k = np.arange(len(pid)) - np.repeat(np.cumsum(npan) - npan, npan)
    width = ((ub - ua) / npan)[pid]
    lo = ua[pid] + k * width
    xg, wg = np.polynomial.legendre.leggauss(order)
    u = lo[:, None] + 0.5 * width[:, None] * (xg[None, :] + 1)
    w = 0.5 * width[:, None] * wg[None, :]
    r = np.exp(u)
    t = th[pid][:, None]
    pts = np.stack([q[0] + r * np.cos(t), q[1] + r * np.sin(t)], axis=-1)
    vals = np.asarray(fn(pts.reshape(-1, 2)), dtype=float).reshape(r.shape)
    contrib = vals * r ** (2.0 - power) * w
    return math.fsum(contrib.sum(axis=1)) * (2 * math.pi / n_theta)


def polar_ball(fn, center, radius: float, n_theta: int = 64, n_r: int = 16, panels=None, thetas=None) -> float:
    """``∫_{B(center, radius)} fn(x) dx`` with a uniform angular rule.

    `panels` lists radial breakpoints (defaults to a geometric grading toward
    the center); each panel uses `n_r` Gauss-Legendre nodes.
    """
    c = np.asarray(center, dtype=float)
    if thetas is None:
        thetas = 2 * math.pi * np.arange(n_theta) / n_theta
    thetas = np.asarray(thetas, dtype=float)
    if panels is None:
        panels = radius * np.concatenate([[0.0], np.geomspace(1e-4, 1.0, 13)])
    xg, wg = np.polynomial.legendre.leggauss(n_r)
    total = []
    for lo, hi in zip(panels[:-1], panels[1:]):
        r = lo + 0.5 * (hi - lo) * (xg + 1)
        w = 0.5 * (hi - lo) * wg * r
        pts = c + np.stack([r[:, None] * np.cos(thetas)[None], r[:, None] * np.sin(thetas)[None]], axis=-1)
        vals = np.asarray(fn(pts.reshape(-1, 2)), dtype=float).reshape(len(r), len(thetas))
        total.append(float((vals.mean(axis=1) * w).sum()) * 2 * math.pi)
    return math.fsum(total)


class LogRatio:
    """``log r̂`` about `q`: harmonic fit of G̃ near `q`, P1 interpolation elsewhere."""

    def __init__(self, mesh: Mesh, weight: WeightSpec, q, robin: RobinData, fit_radius: float, degree: int = 8):
        self.mesh, self.weight = mesh, weight
        self.q = np.asarray(q, dtype=float)
        self.robin = robin
        self.fit = harmonic_fit(mesh, robin.field, self.q, fit_radius, degree)
        self.gamma = float(self.fit.coef[0].real)
        coef0 = self.fit.coef.copy()
        coef0[0] = 0.0
        self._dfit = HarmonicFit(self.q, fit_radius, coef0)
        self._dlogh = weight.shifted_log_h(self.q)
        self.fit_radius = fit_radius

    def green_regular(self, pts) -> np.ndarray:
        """G̃(x, q) with the near-field fit inside 0.9·fit_radius."""
        pts = np.asarray(pts, dtype=float)
        g = self.mesh.interpolate(self.robin.field, pts)
        bad = ~np.isfinite(g)
        if np.any(bad):  # between the chordal mesh boundary and the true curve
            g[bad] = np.log(np.linalg.norm(pts[bad] - self.q, axis=1)) / (2 * math.pi)
        near = np.linalg.norm(pts - self.q, axis=1) < 0.9 * self.fit_radius
        g[near] = self.gamma + self._dfit(pts[near])
        return g

    def __call__(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        out = self._dlogh(pts - self.q) + 8 * math.pi * (self.green_regular(pts) - self.gamma)
        near = np.linalg.norm(pts - self.q, axis=1) < 0.9 * self.fit_radius
        out[near] = self._dlogh(pts[near] - self.q) + 8 * math.pi * self._dfit(pts[near])
        return out

    def gradient(self) -> np.ndarray:
        """∇(log h + 8πG̃(·,q)) at q, which equals ∇(log h + 4πγ)(q) by symmetry of G̃."""
        return self.weight.grad_log_h(self.q) + 8 * math.pi * self.fit.gradient()


# ---------------------------------------------------------------------------
# maximizer


@dataclass
class MaxPoint:
    q: np.ndarray
    value: float
    hessian: np.ndarray
    field_range: float
    stencil_grad: np.ndarray
    degenerate: bool

    def __iter__(self) -> Iterator:
        return iter((self.q, self.value, self.hessian))


def _objective(mesh, weight):
    return lambda P: weight.log_h(P) + 4 * math.pi * robin_values(mesh, P)


def _quad_fit(P, f, q, s):
    d = (P - q) / s
    X = np.column_stack([np.ones(len(d)), d[:, 0], d[:, 1], d[:, 0] ** 2, d[:, 0] * d[:, 1], d[:, 1] ** 2])
    c, *_ = np.linalg.lstsq(X, f, rcond=None)
    g = c[1:3] / s
    H = np.array([[2 * c[3], c[4]], [c[4], 2 * c[5]]]) / s**2
    return c[0], g, H


def find_max_point(mesh: Mesh, weight: Optional[WeightSpec] = None, spacing: Optional[float] = None,
                   max_iter: int = 80) -> MaxPoint:
    """Maximize ``log h + 4πγ``: coarse lattice scan, then stencil-fit Newton polishing.

    Raises MaximizerOnBoundaryRing when the maximizer lies within two edge
    lengths of the boundary.
    """
    weight = weight or WeightSpec()
    spec = mesh.domain
    h = mesh.target_h
    ring = 2.0 * h
    s0 = spacing or max(spec.diameter / 32, 2 * h)
    lo, hi = spec.outer.bbox()
    cand = _hex_lattice(lo, hi, s0, offset=(0.0, 0.0))
    cand = cand[spec.contains(cand)]
    cand = cand[spec.boundary_distance(cand) > 1.05 * ring]
    F = _objective(mesh, weight)
    vals = F(cand)
    i = int(np.argmax(vals))
    frange = float(vals.max() - vals.min())
    q = cand[i]
    if spec.boundary_distance(q[None])[0] < ring + s0:
        # the best lattice point sits on the outermost admissible layer
        nb = spec.boundary_distance(cand) < ring + s0
        if np.all(vals[nb] <= vals[i]) and _escapes(F, spec, q, s0, ring):
            raise MaximizerOnBoundaryRing(f"maximum of log h + 4πγ near the boundary at {q.tolist()}")

    dirs = np.array([[math.cos(a), math.sin(a)] for a in np.arange(8) * math.pi / 4])
    s = s0 / 2
    s_min = max(2 * h, 1e-3 * spec.diameter)
    g = H = None
    for _ in range(max_iter):
        P = np.vstack([q, q + s * dirs])
        if np.any(spec.boundary_distance(P) <= ring) or not np.all(spec.contains(P)):
            if s > s_min:
                s = max(s / 2, s_min)
                continue
            raise MaximizerOnBoundaryRing(f"maximizer polishing reached the boundary ring at {q.tolist()}")
        c0, g, H = _quad_fit(P, F(P), q, s)
        mu, V = np.linalg.eigh(H)
        flat = 1e-2 * max(abs(mu).max(), 1e-300)
        # regularized Newton: flat or convex directions get curvature -flat
        step = -V @ ((V.T @ g) / np.minimum(mu, -flat))
        n = np.linalg.norm(step)
        if n > s:
            step *= s / n
            n = s
        q = q + step
        if n < 1e-3 * s:
            if s <= s_min:
                break
            s = max(s / 2, s_min)
    # the stencil fit is limited by discretization noise; finish with Newton
    # steps on the gradient of the harmonic fit of G~(., q)
    P = np.vstack([q, q + s * dirs])
    value, g, H = _quad_fit(P, F(P), q, s)
    mu, V = np.linalg.eigh(H)
    mu = np.minimum(mu, -1e-2 * abs(mu).max())
    for _ in range(8):
        g = _fit_gradient(mesh, weight, q)
        step = -V @ ((V.T @ g) / mu)
        n = np.linalg.norm(step)
        if n > s:
            step *= s / n
        q = q + step
        if n < 1e-6 * spec.diameter:
            break
    P = np.vstack([q, q + s * dirs])
    value, _, H = _quad_fit(P, F(P), q, s)
    if spec.boundary_distance(q[None])[0] <= ring:
        raise MaximizerOnBoundaryRing(f"maximizer within two edges of the boundary at {q.tolist()}")
    mu = np.linalg.eigvalsh(H)
    degenerate = bool(abs(mu).min() < 0.05 * abs(mu).max())
    return MaxPoint(q, float(value), 0.5 * (H + H.T), frange, g, degenerate)


def _fit_gradient(mesh, weight, q):
    dq = float(mesh.domain.boundary_distance(q[None])[0])
    L = LogRatio(mesh, weight, q, green_regular(mesh, q), 0.6 * dq, degree=6)
    return L.gradient()


def _escapes(F, spec, q, s, ring):
    """True when F still increases toward the nearest boundary from `q`."""
    eps = 1e-6
    grad = np.array([F((q + [eps, 0])[None])[0] - F((q - [eps, 0])[None])[0],
                     F((q + [0, eps])[None])[0] - F((q - [0, eps])[None])[0]]) / (2 * eps)
    nrm = np.linalg.norm(grad)
    if nrm == 0:
        return False
    probe = q + min(0.5 * s, spec.boundary_distance(q[None])[0] - ring) * grad / nrm
    return spec.boundary_distance(probe[None])[0] <= spec.boundary_distance(q[None])[0]


# ---------------------------------------------------------------------------
# D_h(q)


def inner_ball_term(logratio, q, delta: float, thetas=None, n_theta: int = 64) -> float:
    """``∫_{B_δ} (r̂-1)/|x-q|⁴`` on a polar grid with symmetric angular nodes."""
    q = np.asarray(q, dtype=float)

    def f(P):
        r2 = np.einsum("ij,ij->i", P - q, P - q)
        return np.expm1(logratio(P)) / (r2 * r2)

    return polar_ball(f, q, delta, n_theta=n_theta, thetas=thetas)


def _d_parts(spec, mesh, weight, q, robin, delta, grad_tol, n_theta):
    q = np.asarray(q, dtype=float)
    dq = float(spec.boundary_distance(q[None])[0])
    if delta is None:
        delta = 0.4 * dq
    if not spec.contains(q[None])[0] or delta >= dq:
        raise DeltaTooLarge("B(q, delta) is not contained in the domain")
    fit_radius = min(0.85 * dq, max(1.6 * delta, 0.5 * dq))
    L = LogRatio(mesh, weight, q, robin, fit_radius)
    grad = L.gradient()
    gnorm = float(np.linalg.norm(grad))
    if grad_tol is None:
        grad_tol = 2e-3 / dq
    if gnorm > grad_tol:
        raise NotCritical(f"|∇(log h + 4πγ)(q)| = {gnorm:.3e} exceeds {grad_tol:.3e}")
    inner = inner_ball_term(L, q, delta)
    outer = ray_quadrature(spec, q, delta, lambda P: np.exp(L(P)), power=4.0, n_theta=n_theta)
    D = outer + inner - math.pi / delta**2
    return {"D": D, "inner": inner, "outer": outer, "delta": delta, "grad_norm": gnorm,
            "gamma_fit": L.gamma, "logratio": L}


def compute_D(spec: DomainSpec, mesh: Mesh, weight: Optional[WeightSpec], q, robin: RobinData,
              delta: Optional[float] = None, grad_tol: Optional[float] = None, n_theta: int = 2048) -> float:
    """Regularized singular integral ``D_h(q)``.

    `q` must be a critical point of ``log h + 4πγ`` (NotCritical otherwise);
    the default `delta` is 0.4 times the distance from `q` to the boundary.
    """
    return _d_parts(spec, mesh, weight or WeightSpec(), q, robin, delta, grad_tol, n_theta)["D"]


@dataclass
class DCritReport:
    q: tuple
    gamma_q: float
    grad_norm: float
    hessian: list
    D_value: float
    delta_used: float
    verdict: str
    max_value: float = 0.0
    hessian_negative_definite: bool = False
    degenerate_maximizer: bool = False
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "q_x": float(self.q[0]),
            "q_y": float(self.q[1]),
            "gamma_q": self.gamma_q,
            "grad_norm": self.grad_norm,
            "hessian_xx": self.hessian[0][0],
            "hessian_xy": self.hessian[0][1],
            "hessian_yy": self.hessian[1][1],
            "D_value": self.D_value,
            "delta_used": self.delta_used,
            "verdict": self.verdict,
            "max_value": self.max_value,
            "hessian_negative_definite": self.hessian_negative_definite,
            "degenerate_maximizer": self.degenerate_maximizer,
        }
        out.update(self.extras)
        return out


def classify(spec: DomainSpec, mesh: Mesh, weight: Optional[WeightSpec] = None, delta: Optional[float] = None) -> DCritReport:
    """Maximize ``log h + 4πγ`` and evaluate the sign of ``D_h`` there."""
    weight = weight or WeightSpec()
    mp = find_max_point(mesh, weight)
    robin = green_regular(mesh, mp.q)
    parts = _d_parts(spec, mesh, weight, mp.q, robin, delta, 1e-3 * max(mp.field_range, 1e-12), 2048)
    D = parts["D"]
    H = mp.hessian
    negdef = bool(np.all(np.linalg.eigvalsh(H) < 0))
    return DCritReport(
        q=(float(mp.q[0]), float(mp.q[1])),
        gamma_q=float(robin.gamma_q),
        grad_norm=parts["grad_norm"],
        hessian=[[float(H[0, 0]), float(H[0, 1])], [float(H[1, 0]), float(H[1, 1])]],
        D_value=float(D),
        delta_used=float(parts["delta"]),
        verdict=SECOND_KIND if D > 0 else FIRST_KIND,
        max_value=mp.value,
        hessian_negative_definite=negdef,
        degenerate_maximizer=mp.degenerate,
    )
