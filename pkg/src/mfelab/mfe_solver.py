"""Mean field equation ``Δu + ρ h e^u / ∫h e^u = 0``, ``u = 0`` on ∂Ω.

Discretization: P1 stiffness with vertex (lumped) quadrature for every
integral of ``e^u``, so the discrete residual is exactly the gradient of the
discrete functional ``I_ρ(u) = ½ uᵀAu - ρ log Σ w h e^u``. Near blow-up an
explicit bubble is split off (see ``enrich``) and the same functional is
assembled for the P1 remainder.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .robin_dcrit import LogRatio, WeightSpec, polar_ball, ray_quadrature
from .errors import BallDoesNotFit, EmptyBranch, InsufficientTail, NoConvergence, Overflow
from .geometry import Mesh, Refinement, triangulate
from .enrich import Enrichment, lumped_rule
from .laplace import RobinData, discretize, eig_smallest

log = logging.getLogger(__name__)

EIGHT_PI = 8 * math.pi
CONVERGED_AT_8PI = "converged_at_8pi"
BLOWUP_DETECTED = "blowup_detected"
STEP_UNDERFLOW = "step_underflow"
BRANCH_COLUMNS = ("rho", "lambda_blow", "eig1", "I_value", "energy_E", "entropy_S", "max_u", "argmax_x", "argmax_y")


# ---------------------------------------------------------------------------
# discrete functional


class _Problem:
    """Discrete functional for ``u = β + w`` with `w` piecewise linear.

    Without enrichment ``β ≡ 0`` and the quadrature is the vertex rule, so the
    problem is the plain lumped P1 one. With a bubble the rule is refined
    around it and ``w = -β`` on the boundary keeps ``u = 0`` there.
    """

    def __init__(self, mesh: Mesh, weight: WeightSpec, enrichment: Optional[Enrichment] = None):
        self.mesh = mesh
        self.weight = weight
        self.enrichment = enrichment
        self.d = discretize(mesh)
        self.I = self.d.I
        self.A = self.d.A_II
        self.Afull = self.d.A
        rule = lumped_rule(mesh) if enrichment is None else enrichment.rule
        self.rule = rule
        self.Phi = rule.Phi
        self.Phi_I = rule.Phi[:, self.I].tocsr()
        self.omega = rule.omega
        # constant part of the log integrand at the quadrature points
        self.base = np.log(rule.omega) + weight.log_h(rule.X) + rule.beta
        self.beta_q = rule.beta
        self.w_bdry = np.zeros(mesh.n_nodes)
        if enrichment is None:
            self.load = np.zeros(mesh.n_nodes)
            self.beta_nodes = np.zeros(mesh.n_nodes)
            self.E_beta = 0.0
        else:
            self.load = enrichment.load
            self.beta_nodes = enrichment.beta_nodes
            self.E_beta = enrichment.energy
            self.w_bdry[self.d.B] = -self.beta_nodes[self.d.B]
        self.load_I = self.load[self.I]
        self.lift = self.d.A_IB @ self.w_bdry[self.d.B]
        wb = self.w_bdry
        self.const = self.E_beta + float(self.load @ wb) + 0.5 * float(wb @ (self.Afull @ wb))

    def full(self, wI):
        w = self.w_bdry.copy()
        w[self.I] = wI
        return w

    def nodal_u(self, wI):
        return self.beta_nodes + self.full(wI)

    def _exponent(self, wI):
        u = self.beta_q + self.Phi @ self.full(wI)
        m = float(u.max())
        if not math.isfinite(m) or m > 700:
            raise Overflow(f"max u = {m:.3g} is outside the exponential range")
        return self.base + (u - self.beta_q)

    def log_Z(self, wI):
        t = self._exponent(wI)
        m = float(t.max())
        return m + math.log(math.fsum(np.exp(t - m)))

    def probabilities(self, wI):
        """Quadrature masses ``ω h e^u / Z`` (sum to 1)."""
        t = self._exponent(wI)
        m = float(t.max())
        e = np.exp(t - m)
        s = math.fsum(e)
        return e / s, m + math.log(s)

    def dirichlet(self, wI):
        """``½∫|∇u|²``."""
        return self.const + float(self.load_I @ wI) + float(wI @ self.lift) + 0.5 * float(wI @ (self.A @ wI))

    def energy(self, wI, rho):
        return self.dirichlet(wI) - rho * self.log_Z(wI)

    def residual(self, wI, rho):
        p, _ = self.probabilities(wI)
        b = rho * (self.Phi_I.T @ p)
        return self.load_I + self.lift + self.A @ wI - b, p

    def coupling(self, p, rho):
        """``B = ρ Φᵀ diag(p) Φ`` on interior nodes and ``b = ρ Φᵀ p``."""
        b = rho * (self.Phi_I.T @ p)
        if self.enrichment is None:
            return sp.diags(b).tocsc(), b
        B = (self.Phi_I.T @ sp.diags(rho * p) @ self.Phi_I).tocsc()
        return B, b

    def jacobian_solve(self, p, rho, rhs):
        """Solve ``(A - B + b bᵀ/ρ) x = rhs`` via the bordered system."""
        B, b = self.coupling(p, rho)
        n = len(b)
        K = sp.bmat([[self.A - B, sp.csc_matrix(b[:, None])],
                     [sp.csr_matrix(b[None, :]), sp.csr_matrix(np.array([[-rho]]))]], format="csc")
        try:
            lu = spla.splu(K, permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise NoConvergence(f"singular Jacobian: {exc}") from exc
        x = lu.solve(np.concatenate([rhs, [0.0]]))
        return x[:n]


def _problem(mesh: Mesh, weight: Optional[WeightSpec]) -> _Problem:
    weight = weight or WeightSpec()
    key = ("mfe", weight)
    if key not in mesh._cache:
        mesh._cache[key] = _Problem(mesh, weight)
    return mesh._cache[key]


def evaluate_I(mesh: Mesh, weight: Optional[WeightSpec], rho: float, u) -> float:
    """Discrete ``I_ρ(u) = ½∫|∇u|² - ρ log ∫ h e^u`` (u given at all nodes)."""
    P = _problem(mesh, weight)
    u = np.asarray(u, dtype=float)
    return P.energy(u[P.I], rho)


def gradient_I(mesh: Mesh, weight: Optional[WeightSpec], rho: float, u) -> np.ndarray:
    """Gradient of the discrete functional with respect to interior nodal values."""
    P = _problem(mesh, weight)
    u = np.asarray(u, dtype=float)
    return P.residual(u[P.I], rho)[0]


# ---------------------------------------------------------------------------
# solutions


@dataclass
class SolutionPoint:
    rho: float
    u: np.ndarray
    lambda_blow: float
    eig1_weighted: float
    nonlocal_nonsingular: bool
    I_value: float
    energy_E: float
    entropy_S: float
    residual: float = 0.0
    iterations: int = 0
    log_Z: float = 0.0
    mesh: Optional[Mesh] = field(default=None, repr=False)
    weight: Optional[WeightSpec] = field(default=None, repr=False)
    center: Optional[np.ndarray] = None
    mu: Optional[float] = None
    problem: Optional[_Problem] = field(default=None, repr=False)
    w: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def max_u(self) -> float:
        return float(self.u.max())

    @property
    def argmax(self) -> np.ndarray:
        return self.mesh.nodes[int(np.argmax(self.u))]

    def record(self) -> dict:
        x, y = self.argmax
        return {
            "rho": self.rho,
            "lambda_blow": self.lambda_blow,
            "eig1": self.eig1_weighted,
            "I_value": self.I_value,
            "energy_E": self.energy_E,
            "entropy_S": self.entropy_S,
            "max_u": self.max_u,
            "argmax_x": float(x),
            "argmax_y": float(y),
        }

    def to_dict(self) -> dict:
        out = self.record()
        out.update(nonlocal_nonsingular=self.nonlocal_nonsingular, residual=self.residual,
                   iterations=self.iterations, log_Z=self.log_Z)
        if self.center is not None:
            out.update(bubble_center=[float(v) for v in self.center], bubble_mu=self.mu)
        return out


def _nonlocal_eigs(P: _Problem, p, rho, k=1):
    """Smallest ν of ``(A - B + b bᵀ/ρ) ψ = ν B ψ``.

    Rewritten as ``(A + b bᵀ/ρ) ψ = (1+ν) B ψ`` whose left operator is SPD;
    its inverse applies Sherman-Morrison on the cached factorization of A.
    """
    B, b = P.coupling(p, rho)
    A = P.A
    solve = P.d.solve_interior
    Ainv_b = solve(b)
    denom = rho + b @ Ainv_b
    n = len(b)

    def matvec(x):
        x = np.ravel(x)
        return A @ x + b * (b @ x) / rho

    def inv(x):
        x = np.ravel(x)
        y = solve(x)
        return y - Ainv_b * (b @ y) / denom

    Op = spla.LinearOperator((n, n), matvec=matvec, dtype=float)
    OpInv = spla.LinearOperator((n, n), matvec=inv, dtype=float)
    v0 = np.ones(n) / math.sqrt(n)
    try:
        mu = spla.eigsh(Op, k=k, M=B, sigma=0.0, OPinv=OpInv, which="LM", v0=v0, tol=1e-12,
                        return_eigenvectors=False, maxiter=5000)
    except spla.ArpackNoConvergence as exc:
        raise NoConvergence(str(exc)) from exc
    return np.sort(mu) - 1.0


def _make_point(P: _Problem, wI, rho, res, it, eig=True) -> SolutionPoint:
    p, logZ = P.probabilities(wI)
    u = P.nodal_u(wI)
    w = P.full(wI)
    dirichlet = P.dirichlet(wI)
    nu1 = float(_nonlocal_eigs(P, p, rho)[0]) if eig else float("nan")
    with np.errstate(divide="ignore", invalid="ignore"):
        S = -math.fsum(np.where(p > 0, p * np.log(p / P.omega), 0.0))
    top = float(u.max())
    enr = P.enrichment
    if enr is not None:
        top = max(top, float(P.mesh.interpolate(w, enr.c[None])[0]))
    return SolutionPoint(
        rho=float(rho),
        u=u,
        lambda_blow=top - logZ,
        eig1_weighted=nu1,
        nonlocal_nonsingular=bool(abs(nu1) > 1e-8) if eig else True,
        I_value=dirichlet - rho * logZ,
        energy_E=dirichlet / (rho * rho),
        entropy_S=S,
        residual=res,
        iterations=it,
        log_Z=logZ,
        mesh=P.mesh,
        weight=P.weight,
        center=None if enr is None else enr.c.copy(),
        mu=None if enr is None else enr.mu,
        problem=P,
        w=w,
    )


def _newton(P: _Problem, rho, wI, tol, max_iter):
    F, p = P.residual(wI, rho)
    scale = lambda p: max(rho * np.linalg.norm(P.Phi_I.T @ p), 1e-300)
    rel = np.linalg.norm(F) / scale(p)
    E = P.energy(wI, rho)
    it = 0
    while rel > tol:
        if it >= max_iter:
            raise NoConvergence(f"Newton stalled at relative residual {rel:.2e}", best=P.nodal_u(wI), residual=rel)
        it += 1
        d = P.jacobian_solve(p, rho, -F)
        if not np.all(np.isfinite(d)):
            raise NoConvergence("non-finite Newton step", best=P.nodal_u(wI), residual=rel)
        slope = F @ d
        if slope >= 0:  # not a descent direction for I: fall back to the A-gradient
            d = -P.d.solve_interior(F)
            slope = F @ d
        t = 1.0
        for _ in range(40):
            try:
                wn = wI + t * d
                Fn, pn = P.residual(wn, rho)
                En = P.energy(wn, rho)
            except Overflow:
                t *= 0.5
                continue
            reln = np.linalg.norm(Fn) / scale(pn)
            if En <= E + 1e-4 * t * slope or reln < 0.9 * rel:
                break
            t *= 0.5
        else:
            raise NoConvergence("line search failed", best=P.nodal_u(wI), residual=rel)
        wI, F, p, E, rel = wn, Fn, pn, En, reln
    return wI, float(rel), it


def _local_gradient(mesh: Mesh, w, c, radius):
    """Gradient at `c` of a least-squares quadratic through nearby nodal values."""
    d = mesh.nodes - c
    r2 = np.einsum("ij,ij->i", d, d)
    sel = np.flatnonzero(r2 <= radius * radius)
    if len(sel) < 12:
        sel = np.argsort(r2)[:12]
    x, y = d[sel, 0], d[sel, 1]
    s = max(np.sqrt(r2[sel].max()), 1e-300)
    X = np.column_stack([np.ones_like(x), x / s, y / s, (x / s) ** 2, x * y / s**2, (y / s) ** 2])
    coef, *_ = np.linalg.lstsq(X, w[sel], rcond=None)
    return coef[1:3] / s


def newton_solve(mesh: Mesh, weight: Optional[WeightSpec], rho: float, init=None, tol: float = 1e-10,
                 max_iter: int = 60, eig: bool = True, center=None, mu: Optional[float] = None,
                 track_center: bool = False, max_outer: int = 8, accept: float = 1e-3) -> SolutionPoint:
    """Damped Newton for the discrete equation at fixed `rho`.

    The Jacobian carries the exact rank-one term from differentiating the
    normalization. Steps are damped by backtracking on the residual and on
    ``I_ρ``. Raises NoConvergence with ``best`` set to the last iterate.

    With `center` the solution is written as an explicit bubble plus a P1
    remainder. The bubble scale `mu` (estimated from `init` when omitted) is
    updated by a short fixed point so its height matches ``ρ h e^u / ∫h e^u``
    at the center; with `track_center` the center also follows the peak of
    ``u``. Any bubble gives a consistent discretization, so the fixed point
    only tunes accuracy. If the fixed point has not settled to 1e-6 after
    `max_outer` rounds, the result is still returned when the last relative
    change of μ is below `accept`.
    """
    if not (0 < rho <= EIGHT_PI * (1 + 1e-14)):
        raise ValueError("rho must lie in (0, 8π]")
    weight = weight or WeightSpec()
    u0 = np.zeros(mesh.n_nodes) if init is None else np.asarray(init, dtype=float)
    if center is None:
        P = _problem(mesh, weight)
        wI, rel, it = _newton(P, rho, u0[P.I].copy(), tol, max_iter)
        return _make_point(P, wI, rho, rel, it, eig=eig)

    c = np.asarray(center, dtype=float).copy()
    if mu is None:
        plain = _problem(mesh, weight)
        logZ = plain.log_Z(u0[plain.I])
        uc = float(mesh.interpolate(u0, c[None])[0])
        mu = math.sqrt(rho * math.exp(float(weight.log_h(c[None])[0]) + uc - logZ) / 8)
    mu = max(float(mu), 1e-3)
    total = 0
    hist = []  # (log mu, log mu_new - log mu) for the secant update
    for _ in range(max_outer):
        P = _Problem(mesh, weight, Enrichment(mesh, c, mu))
        wI, rel, it = _newton(P, rho, (u0 - P.beta_nodes)[P.I], tol, max_iter)
        total += it
        u0 = P.nodal_u(wI)
        w = P.full(wI)
        logZ = P.log_Z(wI)
        lam = float(mesh.interpolate(w, c[None])[0]) - logZ
        mu_new = math.sqrt(rho * math.exp(float(weight.log_h(c[None])[0]) + lam) / 8)
        shift = np.zeros(2)
        if track_center and lam > 2.5:
            g = _local_gradient(mesh, w, c, 2.0 / mu)
            shift = g / (4 * mu * mu)
            n = np.linalg.norm(shift)
            if n > 0.5 / mu:
                shift *= 0.5 / (mu * n)
        change = max(abs(mu_new / mu - 1), mu * float(np.linalg.norm(shift)))
        log.debug("  outer: mu=%.8g -> %.8g newton=%d", mu, mu_new, it)
        if change < 1e-6:
            break
        x, gx = math.log(mu), math.log(mu_new / mu)
        hist.append((x, gx))
        if len(hist) >= 2 and hist[-1][1] != hist[-2][1]:
            (x0, g0), (x1, g1) = hist[-2], hist[-1]
            step = -g1 * (x1 - x0) / (g1 - g0)
            step = max(min(step, 4 * abs(g1)), -4 * abs(g1))
            mu = math.exp(x1 + step)
        else:
            mu = mu_new
        c = c + shift
    else:
        if change > accept:
            raise NoConvergence("bubble parameters did not settle", best=u0, residual=rel)
    return _make_point(P, wI, rho, rel, total, eig=eig)


def _problem_of(point: SolutionPoint) -> _Problem:
    if point.problem is not None:
        return point.problem
    if point.center is None:
        return _problem(point.mesh, point.weight)
    return _Problem(point.mesh, point.weight or WeightSpec(), Enrichment(point.mesh, point.center, point.mu))


def linearized_spectrum(point: SolutionPoint, k: int = 2):
    """First `k` eigenvalues of ``-Δψ - Vψ = λVψ``, ``V = ρ h e^u/∫h e^u``.

    Returns ``(eigenvalues, nonsingular)`` where `nonsingular` reports
    invertibility of the full nonlocal linearization.
    """
    P = _problem_of(point)
    wI = (point.u - P.beta_nodes)[P.I]
    p, _ = P.probabilities(wI)
    B, _ = P.coupling(p, point.rho)
    lam = [l for l, _ in eig_smallest(P.A, B, k)]
    nu = _nonlocal_eigs(P, p, point.rho, k=min(k, 2) or 1)
    return np.array(lam), bool(np.all(np.abs(nu) > 1e-8))


# ---------------------------------------------------------------------------
# continuation


@dataclass
class Branch:
    points: list
    termination: str
    lambda_cap: float

    def __len__(self):
        return len(self.points)

    @property
    def rho(self) -> np.ndarray:
        return np.array([p.rho for p in self.points])

    @property
    def lambda_blow(self) -> np.ndarray:
        return np.array([p.lambda_blow for p in self.points])

    def records(self) -> list:
        return [p.record() for p in self.points]


def continue_branch(mesh: Mesh, weight: Optional[WeightSpec] = None, rho_grid_hint: Sequence[float] = (),
                    lambda_cap: float = 12.0, rho_start: Optional[float] = None, step: float = 1.0,
                    min_step: float = 1e-9, max_points: int = 500, rho_stop: Optional[float] = None,
                    center=None, track_center: bool = False, attempt_8pi: bool = True) -> Branch:
    """Follow the minimizer branch from small ρ toward 8π.

    Tangent predictor plus Newton corrector; steps halve on failure, grow 1.3×
    after fast convergence, and never exceed 0.4·(8π - ρ). Each time the gap
    ``(8π-ρ)/8π`` crosses a decade, a solve at exactly 8π is attempted from the
    tangent prediction. Hints are forced onto the branch. With `rho_stop` the
    run ends at that value (termination ``step_underflow``). A `center` turns
    on the bubble-enriched discretization around that point.
    """
    if lambda_cap <= 0:
        raise ValueError("lambda_cap must be positive")
    weight = weight or WeightSpec()
    hints = sorted(float(r) for r in rho_grid_hint if 0 < r <= EIGHT_PI)
    rho0 = rho_start or min([0.1] + hints)
    end = EIGHT_PI if rho_stop is None else min(rho_stop, EIGHT_PI)
    points = []

    def solve(rho, init, prev, max_iter, accept=1e-3):
        if center is None:
            return newton_solve(mesh, weight, rho, init, max_iter=max_iter)
        if prev is None:
            return newton_solve(mesh, weight, rho, init, max_iter=max_iter, center=center, track_center=track_center)
        # log μ is close to linear in log(8π - ρ); extrapolate from the last two points
        g_new = math.log(max(EIGHT_PI - rho, 1e-300))
        g_prev = math.log(EIGHT_PI - prev.rho)
        if len(points) >= 2 and points[-2].mu is not None and points[-2].rho < prev.rho:
            g_old = math.log(EIGHT_PI - points[-2].rho)
            slope = (math.log(prev.mu) - math.log(points[-2].mu)) / (g_prev - g_old)
        else:
            slope = -0.5
        slope = min(max(slope, -1.0), 0.0)
        mu = prev.mu * math.exp(min(max(slope * (g_new - g_prev), -1.5), 1.5))
        return newton_solve(mesh, weight, rho, init, max_iter=max_iter, center=prev.center, mu=mu,
                            track_center=track_center, accept=accept)

    try:
        pt = solve(rho0, None, None, 60)
    except NoConvergence:
        return Branch(points, STEP_UNDERFLOW, lambda_cap)
    points.append(pt)
    if pt.lambda_blow > lambda_cap:
        return Branch(points, BLOWUP_DETECTED, lambda_cap)
    next_decade = math.floor(math.log10((EIGHT_PI - pt.rho) / EIGHT_PI))
    ds = step

    def tangent(pt):
        P = _problem_of(pt)
        wI = pt.w[P.I]
        p, _ = P.probabilities(wI)
        b = pt.rho * (P.Phi_I.T @ p)
        t = np.zeros(mesh.n_nodes)
        t[P.I] = P.jacobian_solve(p, pt.rho, b / pt.rho)
        return t

    tan = tangent(pt)
    while len(points) < max_points:
        rho = pt.rho
        if rho_stop is not None and rho >= end * (1 - 1e-14):
            return Branch(points, STEP_UNDERFLOW, lambda_cap)
        gap = EIGHT_PI - rho
        # attempt 8π when the gap crosses a decade, once every hint is on the branch
        pending = hints and hints[-1] > rho * (1 + 1e-12) and hints[-1] < EIGHT_PI
        if attempt_8pi and rho_stop is None and not pending and math.log10(gap / EIGHT_PI) < next_decade:
            next_decade = math.floor(math.log10(gap / EIGHT_PI))
            try:
                # a fixed bubble always yields a discrete solution, so μ must be self-consistent
                top = solve(EIGHT_PI, pt.u + gap * tan, pt, 30, accept=1e-6)
                if top.lambda_blow <= lambda_cap and top.rho > rho:
                    points.append(top)
                    return Branch(points, CONVERGED_AT_8PI, lambda_cap)
            except (NoConvergence, Overflow):
                pass
        ds = min(ds, 0.4 * gap)
        target = rho + ds
        upcoming = [r for r in hints if rho * (1 + 1e-12) < r <= target]
        if upcoming:
            target = upcoming[0]
        if rho_stop is not None:
            target = min(target, end)
        if ds < min_step * EIGHT_PI:
            return Branch(points, STEP_UNDERFLOW, lambda_cap)
        try:
            new = solve(target, pt.u + (target - rho) * tan, pt, 25)
        except (NoConvergence, Overflow):
            ds *= 0.5
            continue
        if new.lambda_blow < pt.lambda_blow - 1e-9 and new.iterations > 8:
            ds *= 0.5  # jumped off the minimizer branch
            continue
        pt.problem = None  # quadrature data is rebuilt on demand
        points.append(new)
        pt = new
        log.debug("rho=%.12g lambda=%.5f eig1=%.3e its=%d", pt.rho, pt.lambda_blow, pt.eig1_weighted, pt.iterations)
        if pt.lambda_blow > lambda_cap:
            return Branch(points, BLOWUP_DETECTED, lambda_cap)
        tan = tangent(pt)
        if new.iterations <= 4:
            ds *= 1.3
    return Branch(points, STEP_UNDERFLOW, lambda_cap)


def fit_blowup_rate(branch: Branch, lambda_min: float = 5.0, min_points: int = 6):
    """Least-squares line ``log(8π-ρ) ≈ slope·λ + intercept`` over the blow-up tail."""
    tail = [p for p in branch.points if p.lambda_blow > lambda_min and p.rho < EIGHT_PI]
    if branch.termination != BLOWUP_DETECTED or len(tail) < min_points:
        raise InsufficientTail(f"need {min_points} tail points with lambda > {lambda_min}, have {len(tail)}")
    lam = np.array([p.lambda_blow for p in tail])
    y = np.log(EIGHT_PI - np.array([p.rho for p in tail]))
    slope, intercept = np.polyfit(lam, y, 1)
    return float(slope), float(intercept)


def blowup_mesh(spec, target_h: float, q, lambda_cap: float = 12.0, cells: float = 6.0) -> Mesh:
    """Mesh graded toward `q` so a bubble with ``λ = lambda_cap`` is resolved.

    The bubble radius is about ``exp(-λ/2)/√π``; `cells` elements span it.
    """
    scale = math.exp(-lambda_cap / 2) / math.sqrt(math.pi)
    ref = Refinement(tuple(map(float, q)), scale / cells, core=4 * scale, grade=0.2)
    return triangulate(spec, target_h, refine=[ref])


# ---------------------------------------------------------------------------
# test-function energy


@dataclass
class TestFunctionEnergy:
    samples: list
    C0: float
    c2: float
    D_estimate: float
    C0_check: float
    scale: float

    def to_dict(self) -> dict:
        return {"C0": self.C0, "c2": self.c2, "D_estimate": self.D_estimate, "C0_check": self.C0_check,
                "scale": self.scale, "samples": [[e, i] for e, i in self.samples]}


TestFunctionEnergy.__test__ = False  # not a pytest class


def test_function_energy(spec, mesh: Mesh, robin: RobinData, weight: Optional[WeightSpec] = None,
                         epsilon_list=None, scale: Optional[float] = None) -> TestFunctionEnergy:
    """``I_{8π}(v_ε)`` for the bubble-plus-Green test functions centered at ``robin.q``.

    Coordinates are scaled by `scale` (default 0.9 of the distance from q to
    the boundary) so the unit ball of the construction fits. The Dirichlet
    energy splits, by Green's identities, into the explicit bubble part and
    ``-32π² ∫|∇G̃|²``; the mass integral uses polar quadrature inside the
    scaled ball and ray quadrature outside.
    """
    weight = weight or WeightSpec()
    q = np.asarray(robin.q, dtype=float)
    dq = float(spec.boundary_distance(q[None])[0])
    s = 0.9 * dq if scale is None else float(scale)
    if not (0 < s < dq):
        raise BallDoesNotFit(f"ball of radius {s} about q does not fit in the domain (distance {dq})")
    eps = np.linspace(0.02, 0.1, 9) if epsilon_list is None else np.asarray(epsilon_list, dtype=float)
    L = LogRatio(mesh, weight, q, robin, min(0.95 * dq, 1.2 * s))
    gamma = L.gamma
    logh_q = float(weight.log_h(q[None])[0])
    # h e^{8πG~} = h(q) e^{8πγ} r̂
    base = logh_q + 8 * math.pi * gamma

    d = discretize(mesh)
    Gd = robin.field
    grad_G2 = float(Gd @ (d.A @ Gd))

    thetas = 2 * math.pi * (np.arange(4096) + 0.5) / 4096
    starts, ends = spec.ray_intervals(q, thetas)
    a = np.maximum(starts, s)
    ok = np.isfinite(ends) & (ends > a)
    outer_dir = 8 * float(np.where(ok, np.log(np.where(ok, ends, 1.0) / np.where(ok, a, 1.0)), 0.0).sum()) * (2 * math.pi / 4096)
    outer_mass = math.exp(base) * ray_quadrature(spec, q, s, lambda P: np.exp(L(P)), power=4.0)

    samples = []
    for e in eps:
        e2 = e * e
        inner_dir = 8 * math.pi * (math.log((1 + e2) / e2) - 1 / (1 + e2))

        def f(P, e2=e2):
            y2 = np.einsum("ij,ij->i", P - q, P - q) / s**2
            return np.exp(L(P)) * ((1 + e2) / (e2 + y2)) ** 2

        panels = s * np.concatenate([[0.0], np.geomspace(1e-3 * e, 1.0, 24)])
        inner_mass = math.exp(base) * s**-4 * polar_ball(f, q, s, n_theta=64, n_r=16, panels=panels)
        I = inner_dir + outer_dir - 32 * math.pi**2 * grad_G2 - EIGHT_PI * math.log(inner_mass + outer_mass)
        samples.append((float(e), float(I)))
    E2 = np.array([e for e, _ in samples]) ** 2
    Iv = np.array([i for _, i in samples])
    c2, C0 = np.polyfit(E2, Iv, 1)
    D_est = -c2 / (8 * s * s)
    C0_check = C0 + EIGHT_PI + EIGHT_PI * math.log(math.pi) + EIGHT_PI * (logh_q + 4 * math.pi * gamma)
    return TestFunctionEnergy(samples, float(C0), float(c2), float(D_est), float(C0_check), s)
