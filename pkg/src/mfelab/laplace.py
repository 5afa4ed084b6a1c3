"""P1 finite elements for the Dirichlet Laplacian.

Covers Dirichlet solves, the regular part of the Green's function and the
Robin function, weighted generalized eigenproblems, and local harmonic
polynomial fits used to evaluate smooth harmonic fields near a point.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NoConvergence, SingularSystem, SourceTooCloseToBoundary
from .geometry import INTERIOR, Mesh


def stiffness_matrix(mesh: Mesh) -> sp.csr_matrix:
    p = mesh.nodes[mesh.triangles]
    area = mesh.areas
    # gradients of barycentric functions: rotate opposite edges
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    g = np.stack([-e[..., 1], e[..., 0]], axis=-1) / (2 * area[:, None, None])
    K = np.einsum("tid,tjd->tij", g, g) * area[:, None, None]
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    A = sp.csr_matrix((K.ravel(), (rows, cols)), shape=(mesh.n_nodes,) * 2)
    A.sum_duplicates()
    return A


def mass_matrix(mesh: Mesh) -> sp.csr_matrix:
    area = mesh.areas
    local = (np.ones((3, 3)) + np.eye(3)) / 12.0
    M = area[:, None, None] * local[None]
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    out = sp.csr_matrix((M.ravel(), (rows, cols)), shape=(mesh.n_nodes,) * 2)
    out.sum_duplicates()
    return out


def gradients(mesh: Mesh, values) -> np.ndarray:
    """Piecewise-constant gradient of a P1 field, one 2-vector per triangle."""
    p = mesh.nodes[mesh.triangles]
    e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
    g = np.stack([-e[..., 1], e[..., 0]], axis=-1) / (2 * mesh.areas[:, None, None])
    return np.einsum("tid,ti->td", g, np.asarray(values)[mesh.triangles])


class Discretization:
    """Stiffness matrix and interior factorization, cached per mesh."""

    def __init__(self, mesh: Mesh):
        self.mesh = mesh
        self.A = stiffness_matrix(mesh)
        self.I = mesh.interior
        self.B = mesh.boundary
        A = self.A.tocsc()
        self.A_II = A[self.I][:, self.I].tocsc()
        self.A_IB = A[self.I][:, self.B].tocsc()
        try:
            self._lu = spla.splu(self.A_II)
        except RuntimeError as exc:  # exactly singular
            raise SingularSystem(str(exc)) from exc
        self._M = None

    @property
    def M(self):
        if self._M is None:
            self._M = mass_matrix(self.mesh)
        return self._M

    def solve_interior(self, rhs):
        return self._lu.solve(np.asarray(rhs, dtype=float))


def discretize(mesh: Mesh) -> Discretization:
    if "laplace" not in mesh._cache:
        mesh._cache["laplace"] = Discretization(mesh)
    return mesh._cache["laplace"]


def solve_dirichlet(mesh: Mesh, rhs=None, boundary_values=None, tol: float = 1e-10) -> np.ndarray:
    """Solve ``-Δu = rhs`` with ``u = boundary_values`` on the boundary nodes.

    `rhs` is a nodal field (or scalar); `boundary_values` has one entry per
    boundary node in ``mesh.boundary`` order, or is a callable of position.
    """
    d = discretize(mesh)
    u = np.zeros(mesh.n_nodes)
    if boundary_values is not None:
        g = boundary_values(mesh.nodes[d.B]) if callable(boundary_values) else np.asarray(boundary_values, float)
        u[d.B] = g
    b = -(d.A_IB @ u[d.B])
    if rhs is not None:
        f = np.broadcast_to(np.asarray(rhs, dtype=float), (mesh.n_nodes,))
        b = b + (d.M @ f)[d.I]
    u[d.I] = d.solve_interior(b)
    res = np.linalg.norm(d.A_II @ u[d.I] - b)
    if res > tol * max(np.linalg.norm(b), 1e-300) and res > 1e-14:
        raise SingularSystem(f"Dirichlet solve residual {res:.3e} above tolerance")
    return u


@dataclass
class RobinData:
    """Regular part of the Green's function with pole at `q`."""

    q: np.ndarray
    field: np.ndarray  # nodal values of x -> G~(x, q)
    gamma_q: float
    mesh: Mesh

    def regular_part(self, pts):
        return self.mesh.interpolate(self.field, pts)


def _check_source(mesh, q):
    q = np.asarray(q, dtype=float)
    if mesh.domain is not None:
        inside = mesh.domain.contains(q[None])[0]
        dist = mesh.domain.boundary_distance(q[None])[0]
    else:
        inside = True
        dist = np.min(np.linalg.norm(mesh.nodes[mesh.boundary] - q, axis=1))
    if not inside or dist <= 2 * mesh.target_h:
        raise SourceTooCloseToBoundary(f"source {q.tolist()} within 2*target_h of the boundary")
    return q


def green_regular(mesh: Mesh, q) -> RobinData:
    """Harmonic ``G~(., q)`` with boundary data ``log|x-q| / 2π``; γ(q) by interpolation."""
    q = _check_source(mesh, q)
    u = solve_dirichlet(mesh, None, lambda x: np.log(np.linalg.norm(x - q, axis=1)) / (2 * math.pi))
    gamma = float(mesh.interpolate(u, q[None])[0])
    return RobinData(q, u, gamma, mesh)


def robin_values(mesh: Mesh, points, chunk: int = 256) -> np.ndarray:
    """Robin function at many interior points (batched multi-RHS solves)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if len(pts) == 0:
        return np.zeros(0)
    for p in pts:
        _check_source(mesh, p)
    d = discretize(mesh)
    xb = mesh.nodes[d.B]
    idx, bary = mesh.locate(pts)
    out = np.empty(len(pts))
    for s in range(0, len(pts), chunk):
        P = pts[s : s + chunk]
        G = np.log(np.linalg.norm(xb[:, None, :] - P[None, :, :], axis=2)) / (2 * math.pi)
        U = np.zeros((mesh.n_nodes, len(P)))
        U[d.B] = G
        U[d.I] = d.solve_interior(-(d.A_IB @ G))
        tri = mesh.triangles[idx[s : s + chunk]]
        cols = np.arange(len(P))
        out[s : s + chunk] = sum(bary[s : s + chunk, k] * U[tri[:, k], cols] for k in range(3))
    return out


def robin_field(mesh: Mesh, sample_points) -> list:
    pts = list(sample_points)
    if not pts:
        return []
    vals = robin_values(mesh, np.asarray(pts, dtype=float))
    return [(tuple(map(float, p)), float(g)) for p, g in zip(pts, vals)]


def weighted_mass(mesh: Mesh, V, interior_only: bool = True) -> sp.csr_matrix:
    """Lumped mass matrix of the nodal weight `V` (diagonal)."""
    w = mesh.lumped_mass * np.asarray(V, dtype=float)
    if interior_only:
        w = w[mesh.interior]
    return sp.diags(w).tocsr()


def interior_stiffness(mesh: Mesh) -> sp.csc_matrix:
    return discretize(mesh).A_II


def eig_smallest(A, B, k: int, tol: float = 1e-8):
    """k smallest eigenpairs of ``(A - B) ψ = λ B ψ``.

    Solved as ``A ψ = (1 + λ) B ψ`` with shift-invert at zero; eigenvectors
    are B-orthonormal.  Returns a list of ``(λ, ψ)`` in increasing order.
    """
    if k <= 0:
        return []
    A = sp.csc_matrix(A)
    B = sp.csc_matrix(B)
    n = A.shape[0]
    if k >= n - 1:
        import scipy.linalg as la

        mu, vec = la.eigh(A.toarray(), B.toarray())
        pairs = [(mu[i] - 1.0, vec[:, i]) for i in range(min(k, n))]
        return pairs
    v0 = np.ones(n) / math.sqrt(n)
    try:
        mu, vec = spla.eigsh(A, k=k, M=B, sigma=0.0, which="LM", v0=v0, tol=1e-13, maxiter=5000)
    except spla.ArpackNoConvergence as exc:
        raise NoConvergence(str(exc)) from exc
    order = np.argsort(mu)
    mu, vec = mu[order], vec[:, order]
    out = []
    for i in range(k):
        x = vec[:, i]
        x = x / math.sqrt(x @ (B @ x))
        if x[np.argmax(np.abs(x))] < 0:
            x = -x
        r = A @ x - mu[i] * (B @ x)
        if np.linalg.norm(r) > tol * max(np.linalg.norm(A @ x), 1.0):
            raise NoConvergence(f"eigenpair {i} residual {np.linalg.norm(r):.2e}")
        out.append((float(mu[i] - 1.0), x))
    return out


class HarmonicFit:
    """Least-squares harmonic polynomial ``Re Σ c_k ((x-center)/R)^k`` near a point."""

    def __init__(self, center, radius, coef):
        self.center = np.asarray(center, dtype=float)
        self.radius = float(radius)
        self.coef = np.asarray(coef, dtype=complex)

    def _z(self, pts):
        d = (np.asarray(pts, dtype=float) - self.center) / self.radius
        return d[..., 0] + 1j * d[..., 1]

    def __call__(self, pts):
        return np.real(np.polynomial.polynomial.polyval(self._z(pts), self.coef))

    def gradient(self, pts=None):
        pts = self.center if pts is None else pts
        dc = np.polynomial.polynomial.polyder(self.coef)
        w = np.polynomial.polynomial.polyval(self._z(pts), dc) / self.radius
        return np.stack([np.real(w), -np.imag(w)], axis=-1)

    def hessian(self, pts=None):
        pts = self.center if pts is None else pts
        dc = np.polynomial.polynomial.polyder(self.coef, 2)
        w = np.polynomial.polynomial.polyval(self._z(pts), dc) / self.radius**2
        a, b = np.real(w), -np.imag(w)
        return np.stack([np.stack([a, b], -1), np.stack([b, -a], -1)], -2)


def harmonic_fit(mesh: Mesh, values, center, radius: float, degree: int = 8) -> HarmonicFit:
    """Fit a harmonic polynomial of `degree` to nodal values inside ``B(center, radius)``."""
    c = np.asarray(center, dtype=float)
    d = mesh.nodes - c
    sel = np.flatnonzero(np.einsum("ij,ij->i", d, d) <= radius**2)
    if len(sel) < 4 * degree + 2:
        raise ValueError("too few nodes for the requested harmonic fit")
    z = (d[sel, 0] + 1j * d[sel, 1]) / radius
    cols = [np.ones(len(sel))]
    for k in range(1, degree + 1):
        zk = z**k
        cols += [zk.real, zk.imag]
    X = np.column_stack(cols)
    beta, *_ = np.linalg.lstsq(X, np.asarray(values, float)[sel], rcond=None)
    coef = np.zeros(degree + 1, dtype=complex)
    coef[0] = beta[0]
    coef[1:] = beta[1::2] - 1j * beta[2::2]
    return HarmonicFit(c, radius, coef)
