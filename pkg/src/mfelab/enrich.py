"""Bubble enrichment for concentrating solutions.

Near blow-up the solution looks like ``β(x) = -2 log(1 + μ²|x-c|²)`` plus a
slowly varying remainder. Writing ``u = β + w`` with `w` piecewise linear and
integrating every term involving `β` accurately removes the resolution floor
that a plain P1 discretization hits at the bubble scale ``1/μ``.
"""
from __future__ import annotations

import math

import numpy as np
import scipy.sparse as sp

from .geometry import Mesh, _DUNAVANT5


class QuadratureRule:
    """Points, weights and the P1 evaluation matrix ``Phi`` (points × nodes)."""

    def __init__(self, X, omega, Phi, beta=None, grad_beta_sq=None):
        self.X = X
        self.omega = omega
        self.Phi = Phi.tocsr()
        self.beta = np.zeros(len(X)) if beta is None else beta
        self._gb2 = grad_beta_sq


def lumped_rule(mesh: Mesh) -> QuadratureRule:
    n = mesh.n_nodes
    return QuadratureRule(mesh.nodes, mesh.lumped_mass, sp.identity(n, format="csr"))


def bubble(x, c, mu):
    d = np.asarray(x, dtype=float) - c
    return -2.0 * np.log1p(mu * mu * np.einsum("...i,...i->...", d, d))


def _split(V):
    """Split triangles ``(k,3,2)`` into four children each."""
    a, b, c = V[:, 0], V[:, 1], V[:, 2]
    ab, bc, ca = 0.5 * (a + b), 0.5 * (b + c), 0.5 * (c + a)
    kids = np.stack([
        np.stack([a, ab, ca], 1),
        np.stack([ab, b, bc], 1),
        np.stack([ca, bc, c], 1),
        np.stack([ab, bc, ca], 1),
    ], 1)
    return kids.reshape(-1, 3, 2)


def bubble_rule(mesh: Mesh, c, mu: float, tau: float = 0.12, max_depth: int = 30) -> QuadratureRule:
    """Composite degree-5 rule refined toward `c` until every sub-triangle has
    diameter below ``tau·(dist(c) + 1/μ)``."""
    c = np.asarray(c, dtype=float)
    ell = 1.0 / max(mu, 1e-300)
    V = mesh.nodes[mesh.triangles]
    parent = np.arange(len(V))
    final_V, final_p = [], []
    for _ in range(max_depth):
        cen = V.mean(axis=1)
        diam = np.max(np.linalg.norm(V - np.roll(V, 1, axis=1), axis=2), axis=1)
        dist = np.maximum(np.linalg.norm(cen - c, axis=1) - diam, 0.0)
        refine = diam > tau * (dist + ell)
        final_V.append(V[~refine])
        final_p.append(parent[~refine])
        if not np.any(refine):
            break
        V = _split(V[refine])
        parent = np.repeat(parent[refine], 4)
    else:
        final_V.append(V)
        final_p.append(parent)
    V = np.concatenate(final_V)
    parent = np.concatenate(final_p)
    bary, wref = _DUNAVANT5
    X = np.einsum("qk,tkd->tqd", bary, V)
    e1, e2 = V[:, 1] - V[:, 0], V[:, 2] - V[:, 0]
    area = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    omega = (wref[None, :] * area[:, None]).ravel()
    X = X.reshape(-1, 2)
    par = np.repeat(parent, len(wref))
    # barycentric coordinates in the parent mesh triangle
    P = mesh.nodes[mesh.triangles[par]]
    T = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=2)
    lam = np.linalg.solve(T, (X - P[:, 0])[..., None])[..., 0]
    B = np.column_stack([1 - lam.sum(axis=1), lam])
    rows = np.repeat(np.arange(len(X)), 3)
    Phi = sp.csr_matrix((B.ravel(), (rows, mesh.triangles[par].ravel())), shape=(len(X), mesh.n_nodes))
    d = X - c
    r2 = np.einsum("ij,ij->i", d, d)
    m2 = mu * mu
    beta = -2.0 * np.log1p(m2 * r2)
    gb2 = 16 * m2 * m2 * r2 / (1 + m2 * r2) ** 2
    return QuadratureRule(X, omega, Phi, beta, gb2)


def _log_edge_integral(P, E, c, mu):
    """``∫₀¹ log(1 + μ²|P + tE - c|²) dt`` for arrays of edges."""
    d = P - c
    a = np.einsum("ij,ij->i", E, E)
    dn = np.einsum("ij,ij->i", d, E)
    t0 = -dn / a
    dline2 = np.maximum(np.einsum("ij,ij->i", d, d) - dn * dn / a, 0.0)
    out = np.empty(len(P))
    m2 = mu * mu
    short = m2 * a < 1.0
    if np.any(short):  # smooth along the edge: Gauss-Legendre
        xg, wg = np.polynomial.legendre.leggauss(20)
        t = 0.5 * (xg + 1)
        pts = d[short, None, :] + t[None, :, None] * E[short, None, :]
        vals = np.log1p(m2 * np.einsum("ijk,ijk->ij", pts, pts))
        out[short] = 0.5 * vals @ wg
    lg = ~short
    if np.any(lg):
        s2 = (dline2[lg] + 1.0 / m2) / a[lg]
        s = np.sqrt(s2)

        def F(x):
            return x * np.log(x * x + s2) - 2 * x + 2 * s * np.arctan(x / s)

        out[lg] = np.log(m2 * a[lg]) + F(1 - t0[lg]) - F(-t0[lg])
    return out


def bubble_load(mesh: Mesh, c, mu: float) -> np.ndarray:
    """``ℓ_i = ∫ ∇β·∇φ_i`` exactly, via ``∫_T ∇β = ∮_{∂T} β n ds``."""
    c = np.asarray(c, dtype=float)
    Vt = mesh.nodes[mesh.triangles]
    g = np.zeros((len(Vt), 2))
    for k in range(3):
        P, Q = Vt[:, k], Vt[:, (k + 1) % 3]
        E = Q - P
        n = np.column_stack([E[:, 1], -E[:, 0]])  # outward for counterclockwise triangles, length |E|
        g += (-2.0 * _log_edge_integral(P, E, c, mu))[:, None] * n
    e = np.stack([Vt[:, 2] - Vt[:, 1], Vt[:, 0] - Vt[:, 2], Vt[:, 1] - Vt[:, 0]], axis=1)
    grad_phi = np.stack([-e[..., 1], e[..., 0]], axis=-1) / (2 * mesh.areas[:, None, None])
    contrib = np.einsum("tkd,td->tk", grad_phi, g)
    ell = np.zeros(mesh.n_nodes)
    np.add.at(ell, mesh.triangles.ravel(), contrib.ravel())
    return ell


class Enrichment:
    """Explicit bubble with center `c` and concentration `mu` on `mesh`."""

    def __init__(self, mesh: Mesh, c, mu: float, tau: float = 0.12):
        self.c = np.asarray(c, dtype=float)
        self.mu = float(mu)
        self.rule = bubble_rule(mesh, self.c, self.mu, tau)
        self.load = bubble_load(mesh, self.c, self.mu)
        self.beta_nodes = bubble(mesh.nodes, self.c, self.mu)
        self.energy = 0.5 * math.fsum(self.rule.omega * self.rule._gb2)
