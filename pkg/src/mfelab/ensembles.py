"""Canonical and microcanonical thermodynamics along a solution branch.

With inverse temperature ``β = -λ`` and ``ρ = λ`` each branch point gives the
free energy ``f``, ``F = -βf``, the energy ``E = ∫|∇u|²/(2ρ²)`` and the
entropy ``S = -∫ρ̂ log ρ̂``. Duality means ``S = F + βE`` and ``E = -F'(β)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyBranch, TableTooSmall
from .mfe_solver import BLOWUP_DETECTED, CONVERGED_AT_8PI, EIGHT_PI, Branch

FIRST = "first"
SECOND = "second"
UNDETERMINED = "undetermined"
COLUMNS = ("beta", "lambda", "f", "F", "E", "S")


@dataclass
class EnsembleTable:
    beta: np.ndarray
    f: np.ndarray
    E: np.ndarray
    S: np.ndarray
    domain_id: str = ""
    kind: str = UNDETERMINED
    I_values: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self):
        return len(self.beta)

    @property
    def lam(self) -> np.ndarray:
        return -self.beta

    @property
    def F(self) -> np.ndarray:
        return -self.beta * self.f

    def rows(self) -> list:
        return [dict(zip(COLUMNS, map(float, r))) for r in zip(self.beta, self.lam, self.f, self.F, self.E, self.S)]

    def corrupt(self, i: int, column: str = "S", amount: float = 1.0) -> "EnsembleTable":
        """Copy with one entry shifted (fault injection)."""
        data = {k: getattr(self, k).copy() for k in ("beta", "f", "E", "S")}
        data[column][i] += amount
        return EnsembleTable(**data, domain_id=self.domain_id, kind=self.kind, I_values=self.I_values)


def _pick(points, rhos):
    out = []
    for r in rhos:
        best = min(points, key=lambda p: abs(p.rho - r))
        if abs(best.rho - r) > 1e-9 * max(1.0, abs(r)):
            raise EmptyBranch(f"branch has no point at rho = {r}")
        out.append(best)
    return out


def canonical_table(branch: Branch, rhos: Optional[Sequence[float]] = None, domain_id: str = "") -> EnsembleTable:
    """Tabulate ``f, F, E, S`` on the branch (optionally only at `rhos`).

    ``f = -E + log∫e^u / λ`` is the functional value ``J_λ`` in branch
    variables; rows are sorted by β.
    """
    pts = [p for p in branch.points if 0 < p.rho < EIGHT_PI * (1 + 1e-14)]
    if rhos is not None:
        pts = _pick(pts, rhos)
    if not pts:
        raise EmptyBranch("no branch points to tabulate")
    pts = sorted(pts, key=lambda p: -p.rho)
    lam = np.array([p.rho for p in pts])
    E = np.array([p.energy_E for p in pts])
    f = -E + np.array([p.log_Z for p in pts]) / lam
    S = np.array([p.entropy_S for p in pts])
    kind = {BLOWUP_DETECTED: FIRST, CONVERGED_AT_8PI: SECOND}.get(branch.termination, UNDETERMINED)
    return EnsembleTable(-lam, f, E, S, domain_id, kind, np.array([p.I_value for p in pts]))


@dataclass
class LegendreReport:
    legendre_residual: float
    derivative_residual: float
    max_abs_F: float
    max_abs_E: float
    convex: bool
    decreasing: bool
    energy_decreasing: bool
    worst_row: int

    def passed(self, tol_a: float = 1e-3, tol_b: float = 1e-2) -> bool:
        return (self.legendre_residual <= tol_a * self.max_abs_F
                and self.derivative_residual <= tol_b * self.max_abs_E
                and self.convex and self.decreasing)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__} | {"passed": self.passed()}


def legendre_check(table: EnsembleTable) -> LegendreReport:
    n = len(table)
    if n < 8:
        raise TableTooSmall(f"need at least 8 rows, have {n}")
    b, F, E, S = table.beta, table.F, table.E, table.S
    res = np.abs(S - (F + b * E))
    inner = slice(1, n - 1)
    dF = np.gradient(F, b, edge_order=2)
    slopes = np.diff(F) / np.diff(b)
    return LegendreReport(
        legendre_residual=float(res[inner].max()),
        derivative_residual=float(np.abs(E + dF)[inner].max()),
        max_abs_F=float(np.abs(F).max()),
        max_abs_E=float(np.abs(E).max()),
        convex=bool(np.all(np.diff(slopes) > 0)),
        decreasing=bool(np.all(slopes < 0)),
        energy_decreasing=bool(np.all(np.diff(E) / np.diff(b) < 0)),
        worst_row=int(np.argmax(res[inner]) + 1),
    )


@dataclass
class KindReport:
    branch_verdict: str
    d_verdict: str
    gap_verdict: str
    gap: float
    bound: float
    scaled_I: float
    agree: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def kind_verdict(table: Optional[EnsembleTable], branch: Branch, dcrit, gap_tol: float = 1e-3) -> KindReport:
    """Three-way agreement of the continuation outcome, the sign of D and the
    energy gap ``I/8π - (-1 - log π - sup(log h + 4πγ))`` at the last point.

    A strictly negative gap (below ``-gap_tol``) means the infimum at 8π lies
    below the bubble threshold, hence second kind; a gap that is non-negative
    within tolerance means first kind.
    """
    last = branch.points[-1]
    bound = -1.0 - math.log(math.pi) - dcrit.max_value
    scaled = last.I_value / EIGHT_PI
    gap = scaled - bound
    gap_verdict = SECOND if gap < -gap_tol else FIRST
    b = {BLOWUP_DETECTED: FIRST, CONVERGED_AT_8PI: SECOND}.get(branch.termination, UNDETERMINED)
    d = FIRST if dcrit.D_value < 0 else SECOND
    if table is not None and table.kind != UNDETERMINED and table.kind != b:
        b = UNDETERMINED
    return KindReport(b, d, gap_verdict, float(gap), float(bound), float(scaled), b == d == gap_verdict)
