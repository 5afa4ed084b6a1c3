import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfelab.errors import DeltaTooLarge, InvalidWeight, NotCritical
from mfelab.geometry import DomainSpec, Ellipse, Rectangle, annulus, disk, triangulate
from mfelab.laplace import green_regular, robin_values
from mfelab.robin_dcrit import (
    FIRST_KIND, SECOND_KIND, LogRatio, WeightSpec, classify, compute_D, find_max_point, inner_ball_term,
)


@pytest.fixture(scope="module")
def disk_mesh():
    return triangulate(disk(), 0.03)


@pytest.fixture(scope="module")
def rect_spec():
    return DomainSpec(Rectangle(4.0, 0.5))


# -- weights -----------------------------------------------------------------


def test_weight_kinds():
    assert WeightSpec().log_harmonic
    w = WeightSpec.exp_harmonic({(2, 0): 1.0, (0, 2): -1.0, (1, 1): 0.5})
    assert w.log_harmonic
    q = WeightSpec.exp_harmonic_plus_quartic({(1, 0): 0.2}, 0.5)
    assert not q.log_harmonic
    assert q.log_h(np.array([[1.0, 0.0]]))[0] == pytest.approx(0.2 - 0.5)


def test_non_harmonic_weight_rejected():
    with pytest.raises(InvalidWeight):
        WeightSpec.exp_harmonic({(2, 0): 1.0})
    with pytest.raises(InvalidWeight):
        WeightSpec("exp_nonsense")


def test_weight_roundtrip():
    w = WeightSpec.exp_harmonic({(3, 0): 1.0, (1, 2): -3.0})
    assert WeightSpec.from_dict(w.to_dict()) == w


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4), st.floats(-1, 1), st.floats(-1, 1))
def test_harmonic_polynomials_accepted(c, x, y):
    # real parts of z, z², z³ and Im z² are harmonic
    w = WeightSpec.exp_harmonic({(1, 0): c[0], (2, 0): c[1], (0, 2): -c[1], (1, 1): c[2],
                                 (3, 0): c[3], (1, 2): -3 * c[3]})
    pts = np.array([[x, y]])
    eps = 1e-4
    lap = sum(w.log_h(pts + d)[0] for d in ([eps, 0], [-eps, 0], [0, eps], [0, -eps])) - 4 * w.log_h(pts)[0]
    assert abs(lap / eps**2) < 1e-3 * (1 + sum(abs(v) for v in c))


# -- maximizer ---------------------------------------------------------------


def test_disk_max_at_center(disk_mesh):
    mp = find_max_point(disk_mesh)
    assert np.linalg.norm(mp.q) <= 1e-3
    assert np.all(np.linalg.eigvalsh(mp.hessian) < 0)


def test_ellipse_max_at_center():
    mp = find_max_point(triangulate(DomainSpec(Ellipse(2.0, 0.5)), 0.03))
    assert np.linalg.norm(mp.q) <= 1e-3


def test_concentric_annulus_degenerate_circle():
    m = triangulate(annulus(), 0.03)
    mp = find_max_point(m)
    assert mp.degenerate
    r = np.linalg.norm(mp.q)
    th = np.linspace(0, 2 * math.pi, 12, endpoint=False)
    vals = 4 * math.pi * robin_values(m, r * np.column_stack([np.cos(th), np.sin(th)]))
    assert np.ptp(vals) <= 1e-3


# -- D -----------------------------------------------------------------------


def test_disk_D_is_minus_pi(disk_mesh):
    r = green_regular(disk_mesh, (0.0, 0.0))
    D = compute_D(disk(), disk_mesh, None, (0.0, 0.0), r)
    assert D == pytest.approx(-math.pi, rel=2e-2)


def test_D_delta_independence(disk_mesh):
    w = WeightSpec.exp_harmonic({(2, 0): 0.5, (0, 2): -0.5})
    r = green_regular(disk_mesh, (0.0, 0.0))
    a = compute_D(disk(), disk_mesh, w, (0.0, 0.0), r, delta=0.4)
    b = compute_D(disk(), disk_mesh, w, (0.0, 0.0), r, delta=0.2)
    assert a == pytest.approx(b, abs=1e-3)


def test_symmetric_angular_rule_cancels_tracefree_part(disk_mesh):
    """With ``log r̂ ≈ x² - y²`` near q the trace-free quadratic integrates to zero
    only on symmetric angular grids; an asymmetric rule picks up a divergent
    ``log(1/r)`` contribution."""
    w = WeightSpec.exp_harmonic({(2, 0): 1.0, (0, 2): -1.0})
    r = green_regular(disk_mesh, (0.0, 0.0))
    L = LogRatio(disk_mesh, w, (0.0, 0.0), r, 0.8)
    sym = [inner_ball_term(L, (0.0, 0.0), d) for d in (0.2, 0.1)]
    asym_th = 2 * math.pi * np.array([0.0, 0.1, 0.37, 0.52, 0.81])
    asym = [inner_ball_term(L, (0.0, 0.0), d, thetas=asym_th) for d in (0.2, 0.1)]
    # symmetric: the term is O(δ²), so it shrinks as δ halves
    assert abs(sym[1]) < abs(sym[0]) and abs(sym[1]) < 0.05
    assert abs(asym[1] - sym[1]) > 1.0


@pytest.mark.parametrize("R,c", [(0.5, (0.0, 0.0)), (2.0, (1.0, -3.0))])
def test_disk_family_scaling(R, c):
    spec = disk(R, c)
    m = triangulate(spec, 0.03 * R)
    r = green_regular(m, c)
    assert compute_D(spec, m, None, c, r) == pytest.approx(-math.pi / R**2, rel=2e-2)


def test_not_critical(disk_mesh):
    r = green_regular(disk_mesh, (0.3, 0.0))
    with pytest.raises(NotCritical):
        compute_D(disk(), disk_mesh, None, (0.3, 0.0), r)


def test_delta_too_large(disk_mesh):
    r = green_regular(disk_mesh, (0.0, 0.0))
    with pytest.raises(DeltaTooLarge):
        compute_D(disk(), disk_mesh, None, (0.0, 0.0), r, delta=1.2)


# -- classification ----------------------------------------------------------


def test_classify_disk(disk_mesh):
    rep = classify(disk(), disk_mesh)
    assert rep.verdict == FIRST_KIND
    assert rep.D_value == pytest.approx(-math.pi, rel=2e-2)
    assert rep.hessian_negative_definite
    assert rep.grad_norm <= 1e-3
    d = rep.to_dict()
    assert d["verdict"] == FIRST_KIND and set(d) >= {"q_x", "q_y", "gamma_q", "D_value", "delta_used"}


def test_classify_concentric_annulus():
    spec = annulus()
    rep = classify(spec, triangulate(spec, 0.03))
    assert rep.verdict == SECOND_KIND and rep.D_value > 0


def test_classify_offset_annulus():
    spec = annulus((0.3, 0.0), 0.02, 1.0)
    rep = classify(spec, triangulate(spec, 0.03))
    assert rep.verdict == FIRST_KIND and rep.D_value < 0
    assert rep.hessian_negative_definite


def test_classify_rectangle_positive(rect_spec):
    m = triangulate(rect_spec, 0.03)
    assert classify(rect_spec, m).verdict == SECOND_KIND
    # the Robin function is exponentially flat along the long axis, so q is pinned at the centre
    assert compute_D(rect_spec, m, None, (0.0, 0.0), green_regular(m, (0.0, 0.0))) > 0


def test_unique_maximizer_when_first_kind():
    # weight tilts the disk maximizer off-centre; D ≤ 0 there, so no rival maximum should exist
    spec = disk()
    m = triangulate(spec, 0.04)
    w = WeightSpec.exp_harmonic({(1, 0): 0.4})
    rep = classify(spec, m, w)
    assert rep.verdict == FIRST_KIND
    g = np.linspace(-0.85, 0.85, 35)
    X, Y = np.meshgrid(g, g)
    P = np.column_stack([X.ravel(), Y.ravel()])
    P = P[np.linalg.norm(P, axis=1) < 0.85]
    F = w.log_h(P) + 4 * math.pi * robin_values(m, P)
    far = np.linalg.norm(P - rep.q, axis=1) > 0.15
    assert F[far].max() < rep.max_value - 1e-3


def test_offset_annulus_against_conformal_oracle():
    from scipy.optimize import minimize_scalar

    from oracles import robin_eccentric_annulus

    spec = annulus((0.3, 0.0), 0.02, 1.0)
    m = triangulate(spec, 0.02)
    pts = np.array([[0.55, 0.0], [0.0, 0.6], [-0.45, -0.2], [-0.25, 0.3]])
    assert np.abs(robin_values(m, pts) - robin_eccentric_annulus(pts, 0.3, 0.02)).max() <= 1e-3
    best = minimize_scalar(lambda x: -robin_eccentric_annulus([[x, 0.0]], 0.3, 0.02)[0],
                           bounds=(-0.4, -0.1), method="bounded", options={"xatol": 1e-9})
    mp = find_max_point(m)
    assert abs(mp.q[0] - best.x) <= 1e-3 and abs(mp.q[1]) <= 1e-3
