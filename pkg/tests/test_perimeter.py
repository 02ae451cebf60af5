import math

import numpy as np
import pytest

from curvkit.convex_body import ConvexBody
from curvkit.errors import DeformationError, DomainError
from curvkit.geometry import Ball, Complement, Ellipsoid, HalfSpace, LevelSet, LevelSetField, MappedSet
from curvkit.kernels import anisotropic_fractional_kernel, fractional_kernel, make_family
from curvkit.perimeter import (Dilation, NormalBump, Rotation, ZeroField, anisotropic_fractional_perimeter,
                               anisotropic_perimeter, first_variation_check, moment_perimeter, nonlocal_perimeter,
                               unit_ball_overlap_loss)
from oracles import disc_fractional_perimeter, disk_overlap_area

# int_E int_{E^c} |x - y|^(-2 - alpha) for the unit disc, from the double-integral oracle
DISC_PERIMETER = {0.1: 208.7054627555887, 0.5: 62.130638777779794, 0.8: 85.12938142513285,
                  0.99: 1274.2544690099107}


def identity_map(E):
    return MappedSet(E, lambda p: np.asarray(p) * 1.0, lambda p: np.broadcast_to(np.eye(2), np.shape(p) + (2,)), 0.0)


def test_oracle_reproduces_frozen_value():
    np.testing.assert_allclose(disc_fractional_perimeter(0.5), DISC_PERIMETER[0.5], rtol=1e-10)


def test_overlap_loss_matches_disc_geometry():
    t = np.linspace(0, 2.5, 11)
    np.testing.assert_allclose(unit_ball_overlap_loss(t, 2), 2 * (math.pi - disk_overlap_area(t)), atol=1e-12)
    # two unit balls at distance t share a lens of volume pi (4 + t)(2 - t)^2 / 12
    tc = np.minimum(t, 2.0)
    lens = math.pi * (4 + tc) * (2 - tc) ** 2 / 12
    np.testing.assert_allclose(unit_ball_overlap_loss(t, 3), 2 * (4 * math.pi / 3 - lens), atol=1e-12)


@pytest.mark.parametrize("alpha", sorted(DISC_PERIMETER))
def test_disc_fractional_perimeter(alpha):
    est = nonlocal_perimeter(fractional_kernel(alpha, 2), Ball([0, 0], 1.0))
    np.testing.assert_allclose(est.value, DISC_PERIMETER[alpha], rtol=1e-9)
    assert est.error < 1e-8 * est.value


def test_routes_agree_on_the_disc():
    k = fractional_kernel(0.5, 2)
    poly = nonlocal_perimeter(k, identity_map(Ball([0, 0], 1.0)))
    np.testing.assert_allclose(poly.value, DISC_PERIMETER[0.5], rtol=2e-3)
    field = LevelSetField.from_function(lambda p: np.linalg.norm(p, axis=-1) - 1, [-1.5, -1.5], [1.5, 1.5], 1 / 64)
    grid = nonlocal_perimeter(k, LevelSet(field))
    np.testing.assert_allclose(grid.value, DISC_PERIMETER[0.5], rtol=2e-2)


def test_complement_and_translation():
    k = fractional_kernel(0.4, 2)
    E = Ellipsoid([0, 0], [2, 1])
    a = nonlocal_perimeter(k, E).value
    assert nonlocal_perimeter(k, Complement(E)).value == a
    np.testing.assert_allclose(nonlocal_perimeter(k, Ellipsoid([3.1, -0.4], [2, 1])).value, a, rtol=1e-12)
    with pytest.raises(DomainError):
        nonlocal_perimeter(k, HalfSpace([0, 1]))


def test_scaling_law():
    for alpha, body in ((0.5, ConvexBody.euclidean(2)), (0.3, ConvexBody.square())):
        small = anisotropic_fractional_perimeter(alpha, body, Ellipsoid([0, 0], [1.0, 0.6])).value
        big = anisotropic_fractional_perimeter(alpha, body, Ellipsoid([0, 0], [2.0, 1.2])).value
        np.testing.assert_allclose(big / small, 2 ** (2 - alpha), rtol=1e-2)
    k3 = fractional_kernel(0.5, 3)
    r = nonlocal_perimeter(k3, Ball([0, 0, 0], 2.0)).value / nonlocal_perimeter(k3, Ball([0, 0, 0], 1.0)).value
    np.testing.assert_allclose(r, 2**2.5, rtol=1e-2)


def test_rescaled_perimeter_stabilises():
    fam = make_family("rescaled", 2)
    vals = [nonlocal_perimeter(fam.kernel(e), Ball([0, 0], 1.0)).value / e for e in (0.1, 0.05, 0.025)]
    assert abs(vals[2] - vals[1]) < abs(vals[1] - vals[0])


def test_anisotropic_perimeter_examples():
    D = Ball([0, 0], 1.0)
    np.testing.assert_allclose(anisotropic_perimeter(D, ConvexBody.euclidean(2)).value, 2 * math.pi, rtol=1e-10)
    np.testing.assert_allclose(anisotropic_perimeter(D, ConvexBody.square()).value, 8.0, rtol=1e-10)
    E = Ellipsoid([0, 0], [1.0, 0.5])
    for body in (ConvexBody.square(), ConvexBody.pnorm(2, 3.0)):
        np.testing.assert_allclose(anisotropic_perimeter(Ellipsoid([0, 0], [3.0, 1.5]), body).value,
                                   3 * anisotropic_perimeter(E, body).value, rtol=1e-8)


def test_anisotropic_perimeter_on_level_set():
    field = LevelSetField.from_function(lambda p: np.linalg.norm(p, axis=-1) - 1, [-1.5, -1.5], [1.5, 1.5], 1 / 64)
    est = anisotropic_perimeter(LevelSet(field), ConvexBody.square())
    np.testing.assert_allclose(est.value, 8.0, rtol=1e-2)


def test_moment_perimeter_examples():
    D = Ball([0, 0], 1.0)
    est = moment_perimeter(D, ConvexBody.euclidean(2), samples=10**6)
    np.testing.assert_allclose(est.value, 4 * math.pi, rtol=1e-2)
    sq = moment_perimeter(D, ConvexBody.square(), samples=1 << 16)
    sq2 = moment_perimeter(Ball([0, 0], 2.0), ConvexBody.square(), samples=1 << 16)
    np.testing.assert_allclose(sq2.value, 2 * sq.value, rtol=1e-12)


def test_first_variation_dilation_and_zero():
    k = fractional_kernel(0.5, 2)
    D = Ball([0, 0], 1.0)
    rep = first_variation_check(k, D, Dilation([0, 0]))
    assert rep["gap"] <= 3e-2
    # d/dr of r^(2 - alpha) P at r = 1
    np.testing.assert_allclose(rep["lhs"], 1.5 * DISC_PERIMETER[0.5], rtol=1e-3)
    zero = first_variation_check(k, D, ZeroField())
    assert zero["lhs"] == 0.0 and zero["rhs"] == 0.0


def test_first_variation_tangential():
    k = fractional_kernel(0.5, 2)
    rep = first_variation_check(k, Ball([0, 0], 1.0), Rotation([0, 0]))
    assert rep["rhs"] == 0.0
    assert abs(rep["lhs"]) < 1e-3 * DISC_PERIMETER[0.5]


def test_first_variation_ellipse():
    k = fractional_kernel(0.5, 2)
    rep = first_variation_check(k, Ellipsoid([0, 0], [1.5, 1.0]), Dilation([0, 0]), boundary_nodes=48)
    assert rep["gap"] <= 3e-2


def test_first_variation_localised_bump():
    rep = first_variation_check(fractional_kernel(0.5, 2), Ball([0, 0], 1.0), NormalBump([0, 0], 0.0, 0.6, 1.0))
    assert rep["rhs"] > 0
    assert rep["gap"] <= 3e-2


def test_step_too_large_rejected():
    bump = NormalBump([0, 0], 0.0, width=0.6, inner=0.2)
    with pytest.raises(DeformationError):
        bump.check_step(10.0)
    with pytest.raises(DeformationError):
        first_variation_check(fractional_kernel(0.5, 2), Ball([0, 0], 1.0), bump, eps0=1.0)
