import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curvkit.convex_body import ConvexBody, gauge, moment_norm, polar_gauge

BODIES = [
    ConvexBody.euclidean(2),
    ConvexBody.square(),
    ConvexBody.pnorm(2, 1.0),
    ConvexBody.pnorm(2, 3.0),
    ConvexBody(2, "halfspaces", normals=[[1.0, 0.0], [0.5, 1.0], [-0.3, 0.8]]),
    ConvexBody.euclidean(3),
]

vec2 = st.lists(st.floats(-10, 10, allow_nan=False), min_size=2, max_size=2).map(np.array)


def test_gauge_examples():
    np.testing.assert_allclose(gauge(ConvexBody.euclidean(2), [3.0, 4.0]), 5.0)
    sq = ConvexBody(2, "halfspaces", normals=[[1, 0], [0, 1]])
    np.testing.assert_allclose(gauge(sq, [1.0, 1.0]), 1.0)
    np.testing.assert_allclose(gauge(ConvexBody.pnorm(2, 1.0), [1.0, 1.0]), 2.0)
    assert gauge(ConvexBody.square(), [0.0, 0.0]) == 0.0


def test_polar_gauge_examples():
    np.testing.assert_allclose(polar_gauge(ConvexBody.euclidean(2), [3.0, 4.0]), 5.0)
    np.testing.assert_allclose(polar_gauge(ConvexBody.square(), [1.0, 1.0]), 2.0)
    np.testing.assert_allclose(polar_gauge(ConvexBody.pnorm(2, 3.0), [1.0, 2.0]),
                               (1 + 2**1.5) ** (1 / 1.5), rtol=1e-12)


def test_asymmetric_and_degenerate_bodies_rejected():
    with pytest.raises(ValueError):
        ConvexBody(2, "custom", gauge_fn=lambda x: np.linalg.norm(x, axis=-1) + 0.5 * x[..., 0])
    with pytest.raises(ValueError):
        ConvexBody(2, "halfspaces", normals=[[1.0, 0.0]])


@pytest.mark.parametrize("body", BODIES[:5], ids=lambda b: b.name)
@settings(max_examples=40, deadline=None)
@given(x=vec2, y=vec2, lam=st.floats(-5, 5))
def test_gauge_is_a_norm(body, x, y, lam):
    gx, gy = gauge(body, x), gauge(body, y)
    np.testing.assert_allclose(gauge(body, lam * x), abs(lam) * gx, rtol=1e-12, atol=1e-12)
    assert gauge(body, x + y) <= gx + gy + 1e-9
    r = np.linalg.norm(x)
    assert r / body.r_out - 1e-9 <= gx <= r / body.r_in + 1e-9
    # polar inequality y . x <= polar(y) gauge(x)
    assert y @ x <= polar_gauge(body, y) * gx + 1e-9


def test_polar_gauge_by_ascent_matches_closed_form():
    # the slab family {|x1|<=1, |x2|<=1} is the square; its polar gauge falls back to ascent
    slabs = ConvexBody(2, "halfspaces", normals=[[1, 0], [0, 1]])
    custom = ConvexBody(2, "custom", gauge_fn=lambda x: np.abs(x).max(axis=-1))
    y = np.random.default_rng(3).normal(size=(50, 2))
    np.testing.assert_allclose(polar_gauge(slabs, y), np.abs(y).sum(axis=1), rtol=1e-9)
    np.testing.assert_allclose(polar_gauge(custom, y), np.abs(y).sum(axis=1), rtol=1e-6)


def test_moment_norm_examples():
    v, err = moment_norm(ConvexBody.euclidean(2), [1.0, 0.0], samples=10**6)
    np.testing.assert_allclose(v, 2.0, rtol=5e-3)
    assert err < 5e-3
    v, _ = moment_norm(ConvexBody.square(), [1.0, 0.0], samples=10**6)
    np.testing.assert_allclose(v, 3.0, rtol=5e-3)
    v, _ = moment_norm(ConvexBody.square(), [0.0, 0.0], samples=10**4)
    assert v == 0.0


def test_moment_norm_homogeneous_and_subadditive():
    body = ConvexBody.pnorm(2, 3.0)
    y = np.array([[0.3, -1.1], [1.7, 0.4]])
    v, e = moment_norm(body, y, samples=1 << 16)
    v2, _ = moment_norm(body, -2.5 * y, samples=1 << 16)
    np.testing.assert_allclose(v2, 2.5 * v, atol=3 * 2.5 * e.max())
    vs, es = moment_norm(body, y.sum(axis=0), samples=1 << 16)
    assert vs <= v.sum() + 3 * (es + e.sum())


def test_moment_norm_deterministic():
    a = moment_norm(ConvexBody.square(), [0.2, 0.9], samples=1 << 14, seed=5)
    b = moment_norm(ConvexBody.square(), [0.2, 0.9], samples=1 << 14, seed=5)
    assert a[0] == b[0] and a[1] == b[1]


def test_moment_norm_ball_three_dimensions():
    # int_B |x_3| dx = 2 int_0^1 pi (1 - z^2) z dz = pi / 2, times (d + 1)/2 = 2
    v, _ = moment_norm(ConvexBody.euclidean(3), [0.0, 0.0, 1.0], samples=1 << 18)
    np.testing.assert_allclose(v, math.pi, rtol=1e-2)
