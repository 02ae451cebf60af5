import math

import numpy as np
import pytest

from curvkit.quadrature import (adaptive_integral, endpoint_integral, power_map, richardson_limit,
                                sphere_integral)


def test_adaptive_integral_smooth():
    res = adaptive_integral(np.cos, np.linspace(0, math.pi / 2, 3))
    np.testing.assert_allclose(res.value, 1.0, rtol=1e-12)
    assert res.error < 1e-9


def test_endpoint_integral_removes_power_singularity():
    s = 0.7
    mapping = power_map(1.0, 1.0 / (1.0 - s))

    def fv(v):
        u, du = mapping(v)
        with np.errstate(divide="ignore"):
            return u**-s * du

    res = endpoint_integral(fv, 1.0 / (1.0 - s), rtol=1e-11)
    np.testing.assert_allclose(res.value, 1.0 / (1.0 - s), rtol=1e-9)


def test_sphere_integral_areas():
    np.testing.assert_allclose(sphere_integral(lambda u: np.ones(u.shape[:-1]), 2).value, 2 * math.pi, rtol=1e-12)
    np.testing.assert_allclose(sphere_integral(lambda u: np.ones(u.shape[:-1]), 3).value, 4 * math.pi, rtol=1e-12)
    # second moment of a coordinate over S^2 is 4 pi / 3
    np.testing.assert_allclose(sphere_integral(lambda u: u[..., 2] ** 2, 3).value, 4 * math.pi / 3, rtol=1e-10)


def test_sphere_integral_rejects_high_dimension():
    with pytest.raises(ValueError):
        sphere_integral(lambda u: u[..., 0], 4)


def test_richardson_recovers_known_order():
    x = np.array([0.4, 0.2, 0.1])
    v = 3.0 + 2.0 * x**1.5
    limit, order, err = richardson_limit(x, v)
    np.testing.assert_allclose(limit, 3.0, atol=1e-10)
    np.testing.assert_allclose(order, 1.5, rtol=1e-8)
    assert err >= abs(limit - 3.0)


def test_richardson_error_covers_model_mismatch():
    x = np.array([0.1, 0.05, 0.01])
    v = 1.0 + x + 5 * x**2
    limit, _, err = richardson_limit(x, v)
    assert abs(limit - 1.0) <= err


def test_richardson_fixed_order_two_points():
    limit, order, err = richardson_limit([0.2, 0.1], [1.2, 1.1], order=1.0)
    np.testing.assert_allclose(limit, 1.0)
    assert order == 1.0
