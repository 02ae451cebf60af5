import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from curvkit.convex_body import ConvexBody
from curvkit.errors import AdmissibilityError, DomainError
from curvkit.geometry import kappa
from curvkit.kernels import (BiweightProfile, CustomProfile, IndicatorProfile, PowerProfile, RegularlyVaryingProfile,
                             anisotropic_fractional_constant, anisotropic_fractional_kernel, check_admissible,
                             eval_kernel, fractional_kernel, make_family, normalization_constant, tail_mass,
                             tail_profile_integral)


def closed_form_tail(alpha, R):
    c = 1 / alpha + 1 / (1 - alpha)
    if R > 1:
        return R**-alpha / alpha / c
    return ((1 - R ** (1 - alpha)) / (1 - alpha) + 1 / alpha) / c


def test_eval_kernel_examples():
    k = fractional_kernel(0.5, 2)
    np.testing.assert_allclose(eval_kernel(k, [1.0, 0.0]), 1.0)
    np.testing.assert_allclose(eval_kernel(k, [2.0, 0.0]), 2**-2.5, rtol=1e-14)
    ka = anisotropic_fractional_kernel(0.5, ConvexBody.square())
    np.testing.assert_allclose(eval_kernel(ka, [1.0, 1.0]), 1.0, rtol=1e-14)
    with pytest.raises(DomainError):
        eval_kernel(k, [0.0, 0.0])


@pytest.mark.parametrize("alpha", [0.1, 0.5, 0.9])
@pytest.mark.parametrize("dim", [2, 3])
def test_fractional_normalization_closed_form(alpha, dim):
    c, err = normalization_constant(fractional_kernel(alpha, dim))
    np.testing.assert_allclose(c, kappa(dim - 1) * (1 / alpha + 1 / (1 - alpha)), rtol=1e-10)
    assert err <= 1e-10 * c


def test_normalization_value_eight_pi():
    np.testing.assert_allclose(normalization_constant(fractional_kernel(0.5, 2))[0], 8 * math.pi, rtol=1e-13)


@pytest.mark.parametrize("alpha", [0.1, 0.5, 0.9])
@pytest.mark.parametrize("R", [0.0, 0.1, 0.5, 1.0, 2.0, 10.0])
def test_tail_mass_closed_form(alpha, R):
    np.testing.assert_allclose(tail_mass(fractional_kernel(alpha, 2), R), closed_form_tail(alpha, R), rtol=1e-10)


def test_tail_mass_examples():
    np.testing.assert_allclose(tail_mass(fractional_kernel(0.5, 2), 2.0), 0.25 * 2 * 2**-0.5, rtol=1e-12)
    for k in (fractional_kernel(0.3, 3), make_family("rescaled", 2).kernel(0.2),
              anisotropic_fractional_kernel(0.5, ConvexBody.square())):
        np.testing.assert_allclose(tail_mass(k, 0.0), 1.0, atol=1e-12)
    with pytest.raises(DomainError):
        tail_mass(fractional_kernel(0.5, 2), -1.0)


def test_tail_mass_tightness():
    for R in (0.1, 1.0, 10.0):
        ups = [tail_mass(fractional_kernel(a, 2), R) for a in (0.9, 0.99, 0.999)]
        downs = [tail_mass(fractional_kernel(a, 2), R) for a in (0.1, 0.01, 0.001)]
        assert ups[0] > ups[1] > ups[2] and ups[2] < 0.02
        assert downs[0] < downs[1] < downs[2] and downs[2] > 0.99


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0, 20), min_size=2, max_size=6))
def test_tail_mass_non_increasing(radii):
    k = make_family("regularly_varying", 2).kernel(0.1)
    radii = np.sort(radii)
    vals = [tail_mass(k, r) for r in radii]
    assert np.all(np.diff(vals) <= 1e-14)
    assert 0.0 <= vals[-1] <= vals[0] <= 1.0 + 1e-12


def test_tail_profile_integral_examples():
    np.testing.assert_allclose(tail_profile_integral(PowerProfile(2, 0.5), 1.0), 4 * math.pi, rtol=1e-14)
    np.testing.assert_allclose(tail_profile_integral(PowerProfile(3, 0.9), 2.0), 4 * math.pi / 0.9 * 2**-0.9,
                               rtol=1e-14)
    assert tail_profile_integral(BiweightProfile(2), 1.5) == 0.0
    assert tail_profile_integral(IndicatorProfile(3), 1.0) == 0.0


def test_custom_profile_matches_power_profile():
    custom = CustomProfile(2, lambda r: r**-2.5, singular_order=0.5)
    ref = PowerProfile(2, 0.5)
    for R in (0.3, 1.0, 4.0):
        np.testing.assert_allclose(custom.tail(R), ref.tail(R), rtol=1e-8)
        np.testing.assert_allclose(custom.moment(R), ref.moment(R), rtol=1e-8)


def test_admissibility_rejections():
    with pytest.raises(AdmissibilityError):
        check_admissible(CustomProfile(2, lambda r: r**-3.2, singular_order=1.2))
    with pytest.raises(AdmissibilityError):
        check_admissible(CustomProfile(2, lambda r: np.exp(-((r - 1) ** 2)), singular_order=0.0))
    check_admissible(BiweightProfile(2))
    check_admissible(RegularlyVaryingProfile(2, "log"))


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-5, 5, allow_nan=False), min_size=2, max_size=2).filter(lambda v: np.hypot(*v) > 1e-3))
def test_kernels_even_and_bounded(x):
    x = np.array(x)
    sq = ConvexBody.square()
    for k in (fractional_kernel(0.4, 2), anisotropic_fractional_kernel(0.7, sq), make_family("rescaled", 2).kernel(3.0)):
        assert eval_kernel(k, x) == eval_kernel(k, -x)
    ka = anisotropic_fractional_kernel(0.7, sq)
    r = np.linalg.norm(x)
    # the square contains the unit disc, so its gauge is at most |x| and the weight is at most 2^(2.7/2)
    assert eval_kernel(ka, x) <= 2 ** (2.7 / 2) * r**-2.7 * (1 + 1e-12)


def test_anisotropic_constant_for_disc_matches_isotropic():
    np.testing.assert_allclose(anisotropic_fractional_constant(0.5, ConvexBody.euclidean(2)), 8 * math.pi,
                               rtol=1e-12)
    # square: int_0^{2pi} max(|cos|,|sin|)^(-2.5) dtheta, computed by brute force
    t = (np.arange(400000) + 0.5) * 2 * math.pi / 400000
    cg = np.mean(np.maximum(abs(np.cos(t)), abs(np.sin(t))) ** -2.5) * 2 * math.pi
    np.testing.assert_allclose(anisotropic_fractional_constant(0.5, ConvexBody.square()), cg * 4, rtol=1e-8)


def test_family_scaling():
    fam = make_family("fractional", 2)
    np.testing.assert_allclose(fam.scaling_constant(0.5), 8 * math.pi)
    with pytest.raises(DomainError):
        fam.kernel(1.2)
    resc = make_family("rescaled", 2)
    base = BiweightProfile(2)
    np.testing.assert_allclose(eval_kernel(resc.kernel(0.5), [0.25, 0.0]), 4 * base(0.5), rtol=1e-14)
    # C_eps / eps -> int |x| phi(x) dx = 2 pi int_0^1 r^2 j(r) dr
    first = 2 * math.pi * base.moment(1.0)
    np.testing.assert_allclose(resc.scaling_constant(1e-3) / 1e-3, first, rtol=1e-12)
    with pytest.raises(DomainError):
        resc.kernel(0.0)
    rv = make_family("regularly_varying", 2)
    np.testing.assert_allclose(rv.scaling_constant(1e-3), 1e-3 * math.log(1e3), rtol=1e-12)
    # the normalised family has C_phi -> kappa_{d-1} as eps -> 0
    ratios = [normalization_constant(rv.kernel(e))[0] / (2 * math.pi) for e in (1e-2, 1e-4, 1e-8)]
    assert abs(ratios[2] - 1) < abs(ratios[1] - 1) < abs(ratios[0] - 1)
    assert abs(ratios[2] - 1) < 0.1
    with pytest.raises(ValueError):
        make_family("gaussian", 2)
