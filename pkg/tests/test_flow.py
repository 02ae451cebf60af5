import io
import math

import numpy as np
import pytest

from curvkit.convex_body import ConvexBody
from curvkit.curvature import ball_speed
from curvkit.errors import ConfigError, DomainError
from curvkit.flow import (FlowConfig, circle_field, ellipse_field, ode_reference, run, run_coupled, step)
from curvkit.geometry import LevelSetField
from curvkit.kernels import anisotropic_fractional_kernel, fractional_kernel, make_family

RESCALED = make_family("rescaled", 2)


def test_config_rejections():
    k = fractional_kernel(0.5, 2)
    with pytest.raises(ConfigError):
        FlowConfig(k, 0.1, dt=-1.0)
    with pytest.raises(ConfigError):
        FlowConfig(k, 0.1, band_cells=2)
    with pytest.raises(ConfigError):
        FlowConfig(k, 0.0)
    with pytest.raises(ConfigError):
        FlowConfig.for_family(make_family("fractional", 2), 0.5, 0.1)
    with pytest.raises(ConfigError):
        run(circle_field(0.5, 0.25), FlowConfig(k, 0.1))


def test_half_plane_is_stationary():
    h = 1 / 32
    x = np.arange(-1.5, 1.5 + h / 2, h)
    X, Y = np.meshgrid(x, x, indexing="ij")
    f = LevelSetField(0.6 * X + 0.8 * Y - 0.013, np.array([-1.5, -1.5]), h)
    g, dt = step(f, FlowConfig.for_family(RESCALED, 0.2, 0.01))
    assert dt > 0
    # away from the window edge, where the data are not compactly supported
    inner = (np.abs(X) < 1.1) & (np.abs(Y) < 1.1)
    assert np.max(np.abs(g.values - f.values)[inner]) <= 1e-10


def test_ode_reference_classical_regime():
    cfg = FlowConfig.for_family(RESCALED, 0.05, 0.3)
    t, r, ext = ode_reference(cfg.kernel, 1.0, 0.3, cfg.speed_scale)
    assert ext is None
    np.testing.assert_allclose(r, np.sqrt(1 - 2 * t), rtol=1e-3)


def test_ode_reference_uses_ball_speed():
    k = fractional_kernel(0.5, 2)
    t, r, _ = ode_reference(k, 1.0, 0.05)
    drdt = np.gradient(r, t)
    for i in (50, 200, 350):
        up, lo = ball_speed(k, r[i])
        assert lo <= up
        np.testing.assert_allclose(-drdt[i], up, rtol=1e-3)


def test_ode_reference_extinction():
    cfg = FlowConfig.for_family(RESCALED, 0.05, 1.0)
    t, r, ext = ode_reference(cfg.kernel, 0.5, 1.0, cfg.speed_scale)
    np.testing.assert_allclose(ext, 0.125, rtol=1e-2)
    assert t[-1] == ext
    with pytest.raises(ConfigError):
        ode_reference(anisotropic_fractional_kernel(0.5, ConvexBody.square()), 1.0, 0.1)


def test_classical_extinction_time():
    tr = run(circle_field(0.5, 1 / 64), FlowConfig.for_family(RESCALED, 0.05, 0.2, record_every=10))
    assert tr.extinction_time is not None
    np.testing.assert_allclose(tr.extinction_time, 0.125, rtol=0.1)
    assert tr.area[-1] == 0.0


def test_fractional_circle_shrinks_round_and_translates():
    h = 1 / 32
    k = fractional_kernel(0.5, 2)
    a = run(circle_field(0.5, h), FlowConfig(k, 0.03))
    b = run(circle_field(0.5, h, center=[0.25, -0.125]), FlowConfig(k, 0.03))
    assert np.all(np.diff(a.t) > 0)
    assert np.all(np.diff(a.radius_est) < 0)
    assert np.nanmax(a.roundness) <= 2 * h
    # the shift is a whole number of cells, so the runs coincide
    np.testing.assert_allclose(b.radius_est, a.radius_est, rtol=0, atol=1e-8)


def test_circle_inside_ellipse_stays_inside():
    h = 1 / 64
    inner, outer = run_coupled([circle_field(0.5, h, center=[0.3, 0.0]), ellipse_field([1.2, 0.8], h)],
                               FlowConfig.for_family(RESCALED, 0.1, 0.05, snapshot_every=1))
    assert len(inner.snapshots) == len(outer.snapshots) > 10
    for (ta, a), (tb, b) in zip(inner.snapshots, outer.snapshots):
        assert ta == tb
        assert not np.any((a.values <= 0) & (b.values > 0))


def test_coupled_fields_need_one_grid():
    cfg = FlowConfig.for_family(RESCALED, 0.2, 0.01)
    with pytest.raises(ConfigError):
        run_coupled([circle_field(0.5, 1 / 16), circle_field(0.5, 1 / 32)], cfg)


def test_family_traces_form_a_cauchy_sequence():
    # the kernel width shrinks with the grid so every member is resolved alike
    end = 0.05
    grid = np.linspace(0, end, 41)
    traces = []
    for eps, h in ((0.2, 1 / 32), (0.1, 1 / 64), (0.05, 1 / 128)):
        tr = run(circle_field(0.8, h, extent=1.0), FlowConfig.for_family(RESCALED, eps, end, record_every=2))
        traces.append(np.interp(grid, tr.t, tr.radius_est))
    gaps = [np.max(np.abs(traces[i + 1] - traces[i])) for i in range(2)]
    assert gaps[1] < gaps[0]
    np.testing.assert_allclose(traces[-1][-1], math.sqrt(0.64 - 2 * end), rtol=5e-3)


def test_trace_csv_and_snapshots(tmp_path):
    h = 1 / 16
    tr = run(circle_field(0.6, h), FlowConfig(fractional_kernel(0.5, 2), 0.01, snapshot_every=2))
    buf = io.StringIO()
    tr.write_csv(buf, {"seed": 0})
    lines = buf.getvalue().splitlines()
    assert lines[0] == "# seed=0"
    assert lines[1] == "t,area,radius_est,max_curv,dt"
    assert len(lines) == 2 + len(tr.t)
    t = np.array([float(line.split(",")[0]) for line in lines[2:]])
    assert np.all(np.diff(t) > 0)
    assert tr.snapshots
    path = tmp_path / "snap.ls"
    tr.snapshots[0][1].save(path)
    back = LevelSetField.load(path)
    np.testing.assert_array_equal(back.values, tr.snapshots[0][1].values)


def test_window_too_small_for_far_field():
    h = 1 / 32
    x = np.arange(-1.0, 1.0 + h / 2, h)
    X, Y = np.meshgrid(x, x, indexing="ij")
    f = LevelSetField(Y, np.array([-1.0, -1.0]), h)
    with pytest.raises(DomainError):
        step(f, FlowConfig(fractional_kernel(0.5, 2), 0.01))
