import io
import math
import time

import numpy as np
import pytest

from hodoflow.closed_forms import SolutionFamily
from hodoflow.errors import ConfigError, InsufficientDomain, MultiValued
from hodoflow.geometry import SurfaceChart
from hodoflow.hodograph import solve_batch
from hodoflow.oracle import (FieldGrid, euler_residual, evolve_characteristics, sample_field,
                             uniform_axis)

S2 = SurfaceChart.sphere2()
CYL = SurfaceChart.cylinder()


def const(u, v):
    return lambda t, x: np.broadcast_to(np.array([u, v], float), np.shape(x)).copy()


def test_constant_meridian_flow_has_zero_residual():
    pts = np.array([[0.5, 0.1], [1.2, 3.0], [2.0, 5.0]])
    rep = euler_residual(S2, const(1.0, 0.0), 0.0, 1e-4, stationary=True, points=pts)
    assert rep.max == 0.0


def test_constant_zonal_flow_residual():
    rep = euler_residual(S2, const(0.0, 1.0), 0.0, 1e-4, stationary=True,
                         points=[[math.pi / 4, 0.3]])
    np.testing.assert_allclose(rep.residual[0], [-0.5, 0.0], atol=1e-15)


def test_cylinder_constants_solve():
    rep = euler_residual(CYL, const(0.3, -1.2), 0.4, 1e-4, points=[[0.0, 1.0], [2.0, 3.0]])
    assert rep.max == 0.0


def test_time_derivative_included():
    # u = z / (1 + t) solves the 1-D free Euler equation
    def burgers(t, x):
        return np.stack([x[..., 0] / (1 + t), np.zeros(x.shape[:-1])], axis=-1)

    pts = np.array([[0.5, 0.0], [1.5, 2.0]])
    # remaining error is the O(h^2) truncation of the time difference
    assert euler_residual(CYL, burgers, 0.3, 1e-4, points=pts).max < 1e-7
    # declaring it stationary drops u_t and leaves u u_z
    rep = euler_residual(CYL, burgers, 0.3, 1e-4, stationary=True, points=pts)
    assert rep.max == pytest.approx(1.5 / 1.3**2, rel=1e-8)


@pytest.mark.parametrize("fid", ["s2_stat_linear", "s2_stat_power", "cone_linear",
                                 "s3_stat_linear"])
def test_residual_is_second_order(fid):
    fam = SolutionFamily(fid)
    pts = fam.sample_points(50, np.random.default_rng(0))
    errs = [euler_residual(fam.chart, fam, fam.default_time, h, stationary=fam.stationary,
                           points=pts).max for h in (1e-3, 1e-4, 1e-5)]
    orders = [math.log10(errs[k] / errs[k + 1]) for k in range(2)]
    assert orders[0] >= 1.9
    # the last halving only counts while above the rounding floor eps/h
    if errs[2] > 1e3 * np.finfo(float).eps / 1e-5:
        assert orders[1] >= 1.9


def test_invalid_nodes_excluded():
    fam = SolutionFamily("cone_stationary", {"a1": 5, "a2": 1, "alpha": 0.25})
    pts = np.array([[0.5, 0.0], [1.5, 0.0], [1.0, 1.0]])
    rep = euler_residual(fam.chart, fam, 0.0, 1e-4, stationary=True, points=pts)
    assert rep.used.tolist() == [False, True, True]
    assert rep.reasons["invalid_node"] == 1
    assert np.isnan(rep.residual[0]).all()


def test_insufficient_domain():
    fam = SolutionFamily("cone_stationary", {"a1": 5, "a2": 1, "alpha": 0.25})
    with pytest.raises(InsufficientDomain):
        euler_residual(fam.chart, fam, 0.0, 1e-4, stationary=True, points=[[0.5, 0.0]])


def test_argument_validation():
    with pytest.raises(ConfigError):
        euler_residual(S2, const(1, 0), 0.0, 0.0, points=[[1.0, 1.0]])
    with pytest.raises(ConfigError):
        euler_residual(S2, const(1, 0), 0.0, 1e-4)


def test_report_json():
    rep = euler_residual(S2, const(0.0, 1.0), 0.0, 1e-4, stationary=True,
                         points=[[math.pi / 4, 0.3], [1.0, 1.0]])
    import json
    d = json.loads(rep.to_json())
    assert set(d) == {"max", "mean", "n_nodes", "n_excluded", "fd_step"}
    assert d["n_nodes"] == 2 and d["fd_step"] == 1e-4


def test_solved_and_closed_form_fields_agree():
    fam = SolutionFamily("s2_stat_quadratic")
    sys = fam.system()

    def solved(t, x):
        U, _ = fam(t, x)
        W, info = solve_batch(sys, t, x.reshape(-1, 2), (U * 1.01).reshape(-1, 2))
        return W.reshape(x.shape), info.converged.reshape(x.shape[:-1])

    pts = fam.sample_points(300, np.random.default_rng(3))
    a = euler_residual(S2, solved, 0.0, 1e-4, stationary=True, points=pts)
    b = euler_residual(S2, fam, 0.0, 1e-4, stationary=True, points=pts)
    assert a.n_nodes == b.n_nodes == 300
    assert a.max < 1e-5 and b.max < 1e-5


def test_grid_residual_is_second_order_in_spacing():
    fam = SolutionFamily("s2_stat_linear")
    maxes = []
    for k in (2, 4):
        axes = [uniform_axis(0.3, 1.0, 70 * k + 1),
                uniform_axis(0.0, 2 * math.pi, 200 * k, periodic=True)]
        grid = sample_field(S2, fam, 0.0, axes, stationary=True)
        rep = euler_residual(S2, grid)
        # the periodic axis wraps, so only the theta edges lose their stencil
        assert rep.n_excluded == 2 * 200 * k
        maxes.append(rep.max)
    assert math.log2(maxes[0] / maxes[1]) > 1.9
    with pytest.raises(ConfigError):
        euler_residual(S2, FieldGrid(S2, 0.0, grid.axes, grid.values, grid.mask))


def test_field_grid_validation():
    with pytest.raises(ConfigError):
        FieldGrid(S2, 0.0, [[0.1, 0.2, 0.4], [0, 1]], np.zeros((3, 2, 2)), np.ones((3, 2)))
    with pytest.raises(ConfigError):
        FieldGrid(S2, 0.0, [[0.1, 0.2], [0, 1]], np.full((2, 2, 2), np.nan), np.ones((2, 2)))


def test_field_grid_round_trips():
    fam = SolutionFamily("cone_stationary")
    axes = [uniform_axis(0.3, 2.0, 6), uniform_axis(0.0, 2 * math.pi, 5, periodic=True)]
    grid = sample_field(fam.chart, fam, 0.3, axes, provenance=fam.to_config())
    assert not grid.mask.all()
    buf = io.StringIO()
    grid.to_csv(buf)
    assert buf.getvalue().splitlines()[0] == "r,phi,u,v,valid"
    back = FieldGrid.from_csv(io.StringIO(buf.getvalue()), fam.chart, 0.3)
    assert np.array_equal(back.mask, grid.mask)
    assert np.array_equal(back.values, grid.values, equal_nan=True)
    buf = io.StringIO()
    grid.to_json(buf)
    back = FieldGrid.from_json(io.StringIO(buf.getvalue()))
    assert back.provenance == grid.provenance and back.t == 0.3
    assert np.array_equal(back.values, grid.values, equal_nan=True)


def test_evolve_stationary_is_identity():
    fam = SolutionFamily("s2_stat_linear")
    seed_axes = [uniform_axis(0.2, 1.15, 96), uniform_axis(0.0, 2 * math.pi, 629, True)]
    initial = sample_field(S2, fam, 0.0, seed_axes, stationary=True)
    target = [uniform_axis(0.4, 1.0, 13), uniform_axis(0.0, 2 * math.pi, 16, True)]
    out = evolve_characteristics(S2, initial, 0.5, target_axes=target)
    exact, ok = fam(0.5, out.coords)
    assert out.mask.sum() > 0.6 * out.mask.size
    assert np.abs(out.values[out.mask] - exact[out.mask]).max() < 5e-4


def test_evolve_cylinder_breaks_after_unit_time():
    axes = [uniform_axis(0.0, 2 * math.pi, 315), uniform_axis(0.0, 0.5, 6)]
    z = np.meshgrid(*axes, indexing="ij")[0]
    values = np.stack([np.sin(z), np.zeros_like(z)], axis=-1)
    initial = FieldGrid(CYL, 0.0, axes, values, np.ones(z.shape, bool))
    target = [uniform_axis(0.0, 2 * math.pi, 64), axes[1]]
    before = evolve_characteristics(CYL, initial, 0.9, target_axes=target)
    assert before.mask.any()
    with pytest.raises(MultiValued) as info:
        evolve_characteristics(CYL, initial, 1.1, target_axes=target)
    assert info.value.region.any()
    relaxed = evolve_characteristics(CYL, initial, 1.1, strict=False, target_axes=target)
    assert not relaxed.mask[info.value.region].any()


def test_evolve_rejects_foreign_grid():
    grid = FieldGrid(CYL, 0.0, [[0, 1], [0, 1]], np.zeros((2, 2, 2)), np.ones((2, 2)))
    with pytest.raises(ConfigError):
        evolve_characteristics(S2, grid, 1.0)


def test_evolve_is_worker_independent():
    fam = SolutionFamily("cone_stationary")
    axes = [uniform_axis(0.8, 2.2, 40), uniform_axis(0.0, 2 * math.pi, 64, True)]
    initial = sample_field(fam.chart, fam, 0.0, axes, stationary=True)
    target = [uniform_axis(1.2, 1.8, 7), uniform_axis(0.0, 2 * math.pi, 12, True)]
    a = evolve_characteristics(fam.chart, initial, 0.2, workers=1, target_axes=target)
    b = evolve_characteristics(fam.chart, initial, 0.2, workers=4, target_axes=target)
    assert a.mask.all()
    assert np.array_equal(a.values, b.values, equal_nan=True)
