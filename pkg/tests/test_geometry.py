"""Chart, stencil, integration, and curvature checks.

Closed forms used as oracles:
  - restrictions of ambient linear functions to the round sphere are first
    eigenfunctions, so Hess u = -u g0 exactly and |grad cos t1|^2 = sin^2 t1;
  - centered differences act on sines multiplicatively: d1 sin = cos *
    sin(h)/h, d2 cos = -cos * (sin(h/2)/(h/2))^2, which fixes the exact
    discretization error of every trig test below;
  - the curvature routine is itself an independent path: it rebuilds the
    Schouten tensor from structure equations applied to the analytic Lame
    factors and never reads the stored Christoffel or schouten0 data.
"""

import math

import numpy as np
import pytest

from sigmaflow import fieldio, symfun
from sigmaflow.errors import ConfigurationError
from sigmaflow.geometry import (
    build_hopf_product,
    build_round_sphere,
    build_synthetic,
    curvature_oracle,
    sphere_volume,
)


def mesh(geom):
    g = geom.grid
    axes = [g.axis_vector(a, g.coordinates(a)) for a in range(g.ndim)]
    return axes


def first_harmonic(geom):
    # x-coordinate of the ambient embedding of S^3: sin t1 sin t2 cos phi
    t1, t2, phi = mesh(geom)
    return np.broadcast_to(np.sin(t1) * np.sin(t2) * np.cos(phi),
                           geom.grid.shape).copy()


def frame_identity(geom, scale):
    n = geom.grid.ndim
    return scale[..., None, None] * np.eye(n)


# ----------------------------------------------------------------- grids


def test_grid_coordinates_and_counts():
    geom = build_round_sphere(3, 16)
    g = geom.grid
    assert g.shape == (16, 16, 16)
    assert g.axis_kind == ("pole_shifted", "pole_shifted", "periodic")
    assert g.total_points == 16 ** 3
    h = math.pi / 16
    assert abs(g.spacing[0] - h) < 1e-15
    assert abs(g.spacing[2] - 2 * h) < 1e-15
    c0 = g.coordinates(0)
    assert abs(c0[0] - h / 2) < 1e-15
    assert abs(c0[-1] - (math.pi - h / 2)) < 1e-15
    ext = g.coordinates(0, extension=1)
    assert abs(ext[0] + h / 2) < 1e-15
    c2 = g.coordinates(2)
    assert c2[0] == 0.0


def test_build_validation_errors():
    with pytest.raises(ConfigurationError):
        build_round_sphere(6, 16)
    with pytest.raises(ConfigurationError):
        build_round_sphere(3, 8)
    with pytest.raises(ConfigurationError):
        build_round_sphere(3, 17)  # odd breaks the half-period azimuth shift
    with pytest.raises(ConfigurationError):
        build_hopf_product(3, circle_radius=-1.0, points_per_axis=8)
    with pytest.raises(ConfigurationError):
        build_synthetic(2, np.zeros(2), 8)
    with pytest.raises(ConfigurationError):
        build_synthetic(3, np.zeros(4), 8)
    with pytest.raises(ConfigurationError):
        build_synthetic(3, np.zeros(3), 8, fd_order=3)


# ------------------------------------------------------------- chart data


def test_round_sphere_metadata():
    for n in (3, 4, 5):
        geom = build_round_sphere(n, 16)
        assert np.array_equal(geom.schouten0, 0.5 * np.eye(n))
        assert geom.scalar_curv0 == n * (n - 1)
        assert geom.variational
        label = symfun.cone_test(np.full(n, 0.5), n)
        assert label.inside
    geom = build_round_sphere(3, 16)
    assert abs(symfun.sigma_k(np.diag(geom.schouten0), 2) - 0.75) < 1e-15


def test_hopf_metadata():
    geom = build_hopf_product(3, circle_radius=1.0, points_per_axis=8)
    eigs = np.linalg.eigvalsh(geom.schouten0)
    assert np.allclose(np.sort(eigs), [-0.5, 0.5, 0.5])
    assert geom.scalar_curv0 == 2.0
    assert symfun.cone_test(eigs, 1).inside
    bad = symfun.cone_test(eigs, 2)
    assert not bad.inside and bad.first_failing_j == 2

    geom5 = build_hopf_product(5, circle_radius=1.0, points_per_axis=8)
    eigs5 = np.linalg.eigvalsh(geom5.schouten0)
    assert abs(symfun.sigma_k(eigs5, 2) - 0.5) < 1e-14
    assert symfun.cone_test(eigs5, 2).inside


def test_synthetic_metadata():
    s0 = np.array([[0.5, 0.1, 0.0], [0.1, 0.3, 0.0], [0.0, 0.0, 0.2]])
    geom = build_synthetic(3, s0, 8)
    assert np.array_equal(geom.schouten0, s0)
    assert abs(geom.scalar_curv0 - 2.0 * 2.0 * 1.0) < 1e-15
    assert not geom.variational
    diag = build_synthetic(4, [0.5, 0.5, 0.5, 0.5], 8)
    assert np.array_equal(diag.schouten0, 0.5 * np.eye(4))


# ------------------------------------------------------------ integration


def test_volume_round_sphere():
    exact = 2.0 * math.pi ** 2
    err32 = abs(build_round_sphere(3, 32).volume() - exact) / exact
    err16 = abs(build_round_sphere(3, 16).volume() - exact) / exact
    assert err32 <= 1e-3
    assert err32 < err16  # quadrature improves under refinement
    assert abs(sphere_volume(3) - exact) < 1e-12


def test_volume_hopf():
    r = 1.3
    geom = build_hopf_product(3, circle_radius=r, points_per_axis=24)
    exact = 2.0 * math.pi * r * sphere_volume(2)
    assert abs(geom.volume() - exact) / exact <= 1e-3

    r = 0.7
    geom5 = build_hopf_product(5, circle_radius=r, points_per_axis=24)
    exact5 = 2.0 * math.pi * r * sphere_volume(4)
    assert abs(geom5.volume() - exact5) / exact5 <= 1e-3


def test_volume_synthetic_exact():
    geom = build_synthetic(3, 0.5 * np.eye(3), 8)
    exact = (2.0 * math.pi) ** 3
    assert abs(geom.volume() - exact) / exact <= 1e-12


def test_integrate_weight_and_odd_function():
    geom = build_round_sphere(3, 16)
    vol = geom.volume()
    c = 0.37
    weighted = geom.integrate(np.ones((1, 1, 1)),
                              weight=math.exp(-3 * c) * np.ones((1, 1, 1)))
    assert abs(weighted - math.exp(-3 * c) * vol) / vol <= 1e-14
    t1 = mesh(geom)[0]
    assert abs(geom.integrate(np.cos(t1))) <= 1e-10  # odd about the equator


# --------------------------------------------------------------- stencils


def test_adjointness_periodic():
    # summation by parts: centered differences are exactly antisymmetric
    # against the uniform weight on periodic axes
    rng = np.random.default_rng(7)
    for order in (2, 4):
        geom = build_synthetic(3, 0.5 * np.eye(3), 16, fd_order=order)
        u = rng.standard_normal(geom.grid.shape)
        v = rng.standard_normal(geom.grid.shape)
        for axis in range(3):
            pairing = geom.integrate(geom.d1(u, axis) * v) \
                + geom.integrate(u * geom.d1(v, axis))
            assert abs(pairing) <= 1e-10


def test_d1_d2_sine_fourth_order():
    errs = []
    for N in (16, 32):
        geom = build_synthetic(3, 0.5 * np.eye(3), N, fd_order=4)
        x1 = mesh(geom)[0]
        u = np.broadcast_to(np.sin(x1), geom.grid.shape)
        e1 = np.max(np.abs(geom.d1(u, 0) - np.cos(x1)))
        e2 = np.max(np.abs(geom.d2(u, 0) + np.sin(x1)))
        errs.append(max(e1, e2))
    assert errs[0] <= 2e-3
    order = math.log2(errs[0] / errs[1])
    assert order >= 3.8


def test_gradient_linear_interior():
    geom = build_synthetic(3, 0.5 * np.eye(3), 16, fd_order=2)
    x1 = mesh(geom)[0]
    u = np.broadcast_to(x1, geom.grid.shape)
    _, norm2 = geom.gradient_and_norm(u)
    # centered differences are exact on a linear away from the wrap seam
    assert np.max(np.abs(norm2[1:-1] - 1.0)) <= 1e-12


def test_gradient_norm_round_sphere():
    errs = []
    for N in (16, 32):
        geom = build_round_sphere(3, N)
        t1 = mesh(geom)[0]
        u = np.broadcast_to(np.cos(t1), geom.grid.shape)
        grad, norm2 = geom.gradient_and_norm(u)
        errs.append(np.max(np.abs(norm2 - np.sin(t1) ** 2)))
        assert np.max(np.abs(grad[..., 1])) <= 1e-15
        assert np.max(np.abs(grad[..., 2])) <= 1e-15
    assert errs[0] <= 0.02
    assert math.log2(errs[0] / errs[1]) >= 1.9


# ---------------------------------------------------------------- hessian


def test_hessian_constant_is_zero():
    geom = build_round_sphere(3, 16)
    u = np.full(geom.grid.shape, 0.7)
    hess = geom.covariant_hessian(u)
    assert np.max(np.abs(hess)) == 0.0
    grad, norm2 = geom.gradient_and_norm(u)
    assert np.max(np.abs(grad)) == 0.0 and np.max(np.abs(norm2)) == 0.0


def test_hessian_symmetry_exact():
    geom = build_round_sphere(3, 16)
    rng = np.random.default_rng(11)
    u = rng.standard_normal(geom.grid.shape)
    hess = geom.covariant_hessian(u)
    assert np.array_equal(hess, np.swapaxes(hess, -1, -2))


def test_hessian_synthetic_sine():
    geom = build_synthetic(3, 0.5 * np.eye(3), 16, fd_order=4)
    x1 = mesh(geom)[0]
    eps = 0.05
    u = np.broadcast_to(eps * np.sin(x1), geom.grid.shape)
    hess = geom.covariant_hessian(u)
    assert np.max(np.abs(hess[..., 0, 0] + eps * np.sin(x1))) <= 2e-3 * eps
    for a in range(3):
        for b in range(3):
            if (a, b) != (0, 0):
                # 4th-order coefficient sums on a constant leave rounding
                # dust (15a is not representable), unlike the 2nd-order path
                assert np.max(np.abs(hess[..., a, b])) <= 1e-15


def test_hessian_zonal_harmonic_round_sphere():
    # cos t1 is the restriction of an ambient linear function: Hess = -u g0
    errs = []
    for N in (16, 32):
        geom = build_round_sphere(3, N)
        t1 = mesh(geom)[0]
        u = np.broadcast_to(np.cos(t1), geom.grid.shape)
        hess = geom.covariant_hessian(u)
        err = hess + frame_identity(geom, u)
        errs.append(np.max(np.abs(err)))
    assert errs[0] <= 0.01
    assert math.log2(errs[0] / errs[1]) >= 1.9


def test_hessian_full_harmonic_round_sphere():
    # sin t1 sin t2 cos phi exercises mixed partials, the pole-flip ghost
    # parity, and every Christoffel coefficient at once. Frame components
    # divide by sin t1 sin t2, so the pointwise error carries that envelope;
    # convergence is measured on the damped error (max norm) and in L2.
    damped_errs = []
    l2_errs = []
    for N in (16, 32):
        geom = build_round_sphere(3, N)
        u = first_harmonic(geom)
        err = geom.covariant_hessian(u) + frame_identity(geom, u)
        t1, t2, _ = mesh(geom)
        w = np.broadcast_to(np.sin(t1) * np.sin(t2), geom.grid.shape)
        damped_errs.append(np.max(np.abs(err) * w[..., None, None]))
        l2_errs.append(math.sqrt(geom.integrate(np.sum(err * err, axis=(-2, -1)))))
    assert damped_errs[0] <= 0.05
    assert math.log2(damped_errs[0] / damped_errs[1]) >= 1.9
    assert math.log2(l2_errs[0] / l2_errs[1]) >= 1.7


def test_pole_ghost_matches_smooth_continuation():
    # the ghost row across theta_1 = 0 must equal the analytic value of a
    # globally smooth function at the reflected coordinate
    geom = build_round_sphere(3, 16)
    u = first_harmonic(geom)
    padded = geom.pad(u, 0, 1)
    h = geom.grid.spacing[0]
    _, t2, phi = mesh(geom)
    ghost_exact = np.sin(-h / 2) * np.sin(t2) * np.cos(phi)
    assert np.max(np.abs(padded[0] - ghost_exact)) <= 1e-13
    ghost_top = np.sin(math.pi + h / 2) * np.sin(t2) * np.cos(phi)
    assert np.max(np.abs(padded[-1] - ghost_top)) <= 1e-13


def test_zonal_fields_stay_bitwise_zonal():
    # fields constant along theta_2 and phi must stay exactly constant
    # along them through every operator; the flow relies on this to keep
    # zonal data on the zonal invariant manifold
    geom = build_round_sphere(3, 16)
    t1 = mesh(geom)[0]
    u = np.broadcast_to(0.1 * np.cos(t1), geom.grid.shape).copy()
    hess = geom.covariant_hessian(u)
    grad, norm2 = geom.gradient_and_norm(u)
    for field in (hess, grad, norm2):
        ref = field[:, :1, :1]
        assert np.array_equal(field, np.broadcast_to(ref, field.shape))


def test_christoffel_round_sphere():
    geom = build_round_sphere(3, 16)
    t1, t2, _ = mesh(geom)
    cot1 = np.cos(t1) / np.sin(t1)
    cot2 = np.cos(t2) / np.sin(t2)
    assert np.allclose(geom.christoffel(1, 0, 1), cot1)
    assert np.allclose(geom.christoffel(2, 0, 2), cot1)
    assert np.allclose(geom.christoffel(2, 1, 2), cot2)
    assert np.allclose(geom.christoffel(0, 1, 1), -np.sin(t1) * np.cos(t1))
    assert np.allclose(geom.christoffel(0, 2, 2),
                       -np.sin(t1) * np.cos(t1) * np.sin(t2) ** 2)
    assert np.allclose(geom.christoffel(1, 2, 2), -np.sin(t2) * np.cos(t2)
                       * np.ones((1, 1, 1)))
    assert np.max(np.abs(geom.christoffel(0, 1, 2))) == 0.0


# --------------------------------------------------------------- curvature


def test_curvature_oracle_round_sphere():
    errs = []
    for N in (16, 32):
        geom = build_round_sphere(3, N)
        dev = curvature_oracle(geom) - geom.schouten0
        errs.append(np.max(np.abs(dev)))
    assert errs[0] <= 0.05
    assert math.log2(errs[0] / errs[1]) >= 1.9


def test_curvature_oracle_hopf():
    errs = []
    for N in (16, 32):
        geom = build_hopf_product(3, circle_radius=1.0, points_per_axis=N)
        eigs = np.linalg.eigvalsh(curvature_oracle(geom))
        dev = eigs - np.array([-0.5, 0.5, 0.5])
        errs.append(np.max(np.abs(dev)))
    assert errs[0] <= 0.05
    assert math.log2(errs[0] / errs[1]) >= 1.9


def test_curvature_oracle_flat():
    geom = build_synthetic(3, 0.5 * np.eye(3), 8)
    assert np.max(np.abs(curvature_oracle(geom))) <= 1e-12


# ----------------------------------------------------------------- fieldio


def test_scalar_dump_roundtrip(tmp_path):
    geom = build_round_sphere(3, 16)
    rng = np.random.default_rng(3)
    values = rng.standard_normal(geom.grid.shape)
    path = tmp_path / "u.dump"
    fieldio.write_scalar_field(path, geom, values)
    back, meta = fieldio.read_field(path)
    assert np.array_equal(back, values)  # %.17g is bit-exact for doubles
    assert meta["dims"] == (16, 16, 16)
    assert meta["chart"] == "round_sphere"
    assert meta["axis"] == ("pole_shifted", "pole_shifted", "periodic")


def test_tensor_dump_roundtrip(tmp_path):
    geom = build_synthetic(3, 0.5 * np.eye(3), 8)
    rng = np.random.default_rng(5)
    field = rng.standard_normal(geom.grid.shape + (3, 3))
    field = 0.5 * (field + np.swapaxes(field, -1, -2))
    path = tmp_path / "w.dump"
    fieldio.write_tensor_field(path, geom, field)
    back, meta = fieldio.read_field(path)
    assert np.array_equal(back, field)
    assert meta["chart"] == "synthetic"


def test_dump_rejects_garbage(tmp_path):
    path = tmp_path / "bad.dump"
    path.write_text("not-a-dump v1; dims=2; axis=periodic; chart=x\n0\n0\n")
    with pytest.raises(ConfigurationError):
        fieldio.read_field(path)
    geom = build_synthetic(3, 0.5 * np.eye(3), 8)
    good = tmp_path / "short.dump"
    fieldio.write_scalar_field(good, geom, np.zeros(geom.grid.shape))
    lines = good.read_text().splitlines()
    good.write_text("\n".join(lines[:-5]) + "\n")
    with pytest.raises(ConfigurationError):
        fieldio.read_field(good)
