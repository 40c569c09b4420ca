import numpy as np
import pytest

from emshell.densities import TangentialDensity, RwgSpace
from emshell.errors import GeometryError, InvalidArgumentError
from emshell.geometry import (generate_shell_volume_mesh,
                              generate_surface_mesh, read_off, read_tet,
                              surface_divergence, write_off, write_tet)


def test_icosahedron_counts():
    m = generate_surface_mesh("sphere", 1.0, refinement=0)
    assert m.num_triangles == 20
    assert m.num_vertices == 12


def test_sphere_area_convergence():
    # summed facet areas against 4 pi r^2: the inscribed subdivision carries
    # 1.9% deficit at refinement 2 and reaches 0.5% at refinement 3, shrinking
    # at least quadratically
    errs = []
    for ref in (1, 2, 3):
        m = generate_surface_mesh("sphere", 1.0, refinement=ref)
        errs.append(abs(m.total_area - 4 * np.pi) / (4 * np.pi))
    assert errs[1] < 0.025
    assert errs[2] < 0.01
    assert errs[1] <= errs[0] / 3.5
    assert errs[2] <= errs[1] / 3.5


def test_box_exact_area():
    m = generate_surface_mesh("box", (1.0, 1.0, 1.0), refinement=0)
    assert m.num_triangles == 12
    assert m.total_area == pytest.approx(24.0, abs=1e-12)
    m2 = generate_surface_mesh("box", (1.0, 2.0, 0.5), refinement=2)
    want = 2 * (2 * 4 + 2 * 1 + 4 * 1) * 2  # 2*(ab+bc+ca) with full extents
    assert m2.total_area == pytest.approx(28.0, abs=1e-12)
    m2.validate()


def test_ellipsoid_watertight_and_volume():
    m = generate_surface_mesh("ellipsoid", (1.0, 2.0, 0.5), refinement=3)
    m.validate()
    want = 4.0 / 3.0 * np.pi * 1.0 * 2.0 * 0.5
    assert m.enclosed_volume() == pytest.approx(want, rel=0.01)


def test_invalid_size_raises():
    with pytest.raises(InvalidArgumentError):
        generate_surface_mesh("sphere", -1.0)
    with pytest.raises(InvalidArgumentError):
        generate_surface_mesh("sphere", 1.0, refinement=-2)


def test_shell_volume_sphere_pair():
    outer = generate_surface_mesh("sphere", 2.0, refinement=3)
    inner = generate_surface_mesh("sphere", 1.0, refinement=3)
    vm = generate_shell_volume_mesh(outer, inner, 0.25)
    want = 4.0 / 3.0 * np.pi * (8.0 - 1.0)
    assert vm.total_volume == pytest.approx(want, rel=0.02)
    vm.validate_shell(outer, inner)


def test_shell_volume_box_minus_sphere():
    outer = generate_surface_mesh("box", (2.0, 2.0, 2.0), refinement=2)
    inner = generate_surface_mesh("sphere", 1.0, refinement=3)
    vm = generate_shell_volume_mesh(outer, inner, 0.25)
    want = 64.0 - 4.18879
    assert vm.total_volume == pytest.approx(want, rel=0.02)


def test_degenerate_shell_raises():
    s = generate_surface_mesh("sphere", 1.0, refinement=1)
    with pytest.raises(GeometryError):
        generate_shell_volume_mesh(s, s, 0.3)


def test_full_ball_mesh():
    s = generate_surface_mesh("sphere", 1.0, refinement=3)
    vm = generate_shell_volume_mesh(s, None, 0.2)
    assert vm.total_volume == pytest.approx(4.0 / 3.0 * np.pi, rel=0.02)


def test_quadrature_weights_sum(sphere2, ball_volume):
    q = sphere2.quadrature(degree=2)
    assert np.all(q.weights > 0)
    assert q.weights.sum() == pytest.approx(sphere2.total_area, rel=1e-12)
    qv = ball_volume.quadrature()
    assert qv.weights.sum() == pytest.approx(ball_volume.total_volume,
                                             rel=1e-12)


def test_surface_divergence_rotated_constant(sphere3):
    space = RwgSpace(sphere3)
    dens = TangentialDensity.from_rotated_field(
        space, lambda p: np.broadcast_to([0.0, 0.0, 1.0], p.shape))
    div = surface_divergence(sphere3, dens)
    assert np.abs(div).max() <= 1e-3


def test_surface_divergence_zero_field(sphere2):
    space = RwgSpace(sphere2)
    dens = TangentialDensity(space, np.zeros(space.num_edges))
    assert np.abs(surface_divergence(sphere2, dens)).max() == 0.0


def test_surface_divergence_laplace_beltrami(sphere3):
    # tangential gradient of z: divergence approximates the surface laplacian
    # of z, an eigenfunction with eigenvalue -n(n+1) = -2
    space = RwgSpace(sphere3)

    def tgrad_z(p):
        n = p / np.linalg.norm(p, axis=1)[:, None]
        z = np.zeros_like(p)
        z[:, 2] = 1.0
        return z - n * n[:, 2:3]

    dens = TangentialDensity.from_function(space, tgrad_z)
    div = surface_divergence(sphere3, dens)
    zc = sphere3.centroids[:, 2] / np.linalg.norm(sphere3.centroids, axis=1)
    assert np.abs(div - (-2 * zc)).max() <= 0.05 * 2.0


def test_surface_divergence_rejects_non_tangential(sphere2):
    space = RwgSpace(sphere2)
    with pytest.raises(InvalidArgumentError):
        TangentialDensity.from_function(
            space, lambda p: np.broadcast_to([0.0, 0.0, 1.0], p.shape))


def test_gauss_identity(sphere2):
    rng = np.random.default_rng(0)
    space = RwgSpace(sphere2)
    dens = TangentialDensity(space, rng.normal(size=space.num_edges))
    div = dens.surface_divergence()
    total = np.sum(sphere2.areas * div)
    assert abs(total) <= 1e-12 * dens.l2_norm()


def test_off_roundtrip(tmp_path, sphere1):
    path = tmp_path / "m.off"
    write_off(sphere1, path)
    m = read_off(path)
    assert np.allclose(m.vertices, sphere1.vertices)
    assert np.array_equal(m.triangles, sphere1.triangles)


def test_tet_roundtrip(tmp_path, ball_volume):
    path = tmp_path / "m.tet"
    write_tet(ball_volume, path)
    m = read_tet(path)
    assert np.allclose(m.vertices, ball_volume.vertices)
    assert np.array_equal(m.tetrahedra, ball_volume.tetrahedra)
    assert m.total_volume == pytest.approx(ball_volume.total_volume)
