import numpy as np
import pytest

from emshell.forward import ForwardModel, MaterialMap
from emshell.geometry import generate_shell_volume_mesh, generate_surface_mesh
from emshell.kernels import Wavenumber
from emshell.surface_ops import BoundaryOperators


@pytest.fixture(scope="session")
def sphere1():
    return generate_surface_mesh("sphere", 1.0, refinement=1)


@pytest.fixture(scope="session")
def sphere2():
    return generate_surface_mesh("sphere", 1.0, refinement=2)


@pytest.fixture(scope="session")
def sphere3():
    return generate_surface_mesh("sphere", 1.0, refinement=3)


@pytest.fixture(scope="session")
def ops2(sphere2):
    return BoundaryOperators(sphere2)


@pytest.fixture(scope="session")
def k_static():
    return Wavenumber(0.0)


@pytest.fixture(scope="session")
def ball_volume(sphere2):
    return generate_shell_volume_mesh(sphere2, None, 0.3)


@pytest.fixture(scope="session")
def shell_scene():
    """Sphere-in-sphere shell (r=1 inside r=2), coarse but fully coupled."""
    inner = generate_surface_mesh("sphere", 1.0, refinement=1)
    outer = generate_surface_mesh("sphere", 2.0, refinement=1)
    shell = generate_shell_volume_mesh(outer, inner, 0.6)
    model = ForwardModel(obstacle=inner, shell=shell)
    material = MaterialMap.constant(shell, 2.0)
    return model, material


@pytest.fixture(scope="session")
def shell_scene_ref2():
    """Finer sphere-in-sphere scene shared by the asymptotics tests."""
    inner = generate_surface_mesh("sphere", 1.0, refinement=2)
    outer = generate_surface_mesh("sphere", 2.0, refinement=2)
    shell = generate_shell_volume_mesh(outer, inner, 0.5)
    model = ForwardModel(obstacle=inner, shell=shell)
    material = MaterialMap.constant(shell, 2.0)
    return model, material


def sphere_cos_theta(mesh):
    c = mesh.centroids
    return c[:, 2] / np.linalg.norm(c, axis=1)


def surface_l2(mesh, values):
    return np.sqrt(np.sum(mesh.areas * np.abs(values) ** 2))


def surface_l2_rel(mesh, got, want):
    return surface_l2(mesh, got - want) / surface_l2(mesh, want)
