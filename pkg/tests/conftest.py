"""Shared fixtures: small networks whose dynamics are known in closed form."""

import numpy as np
import pytest
import toml
from scipy import linalg

from eqaug import group_core, subspaces
from eqaug.data_io import synth_asymmetric_task, synth_invariant_task
from eqaug.risk_dynamics import RiskContext
from eqaug.tensor_net import Architecture, LabeledSample, ParamPoint

# Curvatures of the negative curvature toy at its equivariant minimum
NEGATIVE_TOY_E_CURVATURE = 0.1296
NEGATIVE_TOY_PERP_CURVATURE = -1.8144


@pytest.fixture
def c4():
    return group_core.cyclic_group(4)


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def conv_structure(side=4, channels=2, classes=2, support="full3x3"):
    """Rotation equivariant conv layer followed by an invariant dense layer."""
    group = group_core.cyclic_group(4)
    reps = [
        group_core.rotation_rep_on_grid(group, side, side, 1),
        group_core.rotation_rep_on_grid(group, side, side, channels),
        group_core.trivial_rep(group, classes),
    ]
    subspace = subspaces.AffineSubspace.product(
        subspaces.conv_subspace(side, side, 1, channels, support),
        subspaces.dense_subspace(classes, side * side * channels),
    )
    arch = Architecture(
        [rep.dim for rep in reps], ["tanh", "identity"], "cross_entropy"
    )
    return arch, subspaces.EquivariantStructure(reps, subspace)


@pytest.fixture(scope="session")
def conv_ctx():
    """4x4 images, one conv layer with 2 channels, 2 rotation invariant classes."""
    arch, structure = conv_structure()
    return RiskContext(arch, structure, synth_invariant_task(20, 4, seed=0))


@pytest.fixture(scope="session")
def linear_asym_ctx():
    """Linear classifier of 4x4 images on the orientation dependent task.

    The network is asked to be rotation invariant while the labels rotate
    with the image, so the nominal flow leaves ``E`` quickly.
    """
    group = group_core.cyclic_group(4)
    reps = [
        group_core.rotation_rep_on_grid(group, 4, 4, 1),
        group_core.trivial_rep(group, 4),
    ]
    structure = subspaces.EquivariantStructure(
        reps, subspaces.dense_subspace(4, 16)
    )
    arch = Architecture([16, 4], ["identity"], "cross_entropy")
    return RiskContext(arch, structure, synth_asymmetric_task(40, 4, seed=0))


@pytest.fixture(scope="session")
def quadratic_ctx():
    """Linear least squares from a rotated 2x2 grid to two invariant outputs.

    The risk is quadratic, its Hessian acts on every row of the layer as the
    second moment of the augmented inputs.
    """
    group = group_core.cyclic_group(4)
    reps = [
        group_core.rotation_rep_on_grid(group, 2, 2, 1),
        group_core.trivial_rep(group, 2),
    ]
    structure = subspaces.EquivariantStructure(reps, subspaces.dense_subspace(2, 4))
    arch = Architecture([4, 2], ["identity"], "mse")
    rng = np.random.default_rng(7)
    samples = [
        LabeledSample(rng.standard_normal(4), rng.standard_normal(2))
        for _ in range(16)
    ]
    return RiskContext(arch, structure, samples)


def second_moment(ctx):
    """Hessian of the quadratic toy acting on a single row."""
    return ctx.aug_inputs.T @ ctx.aug_inputs / ctx.aug_inputs.shape[0]


def perp_spectrum(ctx):
    """Eigen-decomposition of the quadratic toy Hessian on rows orthogonal to 1."""
    basis = linalg.null_space(np.ones((1, 4)))
    values, vectors = linalg.eigh(basis.T @ second_moment(ctx) @ basis)
    return values, basis @ vectors


@pytest.fixture(scope="session")
def negative_toy_ctx():
    """``tanh(a x)`` with a swap symmetric input, curved downwards off ``E``.

    With ``u = (1, 1) / sqrt 2`` and ``v = (1, -1) / sqrt 2`` the samples are
    ``(u + 2 v, -1)`` and ``(u, 2.6)``. The restricted problem is minimal at
    ``a = atanh(0.8)`` along ``u``, where the augmented risk curves upwards
    along ``u`` and downwards along ``v``.
    """
    group = group_core.cyclic_group(2)
    reps = [group_core.permutation_rep(group, [1, 0]), group_core.trivial_rep(group, 1)]
    structure = subspaces.EquivariantStructure(reps, subspaces.dense_subspace(1, 2))
    arch = Architecture([2, 1], ["tanh"], "mse")
    u = np.array([1.0, 1.0]) / np.sqrt(2.0)
    v = np.array([1.0, -1.0]) / np.sqrt(2.0)
    samples = [LabeledSample(u + 2.0 * v, [-1.0]), LabeledSample(u, [2.6])]
    return RiskContext(arch, structure, samples)


def negative_toy_minimum():
    u = np.array([1.0, 1.0]) / np.sqrt(2.0)
    return ParamPoint([np.arctanh(0.8) * u[None, :]])


def negative_toy_perp():
    return ParamPoint([np.array([[1.0, -1.0]]) / np.sqrt(2.0)])


SMALL_CONFIG = {
    "network": {"channels": [2]},
    "data": {"limit": 12, "size": 4},
    "dynamics": {"num_steps": 10, "record_every": 5, "gamma_list": [1.0]},
    "sgd": {"batch_size": 4, "epochs": 1},
    "run": {"seeds": [0, 1], "output_dir": "results"},
    "verify": {"trials": 2, "samples": 1, "sigma_samples": 1},
    "logging": {"type": "none"},
}


def write_config(directory, **overrides):
    """Write ``eqaug.toml``: a fast lab, with some sections overridden."""
    config = {section: dict(values) for section, values in SMALL_CONFIG.items()}
    for section, values in overrides.items():
        config.setdefault(section, {}).update(values)
    configpath = directory / "eqaug.toml"
    configpath.write_text(toml.dumps(config))
    return configpath


@pytest.fixture
def workspace(tmp_path, monkeypatch):
    """Empty working directory holding the small configuration."""
    write_config(tmp_path)
    monkeypatch.chdir(tmp_path)
    return tmp_path
