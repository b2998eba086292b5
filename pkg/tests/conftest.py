"""Shared fixtures: the bundled registry, the two bundled defect models, and
small builders for hand-made models."""

from __future__ import annotations

import numpy as np
import pytest

from odmrkit import (
    DefectModel,
    DefectNucleus,
    HyperfineTensor,
    data_root,
    load_defect_model,
    load_registry,
)

# Transverse components chosen so sqrt(axx^2 + ayy^2 + 2 axy^2) == 30 exactly.
DEFAULT_AXX = 25.9527449879744
DEFAULT_AYY = 7.513656073388624
DEFAULT_AXY = 9.219544457292887
DEFAULT_AZZ = -65.9


@pytest.fixture(scope="session")
def registry():
    return load_registry(data_root() / "isotopes.toml")


@pytest.fixture(scope="session")
def n15(registry):
    return registry["N15"]


@pytest.fixture(scope="session")
def n14(registry):
    return registry["N14"]


@pytest.fixture(scope="session")
def b10(registry):
    return registry["B10"]


@pytest.fixture(scope="session")
def b11(registry):
    return registry["B11"]


@pytest.fixture(scope="session")
def rescaled_model(registry):
    return load_defect_model(data_root() / "model_n15_rescaled.toml", registry)


@pytest.fixture(scope="session")
def abinitio_model(registry):
    return load_defect_model(data_root() / "model_n15_abinitio.toml", registry)


def default_tensor() -> HyperfineTensor:
    return HyperfineTensor(axx=DEFAULT_AXX, ayy=DEFAULT_AYY, axy=DEFAULT_AXY, azz=DEFAULT_AZZ)


def random_tensor(rng: np.random.Generator, azz_scale: float = 60.0) -> HyperfineTensor:
    a = rng.normal(size=3) * 20.0
    return HyperfineTensor(axx=a[0], ayy=a[1], axy=a[2], azz=rng.normal() * azz_scale)


def single_nucleus_model(species, tensor: HyperfineTensor) -> DefectModel:
    return DefectModel(
        d_gs_mhz=3480.0,
        gamma_e_mhz_per_g=2.8,
        nuclei=(DefectNucleus(species=species, tensor=tensor),),
    )
