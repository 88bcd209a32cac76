"""Shared fixtures: spaces, architectures, and the zero-noise landscape."""

import json
import pathlib

import pytest

from robustnas.arch import Activation, InputMode, LayerType
from robustnas.fitness import FitnessWeights, SurrogateConfig, make_surrogate
from robustnas.space import DEFAULT_SPACE, sample, simplest

FIXTURE_DIR = pathlib.Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def default_space():
    return DEFAULT_SPACE


@pytest.fixture(scope="session")
def restricted_space():
    """n=4 space small enough to brute-force (2,448 members)."""
    return DEFAULT_SPACE.restrict(
        n=4,
        repeats_range=(3, 4),
        width_range=(128, 256),
        output_widths=(128, 256),
        layer_types=(LayerType.CONV, LayerType.GLU),
        conv_params=(1, 3),
        input_modes=(InputMode.ADD,),
        activations=(Activation.NONE,),
    )


@pytest.fixture(scope="session")
def simplest_arch(default_space):
    return simplest(default_space)


@pytest.fixture(scope="session")
def sample_archs(default_space):
    """A handful of deterministic samples; enough variety for round-trips."""
    return [simplest(default_space)] + [sample(default_space, seed) for seed in range(25)]


@pytest.fixture(scope="session")
def flat_surrogate():
    """Noise-free landscape: same architecture always scores identically."""
    return make_surrogate(SurrogateConfig(noise_amplitude=0.0))


@pytest.fixture(scope="session")
def noisy_surrogate():
    return make_surrogate(SurrogateConfig())


@pytest.fixture(scope="session")
def default_weights():
    return FitnessWeights()


@pytest.fixture(scope="session")
def param_fixture_cases():
    data = json.loads((FIXTURE_DIR / "param_count_cases.json").read_text())
    assert data["format"] == "param-count-fixtures-v1"
    return data["cases"]
