"""
Shared pytest fixtures for robust-mdp-lab tests.

This module provides the library instances, small hand-built MDPs and
seeded random instances used across the unit and integration tests.
"""

import numpy as np
import pytest


@pytest.fixture
def rng():
    """
    Provide a seeded numpy Generator.

    Example:
        def test_something(rng):
            v = rng.uniform(-1, 1, size=3)
    """
    return np.random.default_rng(12345)


@pytest.fixture
def two_state_mdp():
    """
    A 2-state, 2-action MDP with state rewards r(0) = 1, r(1) = 0 and gamma = 0.5.

    Returns:
        MdpInstance: mu = (1, 0)
    """
    from robust_mdp_lab.mdp_core import MdpInstance

    rewards = np.zeros((2, 2, 2))
    rewards[0] = 1.0
    return MdpInstance(rewards, 0.5, [1.0, 0.0])


@pytest.fixture
def stay_kernel():
    """Kernel where action 0 stays and action 1 switches state (2 states, 2 actions)."""
    from robust_mdp_lab.mdp_core import TransitionKernel

    probs = np.zeros((2, 2, 2))
    probs[0, 0, 0] = probs[1, 0, 1] = 1.0
    probs[0, 1, 1] = probs[1, 1, 0] = 1.0
    return TransitionKernel(probs)


@pytest.fixture
def appendix_d():
    """The five-state instance without an optimal stationary policy."""
    from robust_mdp_lab.instance_library import load_appendix_d
    return load_appendix_d()


@pytest.fixture
def example_3_1():
    """Two states, one action, five kernels."""
    from robust_mdp_lab.instance_library import load_example_3_1
    return load_example_3_1()


@pytest.fixture
def example_4_2():
    """Four states, three actions, coefficient-factor set."""
    from robust_mdp_lab.instance_library import load_example_4_2
    return load_example_4_2()


@pytest.fixture
def wiesemann():
    """Six-state parametric instance with a coupling parameter."""
    from robust_mdp_lab.instance_library import load_wiesemann_6state
    return load_wiesemann_6state()


@pytest.fixture
def sa_gap_fixture():
    """Factor model where the pair-wise operator undershoots the worst case."""
    from robust_mdp_lab.instance_library import load_sa_gap_fixture
    return load_sa_gap_fixture()


@pytest.fixture
def make_random():
    """
    Factory for seeded random instances.

    Example:
        def test_something(make_random):
            instance = make_random("factor_model", seed=3, num_states=2)
    """
    from robust_mdp_lab.instance_library import GeneratorSpec, random_instance

    def _make(variant="s_rectangular", seed=0, **kwargs):
        return random_instance(GeneratorSpec(variant=variant, **kwargs), seed)

    return _make


@pytest.fixture
def tmp_instance_file(tmp_path, appendix_d):
    """
    Write the appendix_d instance to a temporary JSON file.

    Returns:
        Path: Location of the file
    """
    from robust_mdp_lab.instance_format import save_instance
    return save_instance(appendix_d, tmp_path / "appendix_d.json")
