"""
Tests for instance_library.py - named instances and random generators.
"""

from fractions import Fraction

import numpy as np
import pytest


@pytest.mark.unit
class TestRegistry:
    """Tests for the instance registry."""

    def test_library_names(self):
        """Verify the five hand-built instances are registered."""
        from robust_mdp_lab.instance_library import library_names

        assert set(library_names()) == {
            "example_3_1", "wiesemann_6state", "example_4_2", "appendix_d", "sa_gap_fixture",
        }

    def test_unknown_name(self):
        """Verify an unknown name lists the available ones."""
        from robust_mdp_lab.errors import InvalidInstanceError
        from robust_mdp_lab.instance_library import load_named

        with pytest.raises(InvalidInstanceError, match="appendix_d"):
            load_named("appendix_e")

    def test_find_instance_uses_loader_for_paths(self, example_3_1):
        """Verify non-library references go to the loader."""
        from robust_mdp_lab.instance_library import find_instance

        seen = []
        result = find_instance("some/file.json", loader=lambda ref: seen.append(ref) or example_3_1)

        assert seen == ["some/file.json"]
        assert result is example_3_1

    def test_find_instance_without_loader(self):
        """Verify a path without a loader is rejected."""
        from robust_mdp_lab.errors import InvalidInstanceError
        from robust_mdp_lab.instance_library import find_instance

        with pytest.raises(InvalidInstanceError):
            find_instance("some/file.json")

    @pytest.mark.parametrize("name,shape", [
        ("example_3_1", (2, 1)),
        ("wiesemann_6state", (6, 2)),
        ("example_4_2", (4, 3)),
        ("appendix_d", (5, 2)),
        ("sa_gap_fixture", (3, 2)),
    ])
    def test_shapes(self, name, shape):
        """Verify each instance has the documented size."""
        from robust_mdp_lab.instance_library import load_named

        instance = load_named(name)
        assert (instance.mdp.num_states, instance.mdp.num_actions) == shape

    def test_expected_quantities_parse(self):
        """Verify every expected quantity uses the quantity grammar."""
        from robust_mdp_lab.instance_format import parse_quantity
        from robust_mdp_lab.instance_library import library_names, load_named

        for name in library_names():
            for expected in load_named(name).expected:
                parse_quantity(expected.quantity)


@pytest.mark.unit
class TestNamedInstance:
    """Tests for NamedInstance helpers."""

    def test_state_by_label(self, appendix_d):
        """Verify labels and string indices resolve to the same state."""
        assert appendix_d.state_index("b") == 1
        assert appendix_d.state_index("1") == 1

    def test_unknown_state(self, appendix_d):
        """Verify an unknown label is rejected."""
        from robust_mdp_lab.errors import InvalidInstanceError

        with pytest.raises(InvalidInstanceError):
            appendix_d.state_index("z")

    def test_start_distribution(self, appendix_d):
        """Verify mu keeps the instance distribution and a label gives a point mass."""
        np.testing.assert_array_equal(appendix_d.start_distribution("mu"), appendix_d.mdp.initial_dist)
        np.testing.assert_array_equal(appendix_d.start_distribution("c"), [0.0, 0.0, 1.0, 0.0, 0.0])

    def test_uniform_policy_default(self, example_3_1):
        """Verify "uniform" is always available."""
        assert example_3_1.policy("uniform").action_probs.shape == (2, 1)

    def test_unknown_policy(self, example_3_1):
        """Verify a missing named policy is rejected."""
        from robust_mdp_lab.errors import InvalidInstanceError

        with pytest.raises(InvalidInstanceError):
            example_3_1.policy("beta0")

    def test_shape_mismatch(self, example_3_1, appendix_d):
        """Verify an MDP and a set of different sizes cannot be combined."""
        from robust_mdp_lab.errors import InvalidInstanceError
        from robust_mdp_lab.instance_library import NamedInstance

        with pytest.raises(InvalidInstanceError):
            NamedInstance("mixed", example_3_1.mdp, appendix_d.uncertainty)


@pytest.mark.unit
class TestHandBuiltInstances:
    """Tests for the structure of the library instances."""

    def test_appendix_closed_form(self):
        """Verify the beta = 0 return from a is 7/128 at p = 3/4 before rescaling."""
        from robust_mdp_lab.instance_library import appendix_d_closed_form

        value = appendix_d_closed_form(0.75, 0.0, [1.0, 0.0, 0.0, 0.0, 0.0])
        assert value == pytest.approx(float(Fraction(7, 128)), abs=1e-15)

    def test_appendix_other_discount(self):
        """Verify other discounts load, validated, without expected values."""
        from robust_mdp_lab.instance_library import load_appendix_d

        instance = load_appendix_d(discount=0.6)

        assert instance.mdp.discount == 0.6
        assert instance.expected == ()

    def test_appendix_witness_shape(self):
        """Verify the witness objective is an (S, A, S) tensor using action 0 only."""
        from robust_mdp_lab.instance_library import appendix_d_witness

        witness = appendix_d_witness()

        assert witness.shape == (5, 2, 5)
        assert np.all(witness[:, 1] == 0.0)

    def test_wiesemann_partition_has_same_hull(self, wiesemann):
        """Verify the partitioned model spans the same kernels as the parametric set."""
        from robust_mdp_lab.hull import hulls_equal
        from robust_mdp_lab.instance_library import wiesemann_partitioned_model
        from robust_mdp_lab.uncertainty_models import vertex_stack

        corners = vertex_stack(wiesemann.uncertainty.vertex_set())
        partitioned = vertex_stack(wiesemann_partitioned_model())
        assert hulls_equal(corners, partitioned)

    def test_example_4_2_is_coefficient_factor(self, example_4_2):
        """Verify the four-state instance uses four factors."""
        from robust_mdp_lab.uncertainty_models import CoeffFactor

        assert isinstance(example_4_2.uncertainty, CoeffFactor)
        assert example_4_2.uncertainty.num_factors == 4


@pytest.mark.unit
class TestRandomInstances:
    """Tests for GeneratorSpec and random_instance."""

    def test_same_seed_same_instance(self, make_random):
        """Verify generation is deterministic in (spec, seed)."""
        from robust_mdp_lab.uncertainty_models import vertex_stack

        first, second = make_random("coeff_factor", seed=9), make_random("coeff_factor", seed=9)

        np.testing.assert_array_equal(first.mdp.rewards, second.mdp.rewards)
        np.testing.assert_array_equal(vertex_stack(first.uncertainty), vertex_stack(second.uncertainty))

    def test_different_seeds_differ(self, make_random):
        """Verify two seeds give different rewards."""
        assert not np.array_equal(make_random(seed=1).mdp.rewards, make_random(seed=2).mdp.rewards)

    def test_seed_sequence_accepted(self):
        """Verify a SeedSequence child can seed an instance."""
        from robust_mdp_lab.instance_library import GeneratorSpec, random_instance

        child = np.random.SeedSequence(0).spawn(1)[0]
        instance = random_instance(GeneratorSpec(), child)
        assert instance.name == "random_s_rectangular_seq"

    def test_state_rewards_option(self, make_random):
        """Verify next_state_independent draws r(s, a) only."""
        instance = make_random("factor_model", seed=0, next_state_independent=True)
        assert instance.mdp.is_next_state_independent()

    @pytest.mark.parametrize("kwargs", [
        {"variant": "ellipsoid"},
        {"num_states": 0},
        {"discount": 1.0},
    ])
    def test_spec_validation(self, kwargs):
        """Verify bad generator settings are rejected."""
        from robust_mdp_lab.errors import InvalidInstanceError
        from robust_mdp_lab.instance_library import GeneratorSpec

        with pytest.raises(InvalidInstanceError):
            GeneratorSpec(**kwargs)

    @pytest.mark.parametrize("variant", [
        "explicit_finite", "s_rectangular", "sa_rectangular", "factor_model",
        "partitioned", "coeff_factor", "sa_coeff_factor",
    ])
    def test_every_variant_generates(self, make_random, variant):
        """Verify every variant yields a set of the requested size."""
        instance = make_random(variant, seed=0, num_states=4, num_actions=3)
        assert (instance.uncertainty.num_states, instance.uncertainty.num_actions) == (4, 3)
