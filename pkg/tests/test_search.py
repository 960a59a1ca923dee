"""Tests for ordering search, pruning, rechecks and Pareto sweeps."""
import itertools
import math

import numpy as np
import pytest

from squeeze_designer.errors import CapacityError, OrderingError, SqueezeDesignerError
from squeeze_designer.experiments import load_experiment
from squeeze_designer.fock import ModeSpace
from squeeze_designer.objective import OptConfig, OptResult
from squeeze_designer.ops import ParamRef, SourceKind, SourceSpec, Topology
from squeeze_designer.search import (
    CanonicalOrdering,
    Canonicalizer,
    DiscoveryConfig,
    ParetoFront,
    ParetoPoint,
    SweepJob,
    SweepOutcome,
    canonical_key,
    cluster_fronts,
    commutes,
    conflict_component,
    discovery_run,
    enumerate_canonical,
    f0_schedule,
    groups_follow_positions,
    low_gain_response,
    parameter_commutations,
    position_key,
    prune,
    recheck,
    sample_orderings,
    select_best,
    sweep_topology,
)


def _point(fidelity, probability, f0=None, key='k'):
    return ParetoPoint(fidelity if f0 is None else f0, fidelity, probability, (('r', 0.1),), key)


class TestCommutes:
    """Test template-level commutation."""

    def test_disjoint(self):
        a = SourceSpec(SourceKind.TWO_MODE, (0, 1), theta=ParamRef('x'))
        b = SourceSpec(SourceKind.TWO_MODE, (2, 3), theta=ParamRef('y'))
        assert commutes(a, b)

    def test_tied_phases(self):
        a = SourceSpec(SourceKind.TWO_MODE, (0, 1), theta=ParamRef(None, 1.0, 0.0))
        b = SourceSpec(SourceKind.TWO_MODE, (1, 0), theta=ParamRef(None, 1.0, math.pi))
        assert commutes(a, b)

    def test_free_phases(self):
        a = SourceSpec(SourceKind.TWO_MODE, (0, 1), theta=ParamRef('x'))
        b = SourceSpec(SourceKind.TWO_MODE, (0, 1), theta=ParamRef('y'))
        assert not commutes(a, b)

    def test_shared_mode(self):
        a = SourceSpec(SourceKind.TWO_MODE, (0, 1))
        b = SourceSpec(SourceKind.TWO_MODE, (1, 2))
        assert not commutes(a, b)


class TestCanonicalOrderings:
    """Test canonical keys and class counts."""

    @pytest.mark.parametrize("name,method,symmetry,count", [
        ('w7_appB1', 'exact', True, 54),
        ('w7_appB1', 'exact', False, 108),
        ('noon3_appB3', 'exact', True, 27),
        ('noon3_appB3', 'exact', False, 54),
        ('noon4_simplified_appB3', 'exact', True, 4),
        ('noon4_simplified_appB3', 'exact', False, 4),
        ('noon4_original_appB3', 'exact', True, 9),
        ('noon4_original_appB3', 'exact', False, 18),
        ('noon_six_source', 'exact', True, 81),
        ('noon_six_source', 'exact', False, 162),
        ('noon_six_source', 'local', True, 89),
        ('noon_six_source', 'local', False, 180),
        ('ghz4_fig1', 'exact', True, 1),
    ])
    def test_class_counts(self, name, method, symmetry, count):
        template = load_experiment(name).template
        assert len(enumerate_canonical(template, method, use_symmetry=symmetry)) == count

    def test_key_is_class_invariant(self):
        template = load_experiment('noon4_simplified_appB3').template
        canonicalizer = Canonicalizer(template)
        for ordering in enumerate_canonical(template):
            assert canonicalizer.key(ordering.key) == ordering.key

    def test_symmetric_orderings_share_a_key(self):
        template = load_experiment('noon3_appB3').template
        # swapping a and b maps Sa<->Sb and Sac<->Sbc, Sab onto itself
        assert canonical_key(template, (0, 1, 2, 3, 4)) == canonical_key(template, (1, 0, 2, 4, 3))
        assert canonical_key(template, (0, 1, 2, 3, 4), use_symmetry=False) != \
            canonical_key(template, (1, 0, 2, 4, 3), use_symmetry=False)

    def test_orderings_sharing_a_key_give_the_same_state(self):
        template = load_experiment('noon3_appB3').template
        canonicalizer = Canonicalizer(template, use_symmetry=False)
        states = {}
        for perm in itertools.permutations(range(template.num_ordered)):
            amplitudes = template.realize(perm).run([0.2]).amplitudes
            key = canonicalizer.key(perm)
            if key in states:
                np.testing.assert_allclose(amplitudes, states[key], atol=1e-12)
            else:
                states[key] = amplitudes
        assert len(states) == 54

    def test_key_string_uses_labels(self):
        ordering = CanonicalOrdering((1, 0), (1, 0), ('P', 'Q'))
        assert ordering.key_string == 'Q-P'

    def test_unknown_method(self, two_source_template):
        with pytest.raises(OrderingError):
            Canonicalizer(two_source_template, 'fast')

    def test_not_a_permutation(self, two_source_template):
        with pytest.raises(OrderingError):
            Canonicalizer(two_source_template).canonical((0, 0))

    def test_enumeration_limit(self, two_source_template, mocker):
        mocker.patch('squeeze_designer.search.Config.MAX_ORDERING_SOURCES', 1)
        with pytest.raises(CapacityError):
            enumerate_canonical(two_source_template)

    def test_sampling_is_seeded(self):
        template = load_experiment('w7_appB1').template
        first = [o.key for o in sample_orderings(template, 10, seed=3)]
        second = [o.key for o in sample_orderings(template, 10, seed=3)]
        assert first == second
        assert len(set(first)) == len(first)

    def test_sampling_needs_a_count(self, two_source_template):
        with pytest.raises(OrderingError):
            sample_orderings(two_source_template, 0, seed=0)

    def test_position_key(self):
        ordering = CanonicalOrdering((2, 0, 1), (2, 0, 1), ('A', 'F', 'G'))
        assert position_key(ordering) == (2, 0)

    def test_template_rejects_foreign_symmetry(self, two_source_template):
        with pytest.raises(OrderingError):
            type(two_source_template)('bad', two_source_template.topology, two_source_template.pattern,
                                      ((0, 1),))


class TestPruneAndRecheck:
    """Test source pruning and the cutoff convergence check."""

    def test_prunes_negligible_source(self, pair_pattern, pair_target):
        sources = (
            SourceSpec(SourceKind.TWO_MODE, (0, 1), r=ParamRef('r'), label='S'),
            SourceSpec(SourceKind.SINGLE_MODE, (0,), r=ParamRef('q'), label='tiny'),
        )
        topology = Topology(ModeSpace((4, 4)), sources, ('r', 'q'))
        pruned, params = prune(topology, [0.3, 1e-5], pair_pattern, pair_target)
        assert [s.label for s in pruned.sources] == ['S']
        assert pruned.parameters == ('r',)
        assert params.tolist() == [0.3]

    def test_keeps_relevant_source(self, pair_pattern, pair_target):
        sources = (
            SourceSpec(SourceKind.TWO_MODE, (0, 1), r=ParamRef('r'), label='S'),
            SourceSpec(SourceKind.SINGLE_MODE, (0,), r=ParamRef('q'), label='big'),
        )
        topology = Topology(ModeSpace((4, 4)), sources, ('r', 'q'))
        pruned, _ = prune(topology, [0.3, 0.2], pair_pattern, pair_target)
        assert len(pruned.sources) == 2

    def test_recheck_passes_at_low_gain(self, pair_topology, pair_pattern, pair_target):
        result = recheck(pair_topology, [0.2], pair_pattern, pair_target)
        assert result.passed
        assert result.delta_fidelity < 1e-4

    def test_recheck_fails_at_high_gain(self, pair_topology, pair_pattern, pair_target):
        assert not recheck(pair_topology, [1.5], pair_pattern, pair_target).passed

    def test_parameter_commutations(self):
        sources = (
            SourceSpec(SourceKind.TWO_MODE, (0, 1), r=ParamRef('r'), theta=ParamRef('a'), label='X'),
            SourceSpec(SourceKind.TWO_MODE, (0, 1), r=ParamRef('r'), theta=ParamRef('b'), label='Y'),
        )
        topology = Topology(ModeSpace((2, 2)), sources, ('r', 'a', 'b'))
        assert parameter_commutations(topology, [0.1, 0.4, 0.4]) == [{'first': 'X', 'second': 'Y', 'modes': [0, 1]}]
        assert parameter_commutations(topology, [0.1, 0.4, 1.4]) == []


class TestParetoFront:
    """Test dominance bookkeeping and the hypervolume."""

    def test_dominated_point_rejected(self):
        front = ParetoFront([_point(0.9, 1e-3)])
        assert not front.add(_point(0.85, 1e-4))
        assert len(front) == 1

    def test_dominating_point_replaces(self):
        front = ParetoFront([_point(0.9, 1e-3), _point(0.8, 1e-2)])
        assert front.add(_point(0.95, 1e-1))
        assert [p.fidelity for p in front] == [0.95]

    def test_sorted_by_f0(self):
        front = ParetoFront([_point(0.95, 1e-4), _point(0.8, 1e-2), _point(0.9, 1e-3)])
        assert [p.f0 for p in front] == [0.8, 0.9, 0.95]

    def test_non_finite_rejected(self):
        assert not ParetoFront().add(_point(math.nan, 1e-3, f0=0.9))

    def test_hypervolume_single_point(self):
        # F = 0.9, 10 counts/s
        front = ParetoFront([_point(0.9, 1e-7)])
        assert front.hypervolume() == pytest.approx(0.2)

    def test_hypervolume_staircase(self):
        front = ParetoFront([_point(0.9, 1e-7), _point(0.8, 1e-6)])
        assert front.hypervolume() == pytest.approx(0.3)

    def test_hypervolume_ignores_points_below_reference(self):
        front = ParetoFront([_point(0.6, 1e-2)])
        assert front.hypervolume() == 0.0

    def test_best_at(self):
        front = ParetoFront([_point(0.95, 1e-4), _point(0.8, 1e-2), _point(0.9, 1e-3)])
        assert front.best_at(0.85).fidelity == 0.9
        assert front.best_at(0.99) is None

    def test_select_best(self):
        small = SweepOutcome('small', [], ParetoFront([_point(0.8, 1e-7)]))
        large = SweepOutcome('large', [], ParetoFront([_point(0.95, 1e-5)]))
        report = select_best([small, large])
        assert report.best == 'large'
        assert set(report.hypervolumes) == {'small', 'large'}


class TestClustering:
    def test_groups_close_curves(self):
        curves = {'a': [0.0, 0.0, 0.0], 'b': [0.1, 0.0, 0.2], 'c': [5.0, 5.0, 5.0]}
        assert cluster_fronts(curves) == [['a', 'b'], ['c']]

    def test_single_curve(self):
        assert cluster_fronts({'a': [1.0]}) == [['a']]
        assert cluster_fronts({}) == []

    def test_groups_follow_positions(self):
        labels = ('F', 'G', 'H')
        orderings = {
            'x': CanonicalOrdering((0, 1, 2), (0, 1, 2), labels),
            'y': CanonicalOrdering((0, 1, 2), (0, 1, 2), labels),
            'z': CanonicalOrdering((1, 0, 2), (1, 0, 2), labels),
        }
        assert groups_follow_positions([['x', 'y'], ['z']], orderings)
        assert not groups_follow_positions([['x'], ['y', 'z']], orderings)

    def test_positions_within_conflict_component(self):
        # P commutes with everything, F/G/H form a chain
        table = np.array([
            [True, True, True, True],
            [True, True, False, True],
            [True, False, True, False],
            [True, True, False, True],
        ])
        labels = ('P', 'F', 'G', 'H')
        assert conflict_component(table, [1]) == {1, 2, 3}
        first = CanonicalOrdering((0, 1, 2, 3), (0, 1, 2, 3), labels)
        second = CanonicalOrdering((1, 0, 2, 3), (1, 0, 2, 3), labels)
        assert position_key(first, ('F', 'G')) != position_key(second, ('F', 'G'))
        assert position_key(first, ('F', 'G'), table) == position_key(second, ('F', 'G'), table) == (0, 1)

    def test_low_gain_response(self):
        grid = [0.1, 0.2]
        curves = {'a': [1.0, 2.0], 'b': [1.0 + 0.02, 2.0 + 0.08]}
        response = low_gain_response(curves, grid)
        assert response['a'] == pytest.approx([-1.0, -1.0])
        assert response['b'] == pytest.approx([1.0, 1.0])
        assert low_gain_response({}, grid) == {}

    def test_low_gain_response_needs_positive_grid(self):
        with pytest.raises(SqueezeDesignerError):
            low_gain_response({'a': [1.0, 2.0]}, [0.0, 0.1])

    def test_response_separates_rate_offsets(self):
        grid = np.linspace(0.02, 0.1, 5)
        base = -4 * np.log10(grid)
        # offsets growing like grid**2, two orderings per level
        curves = {f'{level}{copy}': (base + level * 0.1 * grid ** 2 + copy * 1e-3 * grid ** 4).tolist()
                  for level in range(3) for copy in range(2)}
        groups = cluster_fronts(low_gain_response(curves, grid), threshold=0.05)
        assert groups == [['00', '01'], ['10', '11'], ['20', '21']]


class TestSweep:
    """Test the warm-started continuation sweep."""

    def test_schedule(self):
        assert f0_schedule(0.8, 0.9, 0.05) == [0.8, 0.85, 0.9]
        with pytest.raises(SqueezeDesignerError):
            f0_schedule(0.9, 0.8, 0.05)

    def test_sweep_builds_front(self, pair_topology, pair_pattern, pair_target, postselected_weights, fast_config):
        job = SweepJob('S', pair_topology, pair_pattern, pair_target, [0.8, 0.85, 0.9], postselected_weights,
                       fast_config, [0.1])
        outcome = sweep_topology(job)
        assert [s.f0 for s in outcome.steps] == [0.8, 0.85, 0.9]
        assert all(not s.error for s in outcome.steps)
        assert len(outcome.front) == 3
        fidelities = [p.fidelity for p in outcome.front]
        probabilities = [p.probability for p in outcome.front]
        assert fidelities == sorted(fidelities)
        assert probabilities == sorted(probabilities, reverse=True)

    def test_payload_restores_job(self, pair_topology, pair_pattern, pair_target, postselected_weights,
                                   fast_config):
        job = SweepJob('S', pair_topology, pair_pattern, pair_target, [0.9], postselected_weights, fast_config,
                       [0.1], both_directions=False)
        restored = SweepJob.from_payload(job.to_payload())
        assert restored.config == fast_config
        assert restored.weights == postselected_weights
        outcome = SweepOutcome.from_payload(sweep_topology(restored).to_payload())
        assert outcome.steps[0].result.names == ('r',)
        assert len(outcome.front) == 1


class TestDiscovery:
    """Test the discovery pipeline on a two-source template."""

    @pytest.fixture
    def discovery_config(self, two_source_template, pair_target, postselected_weights):
        return DiscoveryConfig(
            template=two_source_template,
            target=pair_target,
            weights=postselected_weights,
            schedule=[0.85, 0.9],
            opt=OptConfig(max_iters=40, restarts=0, seed=0),
            num_orderings=4,
            pool_size=2,
            seed=1,
        )

    def test_run(self, discovery_config):
        report = discovery_run(discovery_config)
        keys = {o.key_string for o in report.orderings}
        assert keys <= {'P-Q', 'Q-P'}
        assert len(report.candidates) == len(report.orderings)
        assert report.best in {c.key for c in report.pool}
        summary = report.summary()
        assert summary['orderings_tried'] == len(report.orderings)
        assert summary['best'] == report.best

    def test_failed_optimizations_recorded(self, discovery_config):
        report = discovery_run(discovery_config, optimizer=lambda requests: [None] * len(requests))
        assert report.candidates == []
        assert report.pool == []
        assert report.best is None
        assert {f['stage'] for f in report.failures} == {'optimize'}

    def test_custom_optimizer_receives_requests(self, discovery_config):
        seen = []

        def optimizer(requests):
            seen.extend(requests)
            return [OptResult(np.asarray(r['init']), 1.0, 0.5, 1e-3, 0.0, False, message='stub') for r in requests]

        report = discovery_run(discovery_config, optimizer=optimizer)
        assert len(seen) == len(report.orderings)
        assert all(r['f0'] in (0.85, 0.9) for r in seen)
        assert [f['error'] for f in report.failures] == ['stub'] * len(seen)
