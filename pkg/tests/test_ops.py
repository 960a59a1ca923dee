"""Tests for squeezer kernels, beam splitters and experiment execution."""
import math

import numpy as np
import pytest
from scipy.linalg import expm

from squeeze_designer.errors import CapacityError, ModeError, SqueezeDesignerError
from squeeze_designer.fock import BasisMap, ModeSpace, StateVector
from squeeze_designer.ops import (
    ParamRef,
    SourceKind,
    SourceOp,
    SourceSpec,
    SqueezeParam,
    Topology,
    apply_source,
    canonical_angle,
    commute_at,
    expm_taylor,
    exp_oracle,
    first_order_matrix,
    generator,
    local_matrix,
    run_experiment,
    run_experiment_with_tangents,
    single_mode_amplitude,
    two_mode_amplitude,
)


def _two_mode(r, theta=0.0, modes=(0, 1)):
    return SourceOp(SourceKind.TWO_MODE, modes, SqueezeParam(r, theta))


def _single_mode(r, theta=0.0, mode=0):
    return SourceOp(SourceKind.SINGLE_MODE, (mode,), SqueezeParam(r, theta))


class TestParameters:
    """Test angle wrapping and squeeze parameter canonicalization."""

    def test_canonical_angle(self):
        assert canonical_angle(-math.pi) == pytest.approx(math.pi)
        assert canonical_angle(3 * math.pi) == pytest.approx(math.pi)
        assert canonical_angle(0.5) == pytest.approx(0.5)

    def test_negative_r_flips_phase(self):
        param = SqueezeParam(-0.3, 0.2).canonical()
        assert param.r == pytest.approx(0.3)
        assert param.zeta == pytest.approx(SqueezeParam(-0.3, 0.2).zeta)

    def test_non_finite_rejected(self):
        with pytest.raises(SqueezeDesignerError):
            SqueezeParam(math.inf)

    def test_source_arity(self):
        with pytest.raises(ModeError):
            SourceOp(SourceKind.TWO_MODE, (0,))
        with pytest.raises(ModeError):
            SourceOp(SourceKind.TWO_MODE, (1, 1))

    def test_transmission_range(self):
        with pytest.raises(SqueezeDesignerError):
            SourceOp(SourceKind.BEAM_SPLITTER, (0, 1), transmission=1.5)


class TestAmplitudeKernels:
    """Test closed-form amplitudes against known vacuum results."""

    def test_two_mode_pair_from_vacuum(self):
        r, theta = 0.4, 0.7
        expected = -np.exp(1j * theta) * math.tanh(r) / math.cosh(r)
        assert two_mode_amplitude(1, 0, 0, 0, SqueezeParam(r, theta)) == pytest.approx(expected)

    def test_single_mode_pair_from_vacuum(self):
        r, theta = 0.4, -0.3
        expected = -np.exp(1j * theta) * math.tanh(r) * math.sqrt(2) / 2 / math.sqrt(math.cosh(r))
        assert single_mode_amplitude(1, 0, 0, SqueezeParam(r, theta)) == pytest.approx(expected)

    def test_invalid_orders_rejected(self):
        with pytest.raises(SqueezeDesignerError):
            two_mode_amplitude(0, 2, 1, 3, SqueezeParam(0.1))

    def test_two_mode_vacuum_distribution(self):
        r = 0.3
        lam = math.tanh(r) ** 2
        state = run_experiment(ModeSpace((4, 4)), [_two_mode(r)])
        for n in range(5):
            assert abs(state.amplitude((n, n))) ** 2 == pytest.approx(lam ** n * (1 - lam))
        assert state.norm_squared() == pytest.approx(1 - lam ** 5)

    def test_zero_squeezing_is_identity(self, random_state):
        op = SourceOp(SourceKind.TWO_MODE, (0, 1), SqueezeParam(0.0))
        assert apply_source(random_state, op) is random_state


class TestOracle:
    """Compare truncated kernels with the matrix exponential of the generator."""

    @pytest.mark.slow
    @pytest.mark.parametrize("r", [0.1, 0.3, 0.6])
    @pytest.mark.parametrize("theta", [0.0, math.pi / 3, math.pi])
    def test_two_mode_matches_exponential(self, r, theta):
        op = _two_mode(r, theta)
        big = ModeSpace((40, 40))
        oracle = exp_oracle(op, big)
        local = local_matrix(op, (6, 6))
        small_map, big_map = BasisMap(ModeSpace((6, 6))), BasisMap(big)
        for p in range(4):
            for q in range(4):
                for a in range(6):
                    for b in range(6):
                        expected = oracle[big_map.index((a, b)), big_map.index((p, q))]
                        actual = local[small_map.index((a, b)), small_map.index((p, q))]
                        assert abs(actual - expected) < 1e-8

    @pytest.mark.parametrize("r", [0.2, 0.5])
    def test_single_mode_matches_exponential(self, r):
        op = _single_mode(r, 0.4)
        oracle = exp_oracle(op, ModeSpace((60,)))
        local = local_matrix(op, (8,))
        np.testing.assert_allclose(local[:9, :5], oracle[:9, :5], atol=1e-8)

    @pytest.mark.parametrize("t,phase", [(0.8, math.pi / 2), (0.3, 0.0), (0.6, 1.1)])
    def test_beam_splitter_matches_exponential(self, t, phase):
        op = SourceOp(SourceKind.BEAM_SPLITTER, (0, 1), transmission=t, phase=phase)
        space = ModeSpace((6, 6))
        oracle = exp_oracle(op, space)
        local = local_matrix(op, (6, 6))
        bmap = BasisMap(space)
        for m in range(7):
            for n in range(7 - m):
                column = bmap.index((m, n))
                np.testing.assert_allclose(local[:, column], oracle[:, column], atol=1e-10)

    def test_beam_splitter_single_photon(self):
        t = 0.6
        s = math.sqrt(1 - t * t)
        op = SourceOp(SourceKind.BEAM_SPLITTER, (0, 1), transmission=t, phase=0.0)
        state = apply_source(StateVector.from_terms(ModeSpace((1, 1)), {(1, 0): 1.0}), op)
        assert state.amplitude((1, 0)) == pytest.approx(t)
        assert state.amplitude((0, 1)) == pytest.approx(s)

    def test_balanced_splitter_suppresses_coincidences(self):
        op = SourceOp(SourceKind.BEAM_SPLITTER, (0, 1), transmission=math.sqrt(0.5), phase=math.pi / 2)
        state = apply_source(StateVector.from_terms(ModeSpace((2, 2)), {(1, 1): 1.0}), op)
        assert abs(state.amplitude((1, 1))) < 1e-12
        assert abs(state.amplitude((2, 0))) ** 2 == pytest.approx(0.5)
        assert abs(state.amplitude((0, 2))) ** 2 == pytest.approx(0.5)

    def test_generator_is_anti_hermitian(self):
        g = generator(_two_mode(0.3, 0.5), ModeSpace((3, 3)))
        np.testing.assert_allclose(g, -g.conj().T, atol=1e-14)

    def test_expm_taylor_matches_scipy(self, rng):
        a = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
        np.testing.assert_allclose(expm_taylor(a - a.conj().T), expm(a - a.conj().T), atol=1e-10)

    def test_oracle_budget(self):
        with pytest.raises(CapacityError):
            exp_oracle(_two_mode(0.1), ModeSpace((70, 70)))


class TestFirstOrder:
    """Test the low-gain operator."""

    def test_pair_amplitude_is_minus_zeta(self):
        op = _two_mode(0.01, 0.3)
        space = ModeSpace((2, 2))
        vacuum = StateVector.vacuum(space)
        low_gain = first_order_matrix(op, space) @ vacuum.amplitudes
        exact = run_experiment(space, [op])
        index = BasisMap(space).index((1, 1))
        assert low_gain[index] == pytest.approx(-op.param.zeta)
        assert abs(low_gain[index] - exact.amplitudes[index]) < 1e-5

    def test_beam_splitter_rejected(self):
        op = SourceOp(SourceKind.BEAM_SPLITTER, (0, 1), transmission=0.5)
        with pytest.raises(SqueezeDesignerError):
            first_order_matrix(op, ModeSpace((1, 1)))


class TestCommutation:
    """Test bound-parameter commutation."""

    def test_disjoint_sources_commute(self):
        assert commute_at(_two_mode(0.2, 0.1, (0, 1)), _two_mode(0.4, 1.0, (2, 3)))

    def test_same_phase_commutes(self):
        assert commute_at(_two_mode(0.2, 0.5), _two_mode(0.7, 0.5))
        assert commute_at(_two_mode(0.2, 0.5), _two_mode(0.7, 0.5 + math.pi))

    def test_different_phase_does_not_commute(self):
        assert not commute_at(_two_mode(0.2, 0.0), _two_mode(0.3, 1.0))

    def test_overlapping_different_kinds(self):
        assert not commute_at(_two_mode(0.2), _single_mode(0.2))

    def test_non_commuting_orderings_differ(self):
        space = ModeSpace((4, 4))
        a, b = _two_mode(0.3, 0.0), _single_mode(0.3, 1.0)
        forward = run_experiment(space, [a, b]).amplitudes
        backward = run_experiment(space, [b, a]).amplitudes
        assert np.max(np.abs(forward - backward)) > 1e-3

    def test_same_pair_equal_phase_states_agree(self):
        space = ModeSpace((20, 20))
        a, b = _two_mode(0.2, 0.5), _two_mode(0.3, 0.5)
        forward = run_experiment(space, [a, b]).amplitudes
        backward = run_experiment(space, [b, a]).amplitudes
        combined = run_experiment(space, [_two_mode(0.5, 0.5)]).amplitudes
        np.testing.assert_allclose(forward, backward, atol=1e-6)
        np.testing.assert_allclose(forward, combined, atol=1e-6)

    def test_opposite_phase_pair_factorizes(self):
        space = ModeSpace((4, 4, 4, 4))
        plus, minus = _two_mode(0.3, 0.0, (0, 3)), _two_mode(0.3, math.pi, (2, 1))
        forward = run_experiment(space, [plus, minus])
        backward = run_experiment(space, [minus, plus])
        np.testing.assert_allclose(forward.amplitudes, backward.amplitudes, atol=1e-12)
        pair = ModeSpace((4, 4))
        first = run_experiment(pair, [_two_mode(0.3, 0.0)])
        second = run_experiment(pair, [_two_mode(0.3, math.pi)])
        for n0 in range(5):
            for n1 in range(5):
                expected = first.amplitude((n0, n0)) * second.amplitude((n1, n1))
                assert forward.amplitude((n0, n1, n1, n0)) == pytest.approx(expected, abs=1e-12)


class TestTopology:
    """Test parameterized topologies."""

    def test_param_ref_resolution(self):
        ref = ParamRef('s', scale=0.5, offset=0.1)
        assert ref.resolve({'s': 2.0}) == pytest.approx(1.1)
        assert ParamRef.from_dict(0.3).resolve({}) == pytest.approx(0.3)

    def test_unknown_parameter_rejected(self):
        source = SourceSpec(SourceKind.TWO_MODE, (0, 1), r=ParamRef('r'))
        with pytest.raises(SqueezeDesignerError):
            Topology(ModeSpace((1, 1)), (source,), ('s',))

    def test_without_drops_unused_parameters(self, two_source_template):
        topology = two_source_template.topology.without([1])
        assert topology.parameters == ('r_P', 'th_P')
        assert len(topology.bounds) == 2

    def test_values_length_checked(self, pair_topology):
        with pytest.raises(SqueezeDesignerError):
            pair_topology.values([0.1, 0.2])

    def test_clip(self, two_source_template):
        clipped = two_source_template.topology.clip([1.5, 7.0, -0.2, 0.0])
        assert clipped.tolist() == [1.0, 7.0, 0.0, 0.0]

    def test_dict_form_preserves_state(self, two_source_template):
        topology = two_source_template.topology
        restored = Topology.from_dict(topology.to_dict())
        params = [0.2, 0.4, 0.1, -0.3]
        np.testing.assert_allclose(restored.run(params).amplitudes, topology.run(params).amplitudes)

    def test_parameter_roles(self, two_source_template):
        roles = two_source_template.topology.parameter_roles()
        assert roles == {'r_P': 'r', 'th_P': 'theta', 'r_Q': 'r', 'th_Q': 'theta'}


class TestTangents:
    """Forward-mode derivatives against central differences."""

    @staticmethod
    def _finite_differences(topology, params, step=1e-6):
        params = np.asarray(params, dtype=float)
        columns = []
        for i in range(params.size):
            up, down = params.copy(), params.copy()
            up[i] += step
            down[i] -= step
            columns.append((topology.run(up).amplitudes - topology.run(down).amplitudes) / (2 * step))
        return np.array(columns)

    def test_squeezer_tangents(self, two_source_template):
        topology = two_source_template.topology
        params = [0.25, 0.4, 0.15, -0.3]
        psi, tangents = run_experiment_with_tangents(topology, params)
        np.testing.assert_allclose(psi, topology.run(params).amplitudes, atol=1e-14)
        np.testing.assert_allclose(tangents, self._finite_differences(topology, params), atol=1e-7)

    def test_beam_splitter_tangent(self):
        sources = (
            SourceSpec(SourceKind.TWO_MODE, (0, 1), r=ParamRef('r'), label='S'),
            SourceSpec(SourceKind.BEAM_SPLITTER, (1, 2), t=ParamRef('t'), label='BS'),
        )
        topology = Topology(ModeSpace((3, 3, 3)), sources, ('r', 't'), ((0.0, math.inf), (0.0, 1.0)))
        params = [0.3, 0.6]
        _, tangents = run_experiment_with_tangents(topology, params)
        np.testing.assert_allclose(tangents, self._finite_differences(topology, params), atol=1e-7)

    def test_scaled_reference(self):
        sources = (SourceSpec(SourceKind.TWO_MODE, (0, 1), r=ParamRef('s', scale=0.5)),
                   SourceSpec(SourceKind.SINGLE_MODE, (0,), r=ParamRef('s')))
        topology = Topology(ModeSpace((4, 4)), sources, ('s',))
        _, tangents = run_experiment_with_tangents(topology, [0.3])
        np.testing.assert_allclose(tangents, self._finite_differences(topology, [0.3]), atol=1e-7)
