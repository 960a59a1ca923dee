"""Detection model: click patterns, postselection, reduced output states and counts."""
import logging
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Dict, Optional, Sequence, Tuple

import numpy as np

from squeeze_designer.config import Config
from squeeze_designer.errors import DimensionMismatchError, ModeError, NoSupportError, SqueezeDesignerError
from squeeze_designer.fock import DensityMatrix, ModeSpace, StateVector, ancilla_overlaps, basis_map, partial_trace

logger = logging.getLogger(__name__)


class DetectorType(str, Enum):
    THRESHOLD = 'threshold'
    PNR = 'pnr'
    NONE = 'none'


class PathRole(str, Enum):
    OUTPUT = 'output'
    ANCILLA = 'ancilla'


@dataclass(frozen=True)
class DetectorSpec:
    """Detector on one optical path.

    threshold: click iff the path total is >= value (value 0 means no constraint);
    pnr: the path total equals value; none: unmeasured.
    """

    type: DetectorType = DetectorType.THRESHOLD
    value: int = 1
    role: PathRole = PathRole.ANCILLA

    def __post_init__(self):
        object.__setattr__(self, 'type', DetectorType(self.type))
        object.__setattr__(self, 'role', PathRole(self.role))
        if self.value < 0:
            raise SqueezeDesignerError(f"detector value must be non-negative, got {self.value}")

    @classmethod
    def threshold(cls, tau: int = 1, role: PathRole = PathRole.ANCILLA) -> 'DetectorSpec':
        return cls(DetectorType.THRESHOLD, tau, role)

    @classmethod
    def pnr(cls, n: int, role: PathRole = PathRole.ANCILLA) -> 'DetectorSpec':
        return cls(DetectorType.PNR, n, role)

    @classmethod
    def unmeasured(cls, role: PathRole = PathRole.OUTPUT) -> 'DetectorSpec':
        return cls(DetectorType.NONE, 0, role)

    def admits(self, totals: np.ndarray) -> np.ndarray:
        if self.type is DetectorType.THRESHOLD:
            return totals >= self.value
        if self.type is DetectorType.PNR:
            return totals == self.value
        return np.ones(totals.shape, dtype=bool)

    def to_dict(self) -> dict:
        return {'type': self.type.value, 'value': self.value, 'role': self.role.value}

    @classmethod
    def from_dict(cls, data: dict) -> 'DetectorSpec':
        kind = DetectorType(data.get('type', 'threshold'))
        default = 0 if kind is DetectorType.NONE else 1
        role = data.get('role', 'output' if kind is DetectorType.NONE else 'ancilla')
        return cls(kind, int(data.get('value', default)), PathRole(role))


@dataclass(frozen=True)
class ClickPattern:
    """One DetectorSpec per path of a ModeSpace, in path order."""

    detectors: Tuple[DetectorSpec, ...]

    def __post_init__(self):
        object.__setattr__(self, 'detectors', tuple(self.detectors))

    def output_paths(self) -> Tuple[int, ...]:
        return tuple(i for i, d in enumerate(self.detectors) if d.role is PathRole.OUTPUT)

    def ancilla_paths(self) -> Tuple[int, ...]:
        return tuple(i for i, d in enumerate(self.detectors) if d.role is PathRole.ANCILLA)

    def check(self, space: ModeSpace) -> None:
        if len(self.detectors) != len(space.path_map):
            raise DimensionMismatchError(
                f"pattern has {len(self.detectors)} detectors, space has {len(space.path_map)} paths"
            )

    def output_modes(self, space: ModeSpace) -> Tuple[int, ...]:
        self.check(space)
        return tuple(sorted(m for i in self.output_paths() for m in space.path_map[i]))

    def ancilla_modes(self, space: ModeSpace) -> Tuple[int, ...]:
        self.check(space)
        return tuple(sorted(m for i in self.ancilla_paths() for m in space.path_map[i]))

    def relaxed(self, path: int, tau: int) -> 'ClickPattern':
        detectors = list(self.detectors)
        detectors[path] = DetectorSpec(detectors[path].type, tau, detectors[path].role)
        return ClickPattern(tuple(detectors))

    def to_list(self) -> list:
        return [d.to_dict() for d in self.detectors]

    @classmethod
    def from_list(cls, data: Sequence[dict]) -> 'ClickPattern':
        return cls(tuple(DetectorSpec.from_dict(d) for d in data))


class PatternPlan:
    """Admissible-basis mask and output/ancilla split for one (space, pattern) pair."""

    def __init__(self, space: ModeSpace, pattern: ClickPattern):
        pattern.check(space)
        self.space = space
        self.pattern = pattern
        self.output_modes = pattern.output_modes(space)
        self.ancilla_modes = tuple(m for m in range(space.num_modes) if m not in self.output_modes)
        if not self.output_modes:
            raise ModeError("a click pattern needs at least one output path")

    @cached_property
    def mask(self) -> np.ndarray:
        totals = basis_map(self.space).path_totals()
        admitted = np.ones(self.space.dimension, dtype=bool)
        for path, detector in enumerate(self.pattern.detectors):
            admitted &= detector.admits(totals[:, path])
        admitted.setflags(write=False)
        return admitted

    @cached_property
    def output_space(self) -> ModeSpace:
        return self.space.restrict(self.output_modes)

    @cached_property
    def ancilla_totals(self) -> np.ndarray:
        """Total photons across ancillary modes per ancilla basis label (C order)."""
        dims = [self.space.dims[m] for m in self.ancilla_modes]
        if not dims:
            return np.zeros(1, dtype=int)
        return np.indices(dims).reshape(len(dims), -1).sum(axis=0)

    def matrix(self, amplitudes: np.ndarray) -> np.ndarray:
        """Reshape flat amplitudes (or a leading batch of them) into (..., output, ancilla)."""
        batch = amplitudes.shape[:-1]
        tensor = amplitudes.reshape(batch + self.space.dims)
        offset = len(batch)
        order = list(range(offset)) + [offset + m for m in self.output_modes + self.ancilla_modes]
        out_dim = self.output_space.dimension
        return np.transpose(tensor, order).reshape(batch + (out_dim, -1))

    def target_vector(self, target: StateVector) -> np.ndarray:
        return target.embedded(self.output_space).amplitudes


def postselect(state: StateVector, pattern: ClickPattern) -> Tuple[StateVector, float]:
    """Project onto the click pattern; returns the normalized state and P."""
    plan = PatternPlan(state.space, pattern)
    raw = np.where(plan.mask, state.amplitudes, 0.0)
    probability = float(np.vdot(raw, raw).real)
    if probability < Config.NO_SUPPORT_FLOOR:
        raise NoSupportError(f"click pattern has no support (P = {probability:.3e})")
    return StateVector(state.space, raw / np.sqrt(probability)), probability


def reduced_output_state(projected: StateVector, pattern: ClickPattern) -> DensityMatrix:
    plan = PatternPlan(projected.space, pattern)
    return partial_trace(projected, plan.output_modes)


def output_fidelity(projected: StateVector, pattern: ClickPattern, target: StateVector) -> float:
    """<target|Tr_anc(rho')|target> from ancilla overlaps, without a dense rho."""
    plan = PatternPlan(projected.space, pattern)
    target = target.embedded(plan.output_space)
    overlaps = ancilla_overlaps(projected, target, plan.output_modes)
    return float(np.vdot(overlaps, overlaps).real)


def counts_per_second(probability: float) -> float:
    return probability * Config.REPETITION_RATE_HZ


def ancilla_sector_weights(projected: StateVector, pattern: ClickPattern, target: StateVector) -> Dict[int, float]:
    """Absolute fidelity contribution per total ancilla photon number."""
    plan = PatternPlan(projected.space, pattern)
    if not plan.ancilla_modes:
        return {0: output_fidelity(projected, pattern, target)}
    target_amps = plan.target_vector(target)
    overlaps = target_amps.conj() @ plan.matrix(projected.amplitudes)
    weights = np.abs(overlaps) ** 2
    sectors = np.bincount(plan.ancilla_totals, weights=weights)
    return {int(n): float(w) for n, w in enumerate(sectors)}


def fidelity_by_ancilla_sector(projected: StateVector, pattern: ClickPattern,
                               target: StateVector) -> Dict[int, float]:
    """Fraction of the fidelity carried by each total ancilla photon number."""
    weights = ancilla_sector_weights(projected, pattern, target)
    if len(weights) == 1 and 0 in weights:
        return {0: 1.0}
    total = sum(weights.values())
    if total <= 0.0:
        logger.warning("fidelity is zero, sector fractions undefined")
        return {n: 0.0 for n in weights}
    return {n: w / total for n, w in weights.items()}


def measure(state: StateVector, pattern: ClickPattern, target: StateVector,
            plan: Optional[PatternPlan] = None) -> Tuple[float, float]:
    """(F, P) of a raw (unnormalized) experiment state."""
    plan = plan or PatternPlan(state.space, pattern)
    raw = np.where(plan.mask, state.amplitudes, 0.0)
    probability = float(np.vdot(raw, raw).real)
    if probability < Config.NO_SUPPORT_FLOOR:
        raise NoSupportError(f"click pattern has no support (P = {probability:.3e})")
    overlaps = plan.target_vector(target).conj() @ plan.matrix(raw)
    return float(np.vdot(overlaps, overlaps).real) / probability, probability
