"""Truncated multi-mode Fock space: basis, pure states, reduced states, fidelity."""
import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Iterable, Optional, Sequence, Tuple

import numpy as np

from squeeze_designer.config import Config
from squeeze_designer.errors import (
    CapacityError,
    DimensionMismatchError,
    ModeError,
    SqueezeDesignerError,
)

logger = logging.getLogger(__name__)

Occupancy = Tuple[int, ...]

_INDEX_LIMIT = int(np.iinfo(np.intp).max)


@dataclass(frozen=True)
class ModeSpace:
    """Per-mode cutoffs plus the grouping of modes into optical paths.

    Cutoffs are inclusive maximum photon numbers. When no path map is given
    every mode is its own path.
    """

    cutoffs: Tuple[int, ...]
    path_map: Tuple[Tuple[int, ...], ...] = ()

    def __post_init__(self):
        cutoffs = tuple(int(c) for c in self.cutoffs)
        if not cutoffs:
            raise ModeError("a ModeSpace needs at least one mode")
        if any(c < 0 for c in cutoffs):
            raise ModeError(f"cutoffs must be non-negative, got {cutoffs}")
        paths = tuple(tuple(int(m) for m in p) for p in self.path_map) or tuple(
            (m,) for m in range(len(cutoffs))
        )
        seen = [m for p in paths for m in p]
        if any(len(p) == 0 for p in paths):
            raise ModeError("paths must not be empty")
        if sorted(seen) != list(range(len(cutoffs))):
            raise ModeError(
                f"paths must be disjoint and cover all {len(cutoffs)} modes, got {paths}"
            )
        dimension = 1
        for c in cutoffs:
            dimension *= c + 1
        if dimension > _INDEX_LIMIT:
            raise CapacityError(
                f"dimension {dimension} exceeds the platform index range", size=dimension
            )
        object.__setattr__(self, 'cutoffs', cutoffs)
        object.__setattr__(self, 'path_map', paths)

    @classmethod
    def uniform(cls, num_modes: int, cutoff: int, path_map: Sequence[Sequence[int]] = ()):
        return cls(tuple([cutoff] * num_modes), tuple(tuple(p) for p in path_map))

    @property
    def num_modes(self) -> int:
        return len(self.cutoffs)

    @property
    def dims(self) -> Tuple[int, ...]:
        return tuple(c + 1 for c in self.cutoffs)

    @property
    def dimension(self) -> int:
        return int(np.prod(self.dims, dtype=object))

    def path_of(self, mode: int) -> int:
        for i, path in enumerate(self.path_map):
            if mode in path:
                return i
        raise ModeError(f"mode {mode} is outside the space")

    def check_modes(self, modes: Iterable[int]) -> Tuple[int, ...]:
        modes = tuple(int(m) for m in modes)
        bad = [m for m in modes if m < 0 or m >= self.num_modes]
        if bad:
            raise ModeError(f"modes {bad} are outside a {self.num_modes}-mode space")
        return modes

    def restrict(self, keep: Iterable[int]) -> 'ModeSpace':
        """Space of the kept modes (ascending), paths re-indexed."""
        keep = sorted(set(self.check_modes(keep)))
        if not keep:
            raise ModeError("cannot restrict to an empty mode set")
        position = {m: i for i, m in enumerate(keep)}
        paths = []
        for path in self.path_map:
            kept = tuple(position[m] for m in path if m in position)
            if kept:
                paths.append(kept)
        return ModeSpace(tuple(self.cutoffs[m] for m in keep), tuple(paths))

    def with_cutoffs(self, cutoffs: Sequence[int]) -> 'ModeSpace':
        return ModeSpace(tuple(cutoffs), self.path_map)

    def raised(self, increment: int) -> 'ModeSpace':
        return self.with_cutoffs([c + increment for c in self.cutoffs])

    def check_budget(self, budget: Optional[int] = None) -> None:
        budget = Config.MAX_DIMENSION if budget is None else budget
        if self.dimension > budget:
            raise CapacityError(
                f"dimension {self.dimension} exceeds the memory budget of {budget} amplitudes",
                size=self.dimension,
            )


class BasisMap:
    """Bijection between occupancies and flat indices.

    Mixed radix with mode 0 most significant (C order), so serialized
    amplitude vectors keep their meaning across runs.
    """

    def __init__(self, space: ModeSpace):
        self.space = space
        self._occupancies = None

    def index(self, occupancy: Sequence[int]) -> int:
        occupancy = tuple(int(n) for n in occupancy)
        if len(occupancy) != self.space.num_modes:
            raise ModeError(
                f"occupancy has {len(occupancy)} entries, space has {self.space.num_modes} modes"
            )
        for n, c in zip(occupancy, self.space.cutoffs):
            if n < 0 or n > c:
                raise ModeError(f"occupancy {occupancy} violates cutoffs {self.space.cutoffs}")
        return int(np.ravel_multi_index(occupancy, self.space.dims))

    def decode(self, index: int) -> Occupancy:
        if index < 0 or index >= self.space.dimension:
            raise ModeError(f"index {index} outside dimension {self.space.dimension}")
        return tuple(int(n) for n in np.unravel_index(index, self.space.dims))

    @property
    def occupancies(self) -> np.ndarray:
        """(dimension, num_modes) table of every basis label, read-only."""
        if self._occupancies is None:
            grids = np.indices(self.space.dims, dtype=np.int16)
            table = grids.reshape(self.space.num_modes, -1).T.copy()
            table.setflags(write=False)
            self._occupancies = table
        return self._occupancies

    def path_totals(self) -> np.ndarray:
        """(dimension, num_paths) photon count per optical path."""
        occ = self.occupancies
        return np.stack([occ[:, list(p)].sum(axis=1) for p in self.space.path_map], axis=1)


@lru_cache(maxsize=64)
def basis_map(space: ModeSpace) -> BasisMap:
    return BasisMap(space)


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=np.complex128, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class StateVector:
    """Complex amplitudes over a ModeSpace (flat, C order)."""

    space: ModeSpace
    amplitudes: np.ndarray = field(repr=False)

    def __post_init__(self):
        amplitudes = np.asarray(self.amplitudes)
        if amplitudes.shape != (self.space.dimension,):
            raise DimensionMismatchError(
                f"expected {self.space.dimension} amplitudes, got shape {amplitudes.shape}"
            )
        if not np.all(np.isfinite(amplitudes)):
            raise SqueezeDesignerError("state amplitudes must be finite")
        object.__setattr__(self, 'amplitudes', _frozen(amplitudes))

    @classmethod
    def vacuum(cls, space: ModeSpace) -> 'StateVector':
        space.check_budget()
        amplitudes = np.zeros(space.dimension, dtype=np.complex128)
        amplitudes[0] = 1.0
        return cls(space, amplitudes)

    @classmethod
    def from_terms(cls, space: ModeSpace, terms: Dict[Sequence[int], complex],
                   normalize: bool = False) -> 'StateVector':
        bmap = basis_map(space)
        amplitudes = np.zeros(space.dimension, dtype=np.complex128)
        for occupancy, value in terms.items():
            amplitudes[bmap.index(occupancy)] += value
        state = cls(space, amplitudes)
        return state.normalized() if normalize else state

    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape(self.space.dims)

    def norm_squared(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def normalized(self) -> 'StateVector':
        norm = np.sqrt(self.norm_squared())
        if norm == 0.0:
            raise SqueezeDesignerError("cannot normalize the zero vector")
        return StateVector(self.space, self.amplitudes / norm)

    def amplitude(self, occupancy: Sequence[int]) -> complex:
        return complex(self.amplitudes[basis_map(self.space).index(occupancy)])

    def embedded(self, space: ModeSpace) -> 'StateVector':
        """Zero-pad into a space with the same modes and cutoffs at least as large."""
        if space.num_modes != self.space.num_modes or any(
            c < own for c, own in zip(space.cutoffs, self.space.cutoffs)
        ):
            raise DimensionMismatchError(
                f"cannot embed cutoffs {self.space.cutoffs} into {space.cutoffs}"
            )
        if space.cutoffs == self.space.cutoffs:
            return self
        tensor = np.zeros(space.dims, dtype=np.complex128)
        tensor[tuple(slice(0, d) for d in self.space.dims)] = self.tensor()
        return StateVector(space, tensor.reshape(-1))

    def to_snapshot(self) -> dict:
        return {
            'cutoffs': list(self.space.cutoffs),
            'path_map': [list(p) for p in self.space.path_map],
            'amplitudes': [[float(a.real), float(a.imag)] for a in self.amplitudes],
        }

    @classmethod
    def from_snapshot(cls, data: dict) -> 'StateVector':
        space = ModeSpace(tuple(data['cutoffs']), tuple(tuple(p) for p in data['path_map']))
        pairs = np.asarray(data['amplitudes'], dtype=float).reshape(-1, 2)
        return cls(space, pairs[:, 0] + 1j * pairs[:, 1])

    def to_json(self) -> str:
        return json.dumps(self.to_snapshot())


@dataclass(frozen=True)
class DensityMatrix:
    """Reduced state on the kept modes."""

    space: ModeSpace
    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=np.complex128)
        n = self.space.dimension
        if matrix.shape != (n, n):
            raise DimensionMismatchError(f"expected a {n}x{n} matrix, got {matrix.shape}")
        if np.max(np.abs(matrix - matrix.conj().T), initial=0.0) > Config.HERMITIAN_TOL:
            raise SqueezeDesignerError("density matrix is not Hermitian")
        trace = float(np.trace(matrix).real)
        if trace < -Config.HERMITIAN_TOL or trace > 1.0 + Config.HERMITIAN_TOL:
            raise SqueezeDesignerError(f"density matrix trace {trace} outside [0, 1]")
        object.__setattr__(self, 'matrix', _frozen(matrix))

    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.matrix).min())

    def is_positive_semidefinite(self, tol: float = Config.PSD_TOL) -> bool:
        return self.min_eigenvalue() >= -tol


def split_modes(state: StateVector, keep: Iterable[int]) -> Tuple[np.ndarray, Tuple[int, ...], Tuple[int, ...]]:
    """Reshape a state into a (kept, traced) amplitude matrix."""
    keep = tuple(sorted(set(state.space.check_modes(keep))))
    if not keep:
        raise ModeError("keep must name at least one mode")
    rest = tuple(m for m in range(state.space.num_modes) if m not in keep)
    tensor = np.transpose(state.tensor(), keep + rest)
    kept_dim = int(np.prod([state.space.dims[m] for m in keep]))
    return tensor.reshape(kept_dim, -1), keep, rest


def partial_trace(state: StateVector, keep: Iterable[int]) -> DensityMatrix:
    """Trace out every mode not in ``keep``."""
    matrix, keep, _ = split_modes(state, keep)
    if matrix.shape[0] > Config.MAX_DENSITY_DIMENSION:
        raise CapacityError(
            f"reduced space of dimension {matrix.shape[0]} is too large for a dense density matrix",
            size=matrix.shape[0],
        )
    rho = matrix @ matrix.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    return DensityMatrix(state.space.restrict(keep), rho)


def fidelity(rho: DensityMatrix, target: StateVector) -> float:
    """<psi|rho|psi> for a normalized target on the same space."""
    if rho.space.cutoffs != target.space.cutoffs:
        raise DimensionMismatchError(
            f"density matrix cutoffs {rho.space.cutoffs} differ from target cutoffs {target.space.cutoffs}"
        )
    value = np.vdot(target.amplitudes, rho.matrix @ target.amplitudes)
    if abs(value.imag) > 1e-12:
        raise SqueezeDesignerError(f"fidelity has an imaginary part {value.imag}")
    return float(value.real)


def ancilla_overlaps(state: StateVector, target: StateVector, keep: Iterable[int]) -> np.ndarray:
    """<target (x) a|state> for every basis label a of the traced modes.

    Summing the squared magnitudes gives <target|Tr_rest|state><state||target>
    without building the reduced density matrix.
    """
    matrix, keep, _ = split_modes(state, keep)
    if tuple(state.space.cutoffs[m] for m in keep) != target.space.cutoffs:
        raise DimensionMismatchError(
            f"target cutoffs {target.space.cutoffs} do not match kept modes {keep}"
        )
    return target.amplitudes.conj() @ matrix
