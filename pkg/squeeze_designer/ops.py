"""Fock-basis squeeze-operator kernels, beam splitters and experiment execution.

Two-mode squeezer S2(zeta) = exp(zeta* ab - zeta a^dag b^dag) and single-mode
squeezer S1(zeta) = exp((zeta* a^2 - zeta a^dag^2) / 2) act through their
normal-ordered amplitudes; the output is exact inside the truncated space and
everything pushed above a cutoff is dropped.
"""
import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from functools import lru_cache
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import gammaln

from squeeze_designer.config import Config
from squeeze_designer.errors import CapacityError, ModeError, SqueezeDesignerError
from squeeze_designer.fock import ModeSpace, StateVector

logger = logging.getLogger(__name__)

SYMMETRIC_PHASE = math.pi / 2


def canonical_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]."""
    wrapped = math.remainder(float(theta), 2.0 * math.pi)
    if wrapped <= -math.pi:
        wrapped += 2.0 * math.pi
    return wrapped


@dataclass(frozen=True)
class SqueezeParam:
    r: float
    theta: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.r) and math.isfinite(self.theta)):
            raise SqueezeDesignerError(f"squeeze parameters must be finite, got r={self.r}, theta={self.theta}")

    @property
    def zeta(self) -> complex:
        return self.r * complex(math.cos(self.theta), math.sin(self.theta))

    @classmethod
    def from_zeta(cls, zeta: complex) -> 'SqueezeParam':
        return cls(abs(zeta), canonical_angle(math.atan2(zeta.imag, zeta.real)) if zeta else 0.0)

    def canonical(self) -> 'SqueezeParam':
        """Same zeta with r >= 0 and theta in (-pi, pi]."""
        if self.r < 0:
            return SqueezeParam(-self.r, canonical_angle(self.theta + math.pi))
        return SqueezeParam(self.r, canonical_angle(self.theta))


class SourceKind(str, Enum):
    TWO_MODE = 'two_mode'
    SINGLE_MODE = 'single_mode'
    BEAM_SPLITTER = 'beam_splitter'

    @property
    def arity(self) -> int:
        return 1 if self is SourceKind.SINGLE_MODE else 2

    @property
    def is_squeezer(self) -> bool:
        return self is not SourceKind.BEAM_SPLITTER


@dataclass(frozen=True)
class SourceOp:
    """One squeezer or beam splitter bound to concrete mode indices and values."""

    kind: SourceKind
    modes: Tuple[int, ...]
    param: Optional[SqueezeParam] = None
    transmission: float = 1.0
    phase: float = SYMMETRIC_PHASE
    label: str = ''

    def __post_init__(self):
        kind = SourceKind(self.kind)
        modes = tuple(int(m) for m in self.modes)
        object.__setattr__(self, 'kind', kind)
        object.__setattr__(self, 'modes', modes)
        if len(modes) != kind.arity:
            raise ModeError(f"{kind.value} acts on {kind.arity} modes, got {modes}")
        if len(set(modes)) != len(modes):
            raise ModeError(f"{kind.value} needs distinct modes, got {modes}")
        if kind.is_squeezer:
            if self.param is None:
                object.__setattr__(self, 'param', SqueezeParam(0.0))
        elif not 0.0 <= self.transmission <= 1.0:
            raise SqueezeDesignerError(f"transmission must lie in [0, 1], got {self.transmission}")

    @property
    def is_identity(self) -> bool:
        if self.kind.is_squeezer:
            return self.param.r == 0.0
        return self.transmission == 1.0


# ---------------------------------------------------------------------------
# amplitude kernels


def _log_binom(n, k):
    n = np.asarray(n, dtype=float)
    k = np.asarray(k, dtype=float)
    return gammaln(n + 1.0) - gammaln(k + 1.0) - gammaln(n - k + 1.0)


def _scalar_kernel(k: int, n: int, m: float, log_weight: float, zeta: SqueezeParam) -> complex:
    r, theta = zeta.r, zeta.theta
    t = math.tanh(r)
    sc = math.sinh(r) * math.cosh(r)
    magnitude = t ** k * sc ** n * math.cosh(r) ** (-m) * math.exp(log_weight)
    return magnitude * (-1) ** k * complex(math.cos((k - n) * theta), math.sin((k - n) * theta))


def two_mode_amplitude(k: int, n: int, p: int, q: int, zeta: SqueezeParam) -> complex:
    """<p-n+k, q-n+k| S2(zeta) |p, q> contribution of k created and n absorbed pairs."""
    if k < 0 or n < 0 or n > min(p, q):
        raise SqueezeDesignerError(f"invalid orders k={k}, n={n} for occupancies ({p}, {q})")
    log_weight = 0.5 * float(
        _log_binom(p, n) + _log_binom(q, n) + _log_binom(p - n + k, k) + _log_binom(q - n + k, k)
    )
    return _scalar_kernel(k, n, p + q + 1, log_weight, zeta)


def single_mode_amplitude(k: int, n: int, p: int, zeta: SqueezeParam) -> complex:
    """<p+2(k-n)| S1(zeta) |p> contribution of k created and n absorbed pairs."""
    if k < 0 or n < 0 or n > p // 2:
        raise SqueezeDesignerError(f"invalid orders k={k}, n={n} for occupancy {p}")
    log_weight = 0.5 * float(
        _log_binom(2 * n, n) + _log_binom(2 * k, k) + _log_binom(p, 2 * n) + _log_binom(p + 2 * (k - n), 2 * k)
    ) - (k + n) * math.log(2.0)
    return _scalar_kernel(k, n, p + 0.5, log_weight, zeta)


@dataclass(frozen=True)
class _TermTable:
    size: int
    out: np.ndarray
    inp: np.ndarray
    k: np.ndarray
    n: np.ndarray
    m: np.ndarray
    weight: np.ndarray


@lru_cache(maxsize=None)
def _two_mode_terms(c1: int, c2: int) -> _TermTable:
    rows = []
    for p in range(c1 + 1):
        for q in range(c2 + 1):
            for n in range(min(p, q) + 1):
                kmax = min(c1 - (p - n), c2 - (q - n))
                for k in range(kmax + 1):
                    rows.append(((p - n + k) * (c2 + 1) + (q - n + k), p * (c2 + 1) + q, k, n, p, q))
    out, inp, k, n, p, q = (np.array(col) for col in zip(*rows))
    log_weight = 0.5 * (_log_binom(p, n) + _log_binom(q, n) + _log_binom(p - n + k, k) + _log_binom(q - n + k, k))
    return _TermTable((c1 + 1) * (c2 + 1), out, inp, k, n, (p + q + 1).astype(float), np.exp(log_weight))


@lru_cache(maxsize=None)
def _single_mode_terms(c: int) -> _TermTable:
    rows = []
    for p in range(c + 1):
        for n in range(p // 2 + 1):
            kmax = (c - (p - 2 * n)) // 2
            for k in range(kmax + 1):
                rows.append((p + 2 * (k - n), p, k, n))
    out, inp, k, n = (np.array(col) for col in zip(*rows))
    log_weight = 0.5 * (
        _log_binom(2 * n, n) + _log_binom(2 * k, k) + _log_binom(inp, 2 * n) + _log_binom(out, 2 * k)
    ) - (k + n) * math.log(2.0)
    return _TermTable(c + 1, out, inp, k, n, inp + 0.5, np.exp(log_weight))


def _squeeze_values(terms: _TermTable, r: float, theta: float, derivatives: bool = False):
    t, ch, sh = math.tanh(r), math.cosh(r), math.sinh(r)
    sc = sh * ch
    k, n, m = terms.k, terms.n, terms.m
    t_k = np.power(t, k)
    sc_n = np.power(sc, n)
    ch_m = np.power(ch, -m)
    phase = np.power(-1.0, k) * np.exp(1j * (k - n) * theta)
    values = t_k * sc_n * ch_m * terms.weight * phase
    if not derivatives:
        return values
    d_tk = np.where(k > 0, k * np.power(t, np.maximum(k - 1, 0)) / (ch * ch), 0.0)
    d_scn = np.where(n > 0, n * np.power(sc, np.maximum(n - 1, 0)) * (ch * ch + sh * sh), 0.0)
    d_mag = (d_tk * sc_n + t_k * d_scn) * ch_m - m * t * t_k * sc_n * ch_m
    d_r = d_mag * terms.weight * phase
    d_theta = 1j * (k - n) * values
    return values, d_r, d_theta


@dataclass(frozen=True)
class _SplitterTable:
    size: int
    out: np.ndarray
    inp: np.ndarray
    coef: np.ndarray
    alpha: np.ndarray  # power of t
    beta: np.ndarray  # power of s
    nu: np.ndarray  # power of e^{i phase}


@lru_cache(maxsize=None)
def _beam_splitter_terms(c1: int, c2: int) -> _SplitterTable:
    rows = []
    for m in range(c1 + 1):
        for n in range(c2 + 1):
            for j in range(m + 1):
                for l in range(n + 1):
                    m_out, n_out = j + l, m + n - j - l
                    if m_out > c1 or n_out > c2:
                        continue
                    log_norm = 0.5 * (
                        math.lgamma(m_out + 1) + math.lgamma(n_out + 1) - math.lgamma(m + 1) - math.lgamma(n + 1)
                    )
                    coef = math.comb(m, j) * math.comb(n, l) * (-1) ** l * math.exp(log_norm)
                    rows.append((m_out * (c2 + 1) + n_out, m * (c2 + 1) + n, coef, j + n - l, m - j + l, m - j - l))
    out, inp, coef, alpha, beta, nu = (np.array(col) for col in zip(*rows))
    return _SplitterTable((c1 + 1) * (c2 + 1), out, inp, coef.astype(float), alpha, beta, nu)


def _splitter_values(terms: _SplitterTable, t: float, phase: float, derivatives: bool = False):
    s = math.sqrt(max(0.0, 1.0 - t * t))
    rot = np.exp(1j * phase * terms.nu)
    t_a = np.power(t, terms.alpha)
    s_b = np.power(s, terms.beta)
    values = terms.coef * t_a * s_b * rot
    if not derivatives:
        return values
    with np.errstate(divide='ignore', invalid='ignore'):
        first = np.where(terms.alpha > 0, terms.alpha * np.power(t, np.maximum(terms.alpha - 1, 0)) * s_b, 0.0)
        second = np.where(terms.beta > 0, terms.beta * np.power(t, terms.alpha + 1) * np.power(s, terms.beta - 2.0), 0.0)
    return values, terms.coef * (first - second) * rot


def _assemble(size: int, out: np.ndarray, inp: np.ndarray, values: np.ndarray) -> np.ndarray:
    matrix = np.zeros((size, size), dtype=np.complex128)
    np.add.at(matrix, (out, inp), values)
    return matrix


def local_matrix(op: SourceOp, cutoffs: Sequence[int], derivatives: bool = False):
    """Matrix of ``op`` on the product space of its own modes.

    With ``derivatives`` the result is ``(U, [dU/dr, dU/dtheta])`` for squeezers
    and ``(U, [dU/dt])`` for beam splitters.
    """
    if op.kind is SourceKind.BEAM_SPLITTER:
        terms = _beam_splitter_terms(*cutoffs)
        result = _splitter_values(terms, op.transmission, op.phase, derivatives)
        if not derivatives:
            return _assemble(terms.size, terms.out, terms.inp, result)
        values, d_t = result
        return _assemble(terms.size, terms.out, terms.inp, values), [_assemble(terms.size, terms.out, terms.inp, d_t)]
    if op.kind is SourceKind.TWO_MODE:
        terms = _two_mode_terms(*cutoffs)
    else:
        terms = _single_mode_terms(*cutoffs)
    result = _squeeze_values(terms, op.param.r, op.param.theta, derivatives)
    if not derivatives:
        return _assemble(terms.size, terms.out, terms.inp, result)
    values, d_r, d_theta = result
    return (
        _assemble(terms.size, terms.out, terms.inp, values),
        [_assemble(terms.size, terms.out, terms.inp, d_r), _assemble(terms.size, terms.out, terms.inp, d_theta)],
    )


def apply_local(tensor: np.ndarray, matrix: np.ndarray, modes: Sequence[int], batch: int = 0) -> np.ndarray:
    """Contract a local matrix into the ``modes`` axes of a state tensor.

    ``batch`` leading axes (e.g. one per tangent direction) are carried along.
    """
    axes = [batch + m for m in modes]
    local = [tensor.shape[a] for a in axes]
    shaped = matrix.reshape(local + local)
    k = len(modes)
    result = np.tensordot(shaped, tensor, axes=(list(range(k, 2 * k)), axes))
    return np.moveaxis(result, list(range(k)), axes)


def _check_op(space: ModeSpace, op: SourceOp) -> Tuple[int, ...]:
    try:
        modes = space.check_modes(op.modes)
    except ModeError as e:
        raise ModeError(f"{op.label or op.kind.value}: {e}") from e
    return modes


def apply_source(state: StateVector, op: SourceOp) -> StateVector:
    """Apply one squeezer or beam splitter; amplitude above the cutoffs is dropped."""
    modes = _check_op(state.space, op)
    if op.is_identity:
        return state
    cutoffs = [state.space.cutoffs[m] for m in modes]
    matrix = local_matrix(op, cutoffs)
    tensor = apply_local(state.tensor(), matrix, modes)
    return StateVector(state.space, tensor.reshape(-1))


def run_experiment(space: ModeSpace, ops: Sequence[SourceOp]) -> StateVector:
    """(prod_ordered S_j)|vac>, applying ``ops`` left to right."""
    state = StateVector.vacuum(space)
    for op in ops:
        state = apply_source(state, op)
    return state


# ---------------------------------------------------------------------------
# low-gain operator and matrix-exponential oracle


def _ladder(cutoff: int) -> np.ndarray:
    return np.diag(np.sqrt(np.arange(1, cutoff + 1, dtype=float)), k=1).astype(np.complex128)


def _embed(space: ModeSpace, factors: Dict[int, np.ndarray]) -> np.ndarray:
    result = np.ones((1, 1), dtype=np.complex128)
    for mode, dim in enumerate(space.dims):
        result = np.kron(result, factors.get(mode, np.eye(dim, dtype=np.complex128)))
    return result


def generator(op: SourceOp, space: ModeSpace) -> np.ndarray:
    """Anti-Hermitian generator G with exp(G) equal to the op on the full space."""
    modes = space.check_modes(op.modes)
    if op.kind is SourceKind.SINGLE_MODE:
        a = _embed(space, {modes[0]: _ladder(space.cutoffs[modes[0]])})
        zeta = op.param.zeta
        return 0.5 * (np.conj(zeta) * a @ a - zeta * a.conj().T @ a.conj().T)
    a = _embed(space, {modes[0]: _ladder(space.cutoffs[modes[0]])})
    b = _embed(space, {modes[1]: _ladder(space.cutoffs[modes[1]])})
    if op.kind is SourceKind.TWO_MODE:
        zeta = op.param.zeta
        return np.conj(zeta) * a @ b - zeta * a.conj().T @ b.conj().T
    chi = math.acos(op.transmission)
    rot = complex(math.cos(op.phase), math.sin(op.phase))
    return chi * (rot * a @ b.conj().T - np.conj(rot) * a.conj().T @ b)


def expm_taylor(matrix: np.ndarray, tol: float = 1e-18, max_terms: int = 60) -> np.ndarray:
    """Matrix exponential by scaled Taylor series and repeated squaring."""
    norm = np.linalg.norm(matrix, 1)
    squarings = max(0, int(math.ceil(math.log2(norm))) + 1) if norm > 0.5 else 0
    scaled = matrix / (2.0 ** squarings)
    result = np.eye(matrix.shape[0], dtype=np.complex128)
    term = np.eye(matrix.shape[0], dtype=np.complex128)
    for j in range(1, max_terms + 1):
        term = term @ scaled / j
        result = result + term
        if np.linalg.norm(term, 1) < tol:
            break
    for _ in range(squarings):
        result = result @ result
    return result


def exp_oracle(op: SourceOp, space: ModeSpace) -> np.ndarray:
    """Dense exp(G) on the truncated space; validation only."""
    if space.dimension > Config.MAX_ORACLE_DIMENSION:
        raise CapacityError(
            f"oracle space of dimension {space.dimension} exceeds {Config.MAX_ORACLE_DIMENSION}",
            size=space.dimension,
        )
    return expm_taylor(generator(op, space))


def first_order_matrix(op: SourceOp, space: ModeSpace) -> np.ndarray:
    """Low-gain operator 1 + G (squeezers only)."""
    if not op.kind.is_squeezer:
        raise SqueezeDesignerError("the first-order expansion is defined for squeezers only")
    if space.dimension > Config.MAX_ORACLE_DIMENSION:
        raise CapacityError(f"space of dimension {space.dimension} is too large", size=space.dimension)
    return np.eye(space.dimension, dtype=np.complex128) + generator(op, space)


def commute_at(a: SourceOp, b: SourceOp, tol: float = 1e-12) -> bool:
    """Bound-parameter commutation of two squeezers."""
    if not set(a.modes) & set(b.modes):
        return True
    if a.kind is not b.kind or not a.kind.is_squeezer or set(a.modes) != set(b.modes):
        return False
    za, zb = a.param.zeta, b.param.zeta
    return abs((za * np.conj(zb)).imag) <= tol * max(1.0, abs(za) * abs(zb))


# ---------------------------------------------------------------------------
# parameterized topologies


@dataclass(frozen=True)
class ParamRef:
    """value = scale * params[name] + offset; a constant when ``name`` is None."""

    name: Optional[str] = None
    scale: float = 1.0
    offset: float = 0.0

    def resolve(self, values: Mapping[str, float]) -> float:
        if self.name is None:
            return self.offset
        return self.scale * values[self.name] + self.offset

    def to_dict(self) -> dict:
        if self.name is None:
            return {'value': self.offset}
        data = {'param': self.name}
        if self.scale != 1.0:
            data['scale'] = self.scale
        if self.offset != 0.0:
            data['offset'] = self.offset
        return data

    @classmethod
    def from_dict(cls, data: Union[dict, float, int, None], default: float = 0.0) -> 'ParamRef':
        if data is None:
            return cls(None, 1.0, default)
        if isinstance(data, (int, float)):
            return cls(None, 1.0, float(data))
        if 'param' in data:
            return cls(data['param'], float(data.get('scale', 1.0)), float(data.get('offset', 0.0)))
        return cls(None, 1.0, float(data['value']))


@dataclass(frozen=True)
class SourceSpec:
    """A source whose numbers come from a parameter vector."""

    kind: SourceKind
    modes: Tuple[int, ...]
    r: ParamRef = ParamRef()
    theta: ParamRef = ParamRef()
    t: ParamRef = ParamRef(None, 1.0, 1.0)
    phase: float = SYMMETRIC_PHASE
    label: str = ''

    def __post_init__(self):
        object.__setattr__(self, 'kind', SourceKind(self.kind))
        object.__setattr__(self, 'modes', tuple(int(m) for m in self.modes))

    def bind(self, values: Mapping[str, float]) -> SourceOp:
        if self.kind.is_squeezer:
            param = SqueezeParam(self.r.resolve(values), self.theta.resolve(values))
            return SourceOp(self.kind, self.modes, param, label=self.label)
        t = min(1.0, max(0.0, self.t.resolve(values)))
        return SourceOp(self.kind, self.modes, transmission=t, phase=self.phase, label=self.label)

    def refs(self) -> List[ParamRef]:
        return [self.r, self.theta] if self.kind.is_squeezer else [self.t]

    def to_dict(self) -> dict:
        data = {'kind': self.kind.value, 'modes': list(self.modes)}
        if self.label:
            data['label'] = self.label
        if self.kind.is_squeezer:
            data['r'] = self.r.to_dict()
            data['theta'] = self.theta.to_dict()
        else:
            data['t'] = self.t.to_dict()
            data['phase'] = self.phase
        return data

    @classmethod
    def from_dict(cls, data: dict) -> 'SourceSpec':
        kind = SourceKind(data['kind'])
        return cls(
            kind,
            tuple(data['modes']),
            r=ParamRef.from_dict(data.get('r')),
            theta=ParamRef.from_dict(data.get('theta')),
            t=ParamRef.from_dict(data.get('t'), default=1.0),
            phase=float(data.get('phase', SYMMETRIC_PHASE)),
            label=data.get('label', ''),
        )


@dataclass(frozen=True)
class Topology:
    """An ordered sequence of sources on a ModeSpace plus its free parameters."""

    space: ModeSpace
    sources: Tuple[SourceSpec, ...]
    parameters: Tuple[str, ...] = ()
    bounds: Tuple[Tuple[float, float], ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'sources', tuple(self.sources))
        names = tuple(self.parameters) or tuple(
            dict.fromkeys(ref.name for s in self.sources for ref in s.refs() if ref.name is not None)
        )
        object.__setattr__(self, 'parameters', names)
        bounds = tuple(tuple(b) for b in self.bounds) or tuple((-math.inf, math.inf) for _ in names)
        if len(bounds) != len(names):
            raise SqueezeDesignerError("one bound pair per parameter is required")
        object.__setattr__(self, 'bounds', bounds)
        for source in self.sources:
            self.space.check_modes(source.modes)
            for ref in source.refs():
                if ref.name is not None and ref.name not in names:
                    raise SqueezeDesignerError(f"source {source.label!r} references unknown parameter {ref.name!r}")

    @property
    def num_parameters(self) -> int:
        return len(self.parameters)

    def values(self, params: Union[Sequence[float], Mapping[str, float]]) -> Dict[str, float]:
        if isinstance(params, Mapping):
            return {name: float(params[name]) for name in self.parameters}
        params = np.asarray(params, dtype=float).reshape(-1)
        if params.size != len(self.parameters):
            raise SqueezeDesignerError(f"expected {len(self.parameters)} parameters, got {params.size}")
        return dict(zip(self.parameters, params.tolist()))

    def bind(self, params) -> List[SourceOp]:
        values = self.values(params)
        return [source.bind(values) for source in self.sources]

    def run(self, params) -> StateVector:
        return run_experiment(self.space, self.bind(params))

    def reordered(self, order: Sequence[int]) -> 'Topology':
        return replace(self, sources=tuple(self.sources[i] for i in order))

    def without(self, indices: Sequence[int]) -> 'Topology':
        """Drop sources; parameters nothing references any more are dropped too."""
        drop = set(indices)
        sources = tuple(s for i, s in enumerate(self.sources) if i not in drop)
        used = {ref.name for s in sources for ref in s.refs() if ref.name is not None}
        keep = [i for i, name in enumerate(self.parameters) if name in used]
        return Topology(
            self.space,
            sources,
            tuple(self.parameters[i] for i in keep),
            tuple(self.bounds[i] for i in keep),
        )

    def with_space(self, space: ModeSpace) -> 'Topology':
        return replace(self, space=space)

    def clip(self, params: Sequence[float]) -> np.ndarray:
        lower = np.array([b[0] for b in self.bounds], dtype=float)
        upper = np.array([b[1] for b in self.bounds], dtype=float)
        return np.clip(np.asarray(params, dtype=float), lower, upper)

    def effective_squeezing(self, params) -> List[SqueezeParam]:
        return [op.param.canonical() for op in self.bind(params) if op.kind.is_squeezer]

    def parameter_roles(self) -> Dict[str, str]:
        """'r', 'theta' or 't' for each parameter, by first use."""
        roles: Dict[str, str] = {}
        for source in self.sources:
            named = [('r', source.r), ('theta', source.theta)] if source.kind.is_squeezer else [('t', source.t)]
            for role, ref in named:
                if ref.name is not None:
                    roles.setdefault(ref.name, role)
        return roles

    def to_descriptor(self) -> List[dict]:
        return [source.to_dict() for source in self.sources]

    def to_dict(self) -> dict:
        return {
            'cutoffs': list(self.space.cutoffs),
            'path_map': [list(p) for p in self.space.path_map],
            'sources': self.to_descriptor(),
            'parameters': list(self.parameters),
            'bounds': [[_finite_or_none(lo), _finite_or_none(hi)] for lo, hi in self.bounds],
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'Topology':
        space = ModeSpace(tuple(data['cutoffs']), tuple(tuple(p) for p in data.get('path_map', ())))
        bounds = tuple(
            (-math.inf if lo is None else float(lo), math.inf if hi is None else float(hi))
            for lo, hi in data.get('bounds', ())
        )
        return cls(space, tuple(SourceSpec.from_dict(s) for s in data['sources']),
                   tuple(data.get('parameters', ())), bounds)


def _finite_or_none(value: float) -> Optional[float]:
    return value if math.isfinite(value) else None


def run_experiment_with_tangents(topology: Topology, params) -> Tuple[np.ndarray, np.ndarray]:
    """Final amplitudes and their derivatives with respect to every free parameter.

    Forward mode: each source maps (psi, dpsi_i) to (U psi, U dpsi_i + dU/dx_i psi).
    Returns ``(amplitudes, tangents)`` with tangents of shape (num_parameters, dimension).
    """
    space = topology.space
    values = topology.values(params)
    index = {name: i for i, name in enumerate(topology.parameters)}
    psi = StateVector.vacuum(space).tensor().copy()
    tangents = np.zeros((len(index),) + space.dims, dtype=np.complex128)
    for source in topology.sources:
        op = source.bind(values)
        modes = _check_op(space, op)
        refs = source.refs()
        if op.is_identity and all(ref.name is None for ref in refs):
            continue
        cutoffs = [space.cutoffs[m] for m in modes]
        matrix, partials = local_matrix(op, cutoffs, derivatives=True)
        if len(index):
            tangents = apply_local(tangents, matrix, modes, batch=1)
        for ref, partial in zip(refs, partials):
            if ref.name is None:
                continue
            if not op.kind.is_squeezer and not 0.0 < source.t.resolve(values) < 1.0:
                continue  # clamped transmission is locally constant
            tangents[index[ref.name]] += ref.scale * apply_local(psi, partial, modes)
        psi = apply_local(psi, matrix, modes)
    return psi.reshape(-1), tangents.reshape(len(index), -1)
