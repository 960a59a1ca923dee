"""Weighted loss, truncation penalty, gradients and the continuous optimizer."""
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from squeeze_designer.config import DEFAULT_OPTIMIZER, WEIGHT_PRESETS, Config
from squeeze_designer.errors import SqueezeDesignerError, UnknownNameError
from squeeze_designer.fock import StateVector
from squeeze_designer.measurement import ClickPattern, PatternPlan, counts_per_second
from squeeze_designer.ops import SourceKind, Topology, canonical_angle, run_experiment_with_tangents

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    """w1: -log P, w2: log (F - f0)^2, w3: L1 on r, w4: L1 on theta, w5: truncation error."""

    w1: float = 1.0
    w2: float = 0.0
    w3: float = 0.0
    w4: float = 0.0
    w5: float = 0.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if not math.isfinite(value) or value < 0:
                raise SqueezeDesignerError(f"loss weight {name} must be finite and non-negative, got {value}")

    @classmethod
    def preset(cls, name: str) -> 'LossWeights':
        try:
            return cls(*WEIGHT_PRESETS[name])
        except KeyError:
            raise UnknownNameError(f"unknown weight preset {name!r}; known: {sorted(WEIGHT_PRESETS)}") from None

    @classmethod
    def from_list(cls, values: Sequence[float]) -> 'LossWeights':
        if len(values) != 5:
            raise SqueezeDesignerError(f"expected 5 loss weights, got {len(values)}")
        return cls(*(float(v) for v in values))

    def as_list(self) -> List[float]:
        return [self.w1, self.w2, self.w3, self.w4, self.w5]


@dataclass(frozen=True)
class OptConfig:
    max_iters: int = DEFAULT_OPTIMIZER['max_iters']
    restarts: int = DEFAULT_OPTIMIZER['restarts']
    seed: int = DEFAULT_OPTIMIZER['seed']
    step_init: float = DEFAULT_OPTIMIZER['step_init']
    e_ceiling: float = DEFAULT_OPTIMIZER['e_ceiling']
    tolerance: float = DEFAULT_OPTIMIZER['tolerance']
    restart_spread: float = 0.1

    @classmethod
    def from_dict(cls, data: Optional[dict]) -> 'OptConfig':
        data = data or {}
        known = {k: data[k] for k in cls.__dataclass_fields__ if k in data}
        return cls(**known)


@dataclass
class Evaluation:
    fidelity: float
    probability: float
    truncation_error: float
    loss: float

    @property
    def counts_per_s(self) -> float:
        return counts_per_second(self.probability)


@dataclass
class OptResult:
    params: np.ndarray
    loss: float
    fidelity: float
    probability: float
    truncation_error: float
    success: bool
    iterations: int = 0
    trace: List[float] = field(default_factory=list)
    message: str = ''
    names: Sequence[str] = ()

    @property
    def counts_per_s(self) -> float:
        return counts_per_second(self.probability)

    def param_dict(self) -> Dict[str, float]:
        return dict(zip(self.names, (float(v) for v in self.params)))

    def to_dict(self) -> dict:
        return {
            'params': self.param_dict(),
            'loss': self.loss,
            'fidelity': self.fidelity,
            'probability': self.probability,
            'counts_per_s': self.counts_per_s,
            'truncation_error': self.truncation_error,
            'success': self.success,
            'iterations': self.iterations,
            'message': self.message,
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'OptResult':
        params = data['params']
        return cls(np.array(list(params.values()), dtype=float), data['loss'], data['fidelity'],
                   data['probability'], data['truncation_error'], data['success'], data.get('iterations', 0),
                   [], data.get('message', ''), tuple(params))


def truncation_error(state: StateVector) -> float:
    """1 - |psi|^2, the amplitude pushed above the cutoffs."""
    return 1.0 - state.norm_squared()


class DesignProblem:
    """Loss of one topology against one target and click pattern at a fixed f0."""

    def __init__(self, topology: Topology, pattern: ClickPattern, target: StateVector,
                 f0: Optional[float], weights: LossWeights):
        if f0 is not None and not 0.0 < f0 < 1.0:
            raise SqueezeDesignerError(f"target fidelity f0 must lie in (0, 1), got {f0}")
        if f0 is None and weights.w2 > 0:
            raise SqueezeDesignerError("w2 > 0 requires a target fidelity f0")
        self.topology = topology
        self.pattern = pattern
        self.f0 = f0
        self.weights = weights
        self.plan = PatternPlan(topology.space, pattern)
        self.target = self.plan.target_vector(target)
        self._regularizers = self._regularizer_refs()

    def _regularizer_refs(self):
        refs = []
        for source in self.topology.sources:
            if source.kind is not SourceKind.BEAM_SPLITTER:
                refs.append((source.r, source.theta))
        return refs

    def with_f0(self, f0: float) -> 'DesignProblem':
        return DesignProblem(self.topology, self.pattern, StateVector(self.plan.output_space, self.target),
                             f0, self.weights)

    def _penalties(self, values: Dict[str, float]):
        r_sum = sum(abs(r.resolve(values)) for r, _ in self._regularizers)
        theta_sum = sum(abs(canonical_angle(t.resolve(values))) for _, t in self._regularizers)
        return r_sum, theta_sum

    def _penalty_gradient(self, values: Dict[str, float]) -> np.ndarray:
        index = {name: i for i, name in enumerate(self.topology.parameters)}
        grad = np.zeros(len(index))
        for r_ref, t_ref in self._regularizers:
            if r_ref.name is not None:
                grad[index[r_ref.name]] += self.weights.w3 * np.sign(r_ref.resolve(values)) * r_ref.scale
            if t_ref.name is not None:
                grad[index[t_ref.name]] += (
                    self.weights.w4 * np.sign(canonical_angle(t_ref.resolve(values))) * t_ref.scale
                )
        return grad

    def _combine(self, fidelity: float, probability: float, error: float, values: Dict[str, float]) -> float:
        w = self.weights
        if probability < Config.NO_SUPPORT_FLOOR:
            return math.inf
        total = -w.w1 * math.log(probability)
        if self.f0 is not None and w.w2:
            total += w.w2 * math.log(max((fidelity - self.f0) ** 2, Config.FIDELITY_GAP_FLOOR))
        r_sum, theta_sum = self._penalties(values)
        return total + w.w3 * r_sum + w.w4 * theta_sum + w.w5 * error

    def evaluate(self, params) -> Evaluation:
        values = self.topology.values(params)
        amplitudes = self.topology.run(values).amplitudes
        raw = np.where(self.plan.mask, amplitudes, 0.0)
        probability = float(np.vdot(raw, raw).real)
        error = 1.0 - float(np.vdot(amplitudes, amplitudes).real)
        if probability < Config.NO_SUPPORT_FLOOR:
            return Evaluation(math.nan, probability, error, math.inf)
        overlaps = self.target.conj() @ self.plan.matrix(raw)
        fidelity = float(np.vdot(overlaps, overlaps).real) / probability
        return Evaluation(fidelity, probability, error, self._combine(fidelity, probability, error, values))

    def loss(self, params) -> float:
        return self.evaluate(params).loss

    def gradient(self, params) -> np.ndarray:
        """Analytic dL/dx from forward-mode tangents of the state."""
        values = self.topology.values(params)
        psi, tangents = run_experiment_with_tangents(self.topology, values)
        mask = self.plan.mask
        raw = np.where(mask, psi, 0.0)
        d_raw = np.where(mask, tangents, 0.0)
        probability = float(np.vdot(raw, raw).real)
        if probability < Config.NO_SUPPORT_FLOOR:
            raise SqueezeDesignerError("loss is not finite at these parameters (P = 0)")
        d_probability = 2.0 * np.real(d_raw @ raw.conj())
        overlaps = self.target.conj() @ self.plan.matrix(raw)
        d_overlaps = np.einsum('o,poa->pa', self.target.conj(), self.plan.matrix(d_raw))
        weight = float(np.vdot(overlaps, overlaps).real)
        d_weight = 2.0 * np.real(d_overlaps @ overlaps.conj())
        fidelity = weight / probability
        d_fidelity = (d_weight * probability - weight * d_probability) / probability ** 2
        d_error = -2.0 * np.real(tangents @ psi.conj())

        w = self.weights
        grad = -w.w1 * d_probability / probability + w.w5 * d_error
        if self.f0 is not None and w.w2:
            gap = fidelity - self.f0
            if gap * gap > Config.FIDELITY_GAP_FLOOR:
                grad = grad + w.w2 * 2.0 * d_fidelity / gap
        grad = grad + self._penalty_gradient(values)
        if not np.all(np.isfinite(grad)):
            raise SqueezeDesignerError("gradient is not finite at these parameters")
        return grad

    def numerical_gradient(self, params, step: float = 1e-5) -> np.ndarray:
        x = np.asarray(params, dtype=float)
        grad = np.zeros_like(x)
        for i in range(x.size):
            up, down = x.copy(), x.copy()
            up[i] += step
            down[i] -= step
            grad[i] = (self.loss(up) - self.loss(down)) / (2.0 * step)
        return grad


def loss(params, topology: Topology, pattern: ClickPattern, target: StateVector,
         f0: Optional[float], weights: LossWeights) -> float:
    return DesignProblem(topology, pattern, target, f0, weights).loss(params)


def gradient(params, topology: Topology, pattern: ClickPattern, target: StateVector,
             f0: Optional[float], weights: LossWeights) -> np.ndarray:
    problem = DesignProblem(topology, pattern, target, f0, weights)
    if not math.isfinite(problem.loss(params)):
        raise SqueezeDesignerError("loss is not finite at these parameters")
    return problem.gradient(params)


def numerical_gradient(params, topology: Topology, pattern: ClickPattern, target: StateVector,
                       f0: Optional[float], weights: LossWeights, step: float = 1e-5) -> np.ndarray:
    return DesignProblem(topology, pattern, target, f0, weights).numerical_gradient(params, step)


def _descend(problem: DesignProblem, start: np.ndarray, config: OptConfig):
    topology = problem.topology
    x = topology.clip(start)
    current = problem.loss(x)
    trace = [current]
    if not math.isfinite(current):
        return x, current, trace, 0
    step = config.step_init
    iterations = 0
    for iterations in range(1, config.max_iters + 1):
        try:
            grad = problem.gradient(x)
        except SqueezeDesignerError:
            break
        norm = float(np.linalg.norm(grad))
        if norm < config.tolerance:
            break
        direction = grad / norm
        accepted = False
        while step > 1e-12:
            candidate = topology.clip(x - step * direction)
            value = problem.loss(candidate)
            if value < current:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        improvement = current - value
        x, current = candidate, value
        trace.append(current)
        step = min(step * 1.5, 10.0 * config.step_init)
        if improvement < config.tolerance * (1.0 + abs(current)):
            break
    return x, current, trace, iterations


def optimize(topology: Topology, pattern: ClickPattern, target: StateVector, f0: Optional[float],
             weights: LossWeights, init_params, config: Optional[OptConfig] = None) -> OptResult:
    """Projected gradient descent with backtracking steps and seeded random restarts."""
    config = config or OptConfig()
    problem = DesignProblem(topology, pattern, target, f0, weights)
    rng = np.random.default_rng(config.seed)
    init = np.asarray(init_params, dtype=float).reshape(-1)
    starts = [init] + [
        init + rng.normal(scale=config.restart_spread, size=init.size) for _ in range(config.restarts)
    ]

    best_x, best_loss, best_iters = init, math.inf, 0
    losses: List[float] = []
    for attempt, start in enumerate(starts):
        x, value, trace, iterations = _descend(problem, start, config)
        logger.debug(f"start {attempt}: loss {value:.6g} after {iterations} iterations")
        losses.extend(trace)
        if value < best_loss:
            best_x, best_loss, best_iters = x, value, iterations
    # best-so-far, so the trace never increases
    history = np.minimum.accumulate(np.asarray(losses, dtype=float)).tolist() if losses else []

    if not math.isfinite(best_loss):
        logger.warning(f"no finite-loss point found after {len(starts)} starts")
        return OptResult(init, math.inf, math.nan, 0.0, math.nan, False, 0, history,
                         'no finite-loss point found', topology.parameters)

    final = problem.evaluate(best_x)
    message = 'converged'
    if weights.w5 > 0 and final.truncation_error > config.e_ceiling:
        message = f"truncation error {final.truncation_error:.3e} above ceiling {config.e_ceiling:.1e}"
        logger.warning(message)
    return OptResult(
        best_x, final.loss, final.fidelity, final.probability, final.truncation_error,
        True, best_iters, [float(v) for v in history], message, topology.parameters,
    )
