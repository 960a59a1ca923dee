"""Ordering search, canonicalization, pruning and Pareto continuation sweeps."""
import itertools
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Set, Tuple

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from squeeze_designer.config import DEFAULT_F0_SCHEDULE, Config
from squeeze_designer.errors import CapacityError, NoSupportError, OrderingError, SqueezeDesignerError
from squeeze_designer.fock import StateVector
from squeeze_designer.measurement import ClickPattern, PatternPlan, counts_per_second, measure
from squeeze_designer.objective import LossWeights, OptConfig, OptResult, optimize
from squeeze_designer.ops import SourceSpec, Topology, commute_at

logger = logging.getLogger(__name__)

Ordering = Tuple[int, ...]


# ---------------------------------------------------------------------------
# commutation and templates


def commutes(a: SourceSpec, b: SourceSpec, tol: float = 1e-12) -> bool:
    """Template-level commutation.

    Disjoint sources always commute. Sources on the same modes commute only when
    their phases are tied with a fixed relative phase of 0 or pi; free phases
    are treated as non-commuting.
    """
    if not set(a.modes) & set(b.modes):
        return True
    if a.kind is not b.kind or not a.kind.is_squeezer or set(a.modes) != set(b.modes):
        return False
    ta, tb = a.theta, b.theta
    if ta.name != tb.name or (ta.name is not None and ta.scale != tb.scale):
        return False
    remainder = math.remainder(ta.offset - tb.offset, math.pi)
    return abs(remainder) <= tol


def _compose(p: Ordering, q: Ordering) -> Ordering:
    return tuple(p[i] for i in q)


@dataclass(frozen=True)
class CanonicalOrdering:
    sequence: Ordering
    key: Ordering
    labels: Tuple[str, ...] = ()

    @property
    def key_string(self) -> str:
        if self.labels:
            return '-'.join(self.labels[i] for i in self.key)
        return '-'.join(str(i) for i in self.key)


@dataclass(frozen=True)
class TopologyTemplate:
    """Squeezers whose order is searched, fixed linear elements, detectors and symmetries.

    ``topology`` lists the squeezers in template order followed by the linear
    elements; orderings permute the squeezer block only. ``symmetry`` holds
    mode permutations under which the template, the pattern and the target
    are invariant.
    """

    name: str
    topology: Topology
    pattern: ClickPattern
    symmetry: Tuple[Tuple[int, ...], ...] = ()
    init_params: Tuple[float, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'symmetry', tuple(tuple(int(m) for m in g) for g in self.symmetry))
        sources = self.topology.sources
        count = self.num_ordered
        if any(not s.kind.is_squeezer for s in sources[:count]) or any(s.kind.is_squeezer for s in sources[count:]):
            raise OrderingError("squeezers must precede every linear element in a template")
        self.pattern.check(self.topology.space)
        for perm in self.symmetry:
            self._check_symmetry(perm)

    @property
    def num_ordered(self) -> int:
        return sum(1 for s in self.topology.sources if s.kind.is_squeezer)

    @property
    def squeezers(self) -> Tuple[SourceSpec, ...]:
        return self.topology.sources[:self.num_ordered]

    @property
    def labels(self) -> Tuple[str, ...]:
        return tuple(s.label or str(i) for i, s in enumerate(self.squeezers))

    def _check_symmetry(self, perm: Tuple[int, ...]) -> None:
        space = self.topology.space
        if sorted(perm) != list(range(space.num_modes)):
            raise OrderingError(f"symmetry {perm} is not a permutation of {space.num_modes} modes")
        for path, detector in zip(space.path_map, self.pattern.detectors):
            image = sorted(perm[m] for m in path)
            matches = [i for i, p in enumerate(space.path_map) if sorted(p) == image]
            if not matches or self.pattern.detectors[matches[0]] != detector:
                raise OrderingError(f"symmetry {perm} does not preserve the click pattern")
        self.source_permutation(perm)

    def source_permutation(self, perm: Sequence[int]) -> Ordering:
        """Source relabelling induced by a mode permutation."""
        squeezers = self.squeezers
        used = set()
        image = []
        for source in squeezers:
            modes = sorted(perm[m] for m in source.modes)
            match = next(
                (j for j, other in enumerate(squeezers)
                 if j not in used and other.kind is source.kind and sorted(other.modes) == modes),
                None,
            )
            if match is None:
                raise OrderingError(f"symmetry {tuple(perm)} does not map the template onto itself")
            used.add(match)
            image.append(match)
        return tuple(image)

    def group(self) -> List[Ordering]:
        """Closure of the declared symmetries as source permutations (identity first)."""
        identity = tuple(range(self.num_ordered))
        generators = [self.source_permutation(p) for p in self.symmetry]
        elements = [identity]
        frontier = [identity]
        while frontier:
            nxt = []
            for g in frontier:
                for h in generators:
                    composed = _compose(h, g)
                    if composed not in elements:
                        elements.append(composed)
                        nxt.append(composed)
            frontier = nxt
        return elements

    def commutation_table(self) -> np.ndarray:
        squeezers = self.squeezers
        n = len(squeezers)
        table = np.ones((n, n), dtype=bool)
        for i, j in itertools.combinations(range(n), 2):
            table[i, j] = table[j, i] = commutes(squeezers[i], squeezers[j])
        return table

    def realize(self, ordering: Sequence[int]) -> Topology:
        """Topology with the squeezers in ``ordering`` followed by the linear elements."""
        count = self.num_ordered
        if sorted(ordering) != list(range(count)):
            raise OrderingError(f"ordering {tuple(ordering)} is not a permutation of {count} sources")
        order = list(ordering) + list(range(count, len(self.topology.sources)))
        return self.topology.reordered(order)


# ---------------------------------------------------------------------------
# canonical keys


def _lex_min_trace(word: Sequence[int], table: np.ndarray) -> Ordering:
    """Lexicographically smallest word reachable by swapping adjacent commuting letters."""
    remaining = list(word)
    result = []
    while remaining:
        best = None
        for pos, letter in enumerate(remaining):
            if all(table[letter, earlier] for earlier in remaining[:pos]):
                if best is None or letter < remaining[best]:
                    best = pos
        result.append(remaining.pop(best))
    return tuple(result)


def _local_normal(word: Sequence[int], table: np.ndarray) -> Ordering:
    """Repeatedly swap the leftmost adjacent commuting pair that is out of template order."""
    word = list(word)
    changed = True
    while changed:
        changed = False
        for i in range(len(word) - 1):
            a, b = word[i], word[i + 1]
            if a > b and table[a, b]:
                word[i], word[i + 1] = b, a
                changed = True
                break
    return tuple(word)


class Canonicalizer:
    """Canonical keys for one template.

    ``exact`` keys identify true commutation classes; ``local`` keys treat a
    sequence as canonical when no adjacent commuting pair is out of template
    order.
    """

    METHODS = ('exact', 'local')

    def __init__(self, template: TopologyTemplate, method: str = 'exact', use_symmetry: bool = True):
        if method not in self.METHODS:
            raise OrderingError(f"unknown canonicalization method {method!r}")
        self.template = template
        self.method = method
        self.table = template.commutation_table()
        self.group = template.group() if use_symmetry else [tuple(range(template.num_ordered))]
        self._normal = _lex_min_trace if method == 'exact' else _local_normal

    def key(self, ordering: Sequence[int]) -> Ordering:
        normal = self._normal(ordering, self.table)
        if self.method == 'local':
            return min(self._normal(tuple(g[s] for s in normal), self.table) for g in self.group)
        return min(self._normal(tuple(g[s] for s in ordering), self.table) for g in self.group)

    def canonical(self, ordering: Sequence[int]) -> CanonicalOrdering:
        ordering = tuple(int(i) for i in ordering)
        if sorted(ordering) != list(range(self.template.num_ordered)):
            raise OrderingError(f"ordering {ordering} is not a permutation of the template sources")
        return CanonicalOrdering(ordering, self.key(ordering), self.template.labels)


def canonical_key(template: TopologyTemplate, ordering: Sequence[int], method: str = 'exact',
                  use_symmetry: bool = True) -> Ordering:
    return Canonicalizer(template, method, use_symmetry).key(ordering)


def enumerate_canonical(template: TopologyTemplate, method: str = 'exact',
                        use_symmetry: bool = True) -> List[CanonicalOrdering]:
    """One representative per class of orderings, sorted by key."""
    count = template.num_ordered
    if count > Config.MAX_ORDERING_SOURCES:
        raise CapacityError(
            f"{count} sources exceed the ordering enumeration limit of {Config.MAX_ORDERING_SOURCES}",
            size=math.factorial(count),
        )
    canonicalizer = Canonicalizer(template, method, use_symmetry)
    classes: Dict[Ordering, CanonicalOrdering] = {}
    for perm in itertools.permutations(range(count)):
        key = canonicalizer.key(perm)
        if key not in classes:
            classes[key] = CanonicalOrdering(key, key, template.labels)
    logger.info(f"{template.name}: {math.factorial(count)} permutations, {len(classes)} classes ({method})")
    return [classes[k] for k in sorted(classes)]


def sample_orderings(template: TopologyTemplate, count: int, seed: int, method: str = 'exact') -> List[CanonicalOrdering]:
    """Uniform random permutations, canonicalized and deduplicated in draw order."""
    if count < 1:
        raise OrderingError("count must be at least 1")
    rng = np.random.default_rng(seed)
    canonicalizer = Canonicalizer(template, method)
    seen: Dict[Ordering, CanonicalOrdering] = {}
    for _ in range(count):
        perm = tuple(int(i) for i in rng.permutation(template.num_ordered))
        key = canonicalizer.key(perm)
        if key not in seen:
            seen[key] = CanonicalOrdering(key, key, template.labels)
    return list(seen.values())


def conflict_component(table: np.ndarray, seeds: Iterable[int]) -> Set[int]:
    """Sources linked to ``seeds`` through chains of non-commuting pairs."""
    component = set(seeds)
    frontier = list(component)
    while frontier:
        source = frontier.pop()
        for other in np.flatnonzero(~table[source]):
            if int(other) not in component:
                component.add(int(other))
                frontier.append(int(other))
    return component


def position_key(ordering: CanonicalOrdering, labels: Sequence[str] = ('F', 'G'),
                 table: Optional[np.ndarray] = None) -> Tuple[int, ...]:
    """Positions of the named sources in the representative sequence.

    With a commutation ``table`` the positions are counted among the sources
    that share a conflict component with the named ones.
    """
    word = list(ordering.key)
    names_of = list(ordering.labels) if ordering.labels else [str(i) for i in range(len(word))]
    if table is not None:
        keep = conflict_component(table, [names_of.index(label) for label in labels])
        word = [i for i in word if i in keep]
    names = [names_of[i] for i in word]
    return tuple(names.index(label) for label in labels)


def parameter_commutations(topology: Topology, params) -> List[dict]:
    """Same-mode squeezer pairs whose bound parameters commute."""
    ops = topology.bind(params)
    report = []
    for i, j in itertools.combinations(range(len(ops)), 2):
        a, b = ops[i], ops[j]
        if not (a.kind.is_squeezer and b.kind is a.kind and set(a.modes) == set(b.modes)):
            continue
        if commute_at(a, b):
            report.append({'first': a.label or str(i), 'second': b.label or str(j), 'modes': list(a.modes)})
    return report


# ---------------------------------------------------------------------------
# pruning and convergence recheck


def _metrics(topology: Topology, params, pattern: ClickPattern, target: StateVector) -> Tuple[float, float]:
    return measure(topology.run(params), pattern, target, PatternPlan(topology.space, pattern))


def prune(topology: Topology, params, pattern: ClickPattern, target: StateVector,
          threshold: float = Config.PRUNE_THRESHOLD) -> Tuple[Topology, np.ndarray]:
    """Drop squeezers with |r| below threshold when (F, P) stay within tolerance."""
    values = topology.values(params)
    fidelity, probability = _metrics(topology, values, pattern, target)
    index = 0
    while index < len(topology.sources):
        source = topology.sources[index]
        if not source.kind.is_squeezer or abs(source.r.resolve(values)) >= threshold:
            index += 1
            continue
        candidate = topology.without([index])
        try:
            new_f, new_p = _metrics(candidate, values, pattern, target)
        except NoSupportError:
            index += 1
            continue
        if (abs(new_f - fidelity) <= Config.RECHECK_FIDELITY_TOL
                and abs(new_p - probability) <= Config.RECHECK_PROBABILITY_RTOL * probability):
            logger.info(f"pruned source {source.label or index} (r={source.r.resolve(values):.2e})")
            topology = candidate
        else:
            index += 1
    return topology, np.array([values[name] for name in topology.parameters], dtype=float)


@dataclass
class RecheckResult:
    fidelity: float
    probability: float
    fidelity_high: float
    probability_high: float
    passed: bool

    @property
    def delta_fidelity(self) -> float:
        return abs(self.fidelity_high - self.fidelity)

    @property
    def delta_probability(self) -> float:
        return abs(self.probability_high - self.probability) / self.probability


def recheck(topology: Topology, params, pattern: ClickPattern, target: StateVector,
            increment: int = Config.RECHECK_CUTOFF_INCREMENT) -> RecheckResult:
    """Re-simulate with every cutoff raised and compare (F, P)."""
    fidelity, probability = _metrics(topology, params, pattern, target)
    high = topology.with_space(topology.space.raised(increment))
    fidelity_high, probability_high = _metrics(high, params, pattern, target)
    passed = bool(abs(fidelity_high - fidelity) <= Config.RECHECK_FIDELITY_TOL
                  and abs(probability_high - probability) <= Config.RECHECK_PROBABILITY_RTOL * probability)
    if not passed:
        logger.warning(
            f"cutoff recheck failed: F {fidelity:.6f} -> {fidelity_high:.6f}, P {probability:.4e} -> {probability_high:.4e}"
        )
    return RecheckResult(fidelity, probability, fidelity_high, probability_high, passed)


# ---------------------------------------------------------------------------
# Pareto fronts


@dataclass(frozen=True)
class ParetoPoint:
    f0: float
    fidelity: float
    probability: float
    params: Tuple[Tuple[str, float], ...]
    ordering_key: str = ''

    @property
    def counts_per_s(self) -> float:
        return counts_per_second(self.probability)

    def dominates(self, other: 'ParetoPoint') -> bool:
        return (self.fidelity >= other.fidelity and self.probability >= other.probability
                and (self.fidelity > other.fidelity or self.probability > other.probability))

    def param_dict(self) -> Dict[str, float]:
        return dict(self.params)

    def to_dict(self) -> dict:
        return {
            'f0': self.f0,
            'fidelity': self.fidelity,
            'probability': self.probability,
            'counts_per_s': self.counts_per_s,
            'ordering_key': self.ordering_key,
            'params': self.param_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> 'ParetoPoint':
        return cls(float(data['f0']), float(data['fidelity']), float(data['probability']),
                   tuple((k, float(v)) for k, v in data['params'].items()), data.get('ordering_key', ''))


class ParetoFront:
    """Mutually non-dominated points, kept sorted by f0."""

    def __init__(self, points: Iterable[ParetoPoint] = ()):
        self._points: List[ParetoPoint] = []
        for point in points:
            self.add(point)

    def add(self, point: ParetoPoint) -> bool:
        if not (math.isfinite(point.fidelity) and math.isfinite(point.probability)):
            return False
        if any(p.dominates(point) or (p.fidelity == point.fidelity and p.probability == point.probability)
               for p in self._points):
            return False
        self._points = [p for p in self._points if not point.dominates(p)]
        self._points.append(point)
        self._points.sort(key=lambda p: (p.f0, p.fidelity))
        return True

    @property
    def points(self) -> List[ParetoPoint]:
        return list(self._points)

    def __len__(self) -> int:
        return len(self._points)

    def __iter__(self):
        return iter(self._points)

    def hypervolume(self, ref_fidelity: float = 0.7, ref_log_counts: float = 0.0) -> float:
        """Area dominated in (F, log10 counts/s) above the reference point."""
        pts = [(p.fidelity, math.log10(p.counts_per_s)) for p in self._points
               if p.fidelity > ref_fidelity and p.counts_per_s > 0]
        pts = [(f, c) for f, c in pts if c > ref_log_counts]
        pts.sort(key=lambda fc: (-fc[0], -fc[1]))
        area, best_counts = 0.0, ref_log_counts
        for f, c in pts:
            if c > best_counts:
                area += (f - ref_fidelity) * (c - best_counts)
                best_counts = c
        return area

    def best_at(self, fidelity: float) -> Optional[ParetoPoint]:
        """Highest-probability point reaching at least ``fidelity``."""
        eligible = [p for p in self._points if p.fidelity >= fidelity]
        return max(eligible, key=lambda p: p.probability) if eligible else None


# ---------------------------------------------------------------------------
# continuation sweeps


def f0_schedule(start: float, stop: float, step: float) -> List[float]:
    if step <= 0 or stop < start:
        raise SqueezeDesignerError(f"invalid f0 schedule {start}:{stop}:{step}")
    count = int(round((stop - start) / step)) + 1
    return [round(start + i * step, 10) for i in range(count)]


@dataclass
class SweepStep:
    f0: float
    result: Optional[OptResult] = None
    error: str = ''


@dataclass
class SweepJob:
    """One topology swept along an f0 schedule; JSON-serializable for workers."""

    key: str
    topology: Topology
    pattern: ClickPattern
    target: StateVector
    schedule: Sequence[float]
    weights: LossWeights
    config: OptConfig
    init_params: Sequence[float]
    both_directions: bool = True

    def to_payload(self) -> dict:
        return {
            'key': self.key,
            'topology': self.topology.to_dict(),
            'pattern': self.pattern.to_list(),
            'target': self.target.to_snapshot(),
            'schedule': list(self.schedule),
            'weights': self.weights.as_list(),
            'config': self.config.__dict__.copy(),
            'init_params': [float(v) for v in self.init_params],
            'both_directions': self.both_directions,
        }

    @classmethod
    def from_payload(cls, data: dict) -> 'SweepJob':
        return cls(
            data['key'],
            Topology.from_dict(data['topology']),
            ClickPattern.from_list(data['pattern']),
            StateVector.from_snapshot(data['target']),
            list(data['schedule']),
            LossWeights.from_list(data['weights']),
            OptConfig.from_dict(data['config']),
            list(data['init_params']),
            bool(data.get('both_directions', True)),
        )


@dataclass
class SweepOutcome:
    key: str
    steps: List[SweepStep]
    front: ParetoFront

    def to_payload(self) -> dict:
        return {
            'key': self.key,
            'steps': [
                {'f0': s.f0, 'error': s.error, 'result': s.result.to_dict() if s.result else None}
                for s in self.steps
            ],
            'front': [p.to_dict() for p in self.front],
        }

    @classmethod
    def from_payload(cls, data: dict) -> 'SweepOutcome':
        steps = [
            SweepStep(s['f0'], OptResult.from_dict(s['result']) if s['result'] is not None else None, s['error'])
            for s in data['steps']
        ]
        return cls(data['key'], steps, ParetoFront(ParetoPoint.from_dict(p) for p in data['front']))


def _continuation(job: SweepJob, schedule: Sequence[float]) -> List[SweepStep]:
    params = np.asarray(job.init_params, dtype=float)
    steps = []
    for f0 in schedule:
        try:
            result = optimize(job.topology, job.pattern, job.target, f0, job.weights, params, job.config)
        except SqueezeDesignerError as e:
            logger.warning(f"{job.key}: sweep step f0={f0} failed: {e}")
            steps.append(SweepStep(f0, error=str(e)))
            continue
        if not result.success:
            steps.append(SweepStep(f0, result, error=result.message))
            continue
        params = result.params
        steps.append(SweepStep(f0, result))
    return steps


def sweep_topology(job: SweepJob) -> SweepOutcome:
    """Warm-started sweep along the schedule, optionally in both directions, better branch per f0."""
    schedule = sorted(job.schedule)
    steps = _continuation(job, schedule)
    if job.both_directions and len(schedule) > 1:
        backward = {s.f0: s for s in _continuation(job, schedule[::-1])}
        merged = []
        for step in steps:
            other = backward[step.f0]
            if other.result is not None and other.result.success and (
                    step.result is None or not step.result.success or other.result.loss < step.result.loss):
                merged.append(other)
            else:
                merged.append(step)
        steps = merged
    front = ParetoFront()
    for step in steps:
        if step.result is not None and step.result.success:
            front.add(ParetoPoint(step.f0, step.result.fidelity, step.result.probability,
                                  tuple(step.result.param_dict().items()), job.key))
    return SweepOutcome(job.key, steps, front)


def serial_runner(jobs: Sequence[SweepJob]) -> List[SweepOutcome]:
    return [sweep_topology(job) for job in jobs]


@dataclass
class SweepReport:
    outcomes: Dict[str, SweepOutcome]
    hypervolumes: Dict[str, float]
    best: Optional[str]

    def fronts(self) -> Dict[str, ParetoFront]:
        return {key: outcome.front for key, outcome in self.outcomes.items()}


def select_best(outcomes: Sequence[SweepOutcome]) -> SweepReport:
    merged = {o.key: o for o in sorted(outcomes, key=lambda o: o.key)}
    volumes = {key: o.front.hypervolume() for key, o in merged.items()}
    best = max(volumes, key=lambda k: (volumes[k], -list(merged).index(k))) if volumes else None
    return SweepReport(merged, volumes, best)


def pareto_sweep(jobs: Sequence[SweepJob],
                 runner: Callable[[Sequence[SweepJob]], List[SweepOutcome]] = serial_runner) -> SweepReport:
    """Continuation sweep for every pooled topology and hypervolume selection."""
    outcomes = runner(list(jobs))
    report = select_best(outcomes)
    for key, volume in report.hypervolumes.items():
        logger.info(f"{key}: {len(report.outcomes[key].front)} front points, hypervolume {volume:.4f}")
    return report


def scale_sweep(topology: Topology, pattern: ClickPattern, target: StateVector, grid: Sequence[float],
                param: Optional[str] = None, fixed: Optional[Dict[str, float]] = None) -> List[dict]:
    """(F, P, counts/s) of a fixed-ratio topology along a grid of its common scale."""
    name = param or topology.parameters[0]
    fixed = dict(fixed or {})
    plan = PatternPlan(topology.space, pattern)
    rows = []
    for value in grid:
        values = {**{p: 0.0 for p in topology.parameters}, **fixed, name: float(value)}
        try:
            fidelity, probability = measure(topology.run(values), pattern, target, plan)
        except NoSupportError:
            fidelity, probability = math.nan, 0.0
        rows.append({'scale': float(value), 'fidelity': fidelity, 'probability': probability,
                     'counts_per_s': counts_per_second(probability)})
    return rows


def low_gain_response(curves: Dict[str, Sequence[float]], grid: Sequence[float]) -> Dict[str, List[float]]:
    """Deviation of each log-count curve from the mean curve, divided by the squared scale.

    Ordering effects enter the rates at relative order scale**2, so the result
    tends to a constant per ordering at low gain.
    """
    keys = sorted(curves)
    if not keys:
        return {}
    data = np.array([np.asarray(curves[k], dtype=float) for k in keys])
    scale = np.asarray(grid, dtype=float)
    if data.shape[1] != scale.size or np.any(scale <= 0):
        raise SqueezeDesignerError("response grid must be positive and match the curves")
    deviation = (data - data.mean(axis=0)) / scale ** 2
    return {key: row.tolist() for key, row in zip(keys, deviation)}


def cluster_fronts(curves: Dict[str, Sequence[float]], threshold: float = 0.5) -> List[List[str]]:
    """Single-linkage groups of curves sampled on a common grid (max-abs distance)."""
    keys = sorted(curves)
    if len(keys) < 2:
        return [keys] if keys else []
    data = np.array([np.asarray(curves[k], dtype=float) for k in keys])
    labels = fcluster(linkage(data, method='single', metric='chebyshev'), t=threshold, criterion='distance')
    groups: Dict[int, List[str]] = {}
    for key, label in zip(keys, labels):
        groups.setdefault(int(label), []).append(key)
    return sorted(groups.values(), key=lambda g: g[0])


def groups_follow_positions(groups: Sequence[Sequence[str]], orderings: Dict[str, CanonicalOrdering],
                            labels: Sequence[str] = ('F', 'G'), table: Optional[np.ndarray] = None) -> bool:
    """True when the positions of ``labels`` determine group membership."""
    seen: Dict[Tuple[int, ...], int] = {}
    for gid, group in enumerate(groups):
        for key in group:
            pos = position_key(orderings[key], labels, table)
            if seen.setdefault(pos, gid) != gid:
                return False
    return True


# ---------------------------------------------------------------------------
# discovery pipeline


def random_init(topology: Topology, rng: np.random.Generator, r_range=(0.05, 0.3)) -> np.ndarray:
    roles = topology.parameter_roles()
    values = []
    for name, (lo, hi) in zip(topology.parameters, topology.bounds):
        role = roles.get(name, 'r')
        if role == 'theta':
            value = rng.uniform(-math.pi, math.pi)
        elif role == 't':
            value = rng.uniform(0.0, 1.0)
        else:
            value = rng.uniform(*r_range)
        values.append(min(max(value, lo), hi))
    return np.array(values, dtype=float)


@dataclass
class DiscoveryConfig:
    template: TopologyTemplate
    target: StateVector
    weights: LossWeights
    schedule: Sequence[float] = field(default_factory=lambda: f0_schedule(*DEFAULT_F0_SCHEDULE))
    opt: OptConfig = field(default_factory=OptConfig)
    num_orderings: int = 20
    pool_size: int = 5
    seed: int = 0
    method: str = 'exact'
    both_directions: bool = True


@dataclass
class Candidate:
    key: str
    f0: float
    result: OptResult
    topology: Topology


@dataclass
class DiscoveryReport:
    template: str
    orderings: List[CanonicalOrdering]
    candidates: List[Candidate]
    pool: List[Candidate]
    sweep: Optional[SweepReport]
    failures: List[dict] = field(default_factory=list)
    commutations: Dict[str, List[dict]] = field(default_factory=dict)

    @property
    def best(self) -> Optional[str]:
        return self.sweep.best if self.sweep else None

    def summary(self) -> dict:
        return {
            'template': self.template,
            'orderings_tried': len(self.orderings),
            'candidates': len(self.candidates),
            'pool': [c.key for c in self.pool],
            'best': self.best,
            'hypervolumes': self.sweep.hypervolumes if self.sweep else {},
            'failures': self.failures,
            'commutations': self.commutations,
        }


def _rank(candidate: Candidate) -> Tuple[int, float]:
    reached = candidate.result.fidelity >= candidate.f0 - 0.01
    return (0 if reached else 1, -candidate.result.probability)


def discovery_run(config: DiscoveryConfig,
                  optimizer: Optional[Callable[[List[dict]], List[Optional[OptResult]]]] = None,
                  runner: Callable[[Sequence[SweepJob]], List[SweepOutcome]] = serial_runner) -> DiscoveryReport:
    """Random-ordering optimization, cutoff recheck and pruning, continuation sweep, selection."""
    template = config.template
    rng = np.random.default_rng(config.seed)
    orderings = sample_orderings(template, config.num_orderings, config.seed, config.method)
    failures: List[dict] = []

    # step 1: one optimization per ordering at a random target fidelity
    requests = []
    for ordering in orderings:
        topology = template.realize(ordering.key)
        requests.append({
            'key': ordering.key_string,
            'topology': topology,
            'f0': float(rng.choice(np.asarray(config.schedule))),
            'init': random_init(topology, rng),
        })
    if optimizer is None:
        results = [_optimize_request(r, template, config) for r in requests]
    else:
        results = optimizer(requests)
    candidates = []
    for request, result in zip(requests, results):
        if result is None or not result.success:
            failures.append({'stage': 'optimize', 'key': request['key'],
                             'error': result.message if result else 'failed'})
            continue
        candidates.append(Candidate(request['key'], request['f0'], result, request['topology']))
    logger.info(f"{template.name}: {len(candidates)}/{len(requests)} orderings optimized")

    # step 2: recheck at higher cutoffs and prune the best candidates
    pool = []
    for candidate in sorted(candidates, key=_rank):
        if len(pool) >= config.pool_size:
            break
        try:
            check = recheck(candidate.topology, candidate.result.params, template.pattern, config.target)
        except SqueezeDesignerError as e:
            failures.append({'stage': 'recheck', 'key': candidate.key, 'error': str(e)})
            continue
        if not check.passed:
            failures.append({'stage': 'recheck', 'key': candidate.key,
                             'error': f"dF={check.delta_fidelity:.2e}, dP/P={check.delta_probability:.2e}"})
            continue
        topology, params = prune(candidate.topology, candidate.result.params, template.pattern, config.target)
        result = replace(candidate.result, params=params, names=topology.parameters)
        pool.append(Candidate(candidate.key, candidate.f0, result, topology))

    # steps 3 and 4: continuation sweep and hypervolume selection
    jobs = [
        SweepJob(c.key, c.topology, template.pattern, config.target, config.schedule, config.weights,
                 config.opt, c.result.params, config.both_directions)
        for c in pool
    ]
    sweep = pareto_sweep(jobs, runner) if jobs else None
    if sweep:
        for key, outcome in sweep.outcomes.items():
            failures.extend({'stage': 'sweep', 'key': key, 'f0': s.f0, 'error': s.error}
                            for s in outcome.steps if s.error)
    commutations = {c.key: parameter_commutations(c.topology, c.result.params) for c in pool}
    return DiscoveryReport(template.name, orderings, candidates, pool, sweep, failures, commutations)


def _optimize_request(request: dict, template: TopologyTemplate, config: DiscoveryConfig) -> Optional[OptResult]:
    try:
        return optimize(request['topology'], template.pattern, config.target, request['f0'], config.weights,
                        request['init'], config.opt)
    except SqueezeDesignerError as e:
        logger.warning(f"{request['key']}: optimization failed: {e}")
        return None
