"""Target states, shipped experiment descriptors and baseline reproduction."""
import copy
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import jsonschema
import numpy as np

from squeeze_designer.config import DEFAULT_F0_SCHEDULE, DEFAULT_OPTIMIZER, Config
from squeeze_designer.errors import DescriptorError, SqueezeDesignerError, UnknownNameError
from squeeze_designer.fock import ModeSpace, StateVector
from squeeze_designer.measurement import ClickPattern
from squeeze_designer.objective import LossWeights, OptConfig
from squeeze_designer.ops import SourceSpec, Topology
from squeeze_designer.search import (
    CanonicalOrdering,
    DiscoveryConfig,
    ParetoFront,
    ParetoPoint,
    SweepJob,
    SweepOutcome,
    TopologyTemplate,
    cluster_fronts,
    discovery_run,
    enumerate_canonical,
    f0_schedule,
    groups_follow_positions,
    low_gain_response,
    pareto_sweep,
    recheck,
    scale_sweep,
    select_best,
    serial_runner,
)

logger = logging.getLogger(__name__)

DESCRIPTOR_DIR = Path(__file__).parent / 'descriptors'
SCHEMA_PATH = Path(__file__).parent / 'experiment_schema.json'

BASELINES = ('ghz4_fig1', 'w7_appB1', 'bell_sliwa_appB2', 'noon3_appB3', 'noon4_simplified_appB3')

DEFAULT_PRESET = {
    'ghz4': 'postselected',
    'w4': 'postselected',
    'bell': 'heralded',
    'noon3': 'noon',
    'noon4': 'noon',
}

DEFAULT_SEARCH = {'method': 'exact', 'num_orderings': 20, 'pool_size': 5, 'both_directions': True}

# fidelity levels at which reproduction reports the best ordering
REPORT_LEVELS = (0.73, 0.8, 0.85, 0.9, 0.95, 0.97)


# ---------------------------------------------------------------------------
# targets


@dataclass(frozen=True)
class TargetSpec:
    name: str
    encoding: str
    state: StateVector

    def permuted(self, perm: Sequence[int]) -> StateVector:
        """Target with its modes relabelled by ``perm`` (mode m -> perm[m])."""
        inverse = np.argsort(perm)
        tensor = np.transpose(self.state.tensor(), inverse)
        return StateVector(self.state.space, tensor.reshape(-1))


def _dual_rail(words: Sequence[str]) -> StateVector:
    paths = len(words[0])
    space = ModeSpace.uniform(2 * paths, 1, [(2 * j, 2 * j + 1) for j in range(paths)])
    terms = {}
    for word in words:
        occupancy = []
        for letter in word:
            occupancy.extend((1, 0) if letter == 'H' else (0, 1))
        terms[tuple(occupancy)] = 1.0
    return StateVector.from_terms(space, terms, normalize=True)


def _noon(n: int) -> StateVector:
    space = ModeSpace((n, n), ((0, 1),))
    return StateVector.from_terms(space, {(n, 0): 1.0, (0, n): 1.0}, normalize=True)


_TARGETS: Dict[str, Callable[[], TargetSpec]] = {
    'ghz4': lambda: TargetSpec('ghz4', 'dual_rail', _dual_rail(['HHHH', 'VVVV'])),
    'w4': lambda: TargetSpec('w4', 'dual_rail', _dual_rail(['HHHV', 'HHVH', 'HVHH', 'VHHH'])),
    'bell': lambda: TargetSpec('bell', 'dual_rail', _dual_rail(['HH', 'VV'])),
    'noon3': lambda: TargetSpec('noon3', 'photon_number', _noon(3)),
    'noon4': lambda: TargetSpec('noon4', 'photon_number', _noon(4)),
}


def make_target(name: str) -> TargetSpec:
    try:
        return _TARGETS[name]()
    except KeyError:
        raise UnknownNameError(f"unknown target {name!r}; known: {sorted(_TARGETS)}") from None


# ---------------------------------------------------------------------------
# descriptors


def load_schema() -> dict:
    with open(SCHEMA_PATH) as f:
        return json.load(f)


def _line_of(text: Optional[str], path: Sequence) -> Optional[int]:
    """Best-effort line of a JSON field path inside the source text."""
    if not text:
        return None
    position = 0
    for part in path:
        if isinstance(part, str):
            found = text.find(f'"{part}"', position)
            if found >= 0:
                position = found
    return text.count('\n', 0, position) + 1


def validate_descriptor(data: dict, text: Optional[str] = None) -> None:
    """Schema check plus the structural checks a schema cannot express."""
    validator = jsonschema.Draft7Validator(load_schema())
    errors = sorted(validator.iter_errors(data), key=lambda e: list(e.absolute_path))
    if errors:
        error = errors[0]
        field_path = '.'.join(str(p) for p in error.absolute_path) or '<root>'
        raise DescriptorError(f"{field_path}: {error.message}", field_path, _line_of(text, list(error.absolute_path)))

    cutoffs = data['modes']['cutoffs']
    paths = data['modes'].get('paths') or [[m] for m in range(len(cutoffs))]
    flat = [m for p in paths for m in p]
    if len(flat) != len(set(flat)):
        raise DescriptorError("paths must be disjoint", 'modes.paths', _line_of(text, ['modes', 'paths']))
    if sorted(flat) != list(range(len(cutoffs))):
        raise DescriptorError(f"paths must cover all {len(cutoffs)} modes", 'modes.paths',
                              _line_of(text, ['modes', 'paths']))
    if len(data['detectors']) != len(paths):
        raise DescriptorError(f"expected one detector per path ({len(paths)}), got {len(data['detectors'])}",
                              'detectors', _line_of(text, ['detectors']))
    for i, source in enumerate(data['sources']):
        arity = 1 if source['kind'] == 'single_mode' else 2
        if len(source['modes']) != arity or any(m >= len(cutoffs) for m in source['modes']):
            raise DescriptorError(f"source {i} has invalid modes {source['modes']}", f'sources.{i}.modes',
                                  _line_of(text, ['sources']))
    labels = data['modes'].get('labels')
    if labels is not None and len(labels) != len(cutoffs):
        raise DescriptorError("one label per mode is required", 'modes.labels', _line_of(text, ['modes', 'labels']))


def _default_parameters(sources: Sequence[dict]) -> List[dict]:
    params: Dict[str, dict] = {}
    for source in sources:
        for role in ('r', 'theta', 't'):
            ref = source.get(role)
            if isinstance(ref, dict) and 'param' in ref and ref['param'] not in params:
                if role == 't':
                    params[ref['param']] = {'name': ref['param'], 'init': 0.5, 'bounds': [0.0, 1.0]}
                elif role == 'r':
                    params[ref['param']] = {'name': ref['param'], 'init': 0.1, 'bounds': [0.0, None]}
                else:
                    params[ref['param']] = {'name': ref['param'], 'init': 0.0, 'bounds': [None, None]}
    return list(params.values())


def apply_defaults(data: dict) -> dict:
    """Fully defaulted copy of a validated descriptor."""
    data = copy.deepcopy(data)
    cutoffs = data['modes']['cutoffs']
    data['modes'].setdefault('paths', [[m] for m in range(len(cutoffs))])
    data['modes'].setdefault('labels', [f'm{m}' for m in range(len(cutoffs))])
    data.setdefault('description', '')
    data.setdefault('seed', 0)
    data.setdefault('symmetry', [])
    free_theta = any(isinstance(s.get('theta'), dict) and 'param' in s['theta'] for s in data['sources'])
    data.setdefault('mode', 'discovery' if free_theta else 'sweep')
    declared = data.get('parameters') or _default_parameters(data['sources'])
    for param in declared:
        param.setdefault('init', 0.1)
        param.setdefault('bounds', [None, None])
    data['parameters'] = declared
    for i, source in enumerate(data['sources']):
        source.setdefault('label', str(i))
        if source['kind'] == 'beam_splitter':
            source.setdefault('t', {'value': 1.0})
            source.setdefault('phase', math.pi / 2)
        else:
            source.setdefault('r', {'value': 0.0})
            source.setdefault('theta', {'value': 0.0})
    for detector in data['detectors']:
        detector.setdefault('value', 0 if detector['type'] == 'none' else 1)
        detector.setdefault('role', 'output' if detector['type'] == 'none' else 'ancilla')
    data.setdefault('weights_preset', DEFAULT_PRESET[data['target']])
    data.setdefault('weights', list(LossWeights.preset(data['weights_preset']).as_list()))
    data.setdefault('f0_range', list(DEFAULT_F0_SCHEDULE))
    data['optimizer'] = {**DEFAULT_OPTIMIZER, 'restart_spread': OptConfig.restart_spread, **data.get('optimizer', {})}
    data['search'] = {**DEFAULT_SEARCH, **data.get('search', {})}
    return data


@dataclass
class Experiment:
    """A validated, defaulted descriptor turned into library objects."""

    descriptor: dict
    template: TopologyTemplate
    target: TargetSpec
    weights: LossWeights
    schedule: List[float]
    opt: OptConfig

    @property
    def name(self) -> str:
        return self.descriptor['name']

    @property
    def mode(self) -> str:
        return self.descriptor['mode']

    @property
    def seed(self) -> int:
        return self.descriptor['seed']

    @property
    def pattern(self) -> ClickPattern:
        return self.template.pattern

    @property
    def topology(self) -> Topology:
        return self.template.topology

    @property
    def init_params(self) -> np.ndarray:
        return np.array(self.template.init_params, dtype=float)

    @classmethod
    def from_descriptor(cls, data: dict, text: Optional[str] = None) -> 'Experiment':
        validate_descriptor(data, text)
        data = apply_defaults(data)
        try:
            modes = data['modes']
            space = ModeSpace(tuple(modes['cutoffs']), tuple(tuple(p) for p in modes['paths']))
            names = tuple(p['name'] for p in data['parameters'])
            bounds = tuple(
                (-math.inf if lo is None else lo, math.inf if hi is None else hi)
                for lo, hi in (p['bounds'] for p in data['parameters'])
            )
            sources = tuple(SourceSpec.from_dict(s) for s in data['sources'])
            topology = Topology(space, sources, names, bounds)
            pattern = ClickPattern.from_list(data['detectors'])
            template = TopologyTemplate(data['name'], topology, pattern, tuple(map(tuple, data['symmetry'])),
                                        tuple(float(p['init']) for p in data['parameters']))
        except SqueezeDesignerError as e:
            if isinstance(e, DescriptorError):
                raise
            raise DescriptorError(str(e), 'sources', _line_of(text, ['sources'])) from e
        target = make_target(data['target'])
        output_modes = pattern.output_modes(space)
        if len(output_modes) != target.state.space.num_modes:
            raise DescriptorError(
                f"target {target.name} has {target.state.space.num_modes} modes, "
                f"the pattern has {len(output_modes)} output modes",
                'detectors', _line_of(text, ['detectors']),
            )
        start, stop, step = data['f0_range']
        return cls(data, template, target, LossWeights.from_list(data['weights']), f0_schedule(start, stop, step),
                   OptConfig.from_dict(data['optimizer']))

    def with_overrides(self, cutoff: Optional[int] = None, seed: Optional[int] = None,
                       f0_range: Optional[Tuple[float, float, float]] = None,
                       weights_preset: Optional[str] = None) -> 'Experiment':
        data = copy.deepcopy(self.descriptor)
        if cutoff is not None:
            data['modes']['cutoffs'] = [int(cutoff)] * len(data['modes']['cutoffs'])
        if seed is not None:
            data['seed'] = int(seed)
            data['optimizer']['seed'] = int(seed)
        if f0_range is not None:
            data['f0_range'] = list(f0_range)
        if weights_preset is not None:
            data['weights_preset'] = weights_preset
            data['weights'] = LossWeights.preset(weights_preset).as_list()
        return Experiment.from_descriptor(data)

    def estimated_dimension(self) -> int:
        return self.topology.space.dimension

    def scale_grid(self) -> Tuple[str, np.ndarray]:
        """Scaled parameter and its grid; the first parameter over 0.05..0.8 when no ``scale`` block is given."""
        scale = self.descriptor.get('scale') or {
            'param': self.topology.parameters[0], 'start': 0.05, 'stop': 0.8, 'num': 16}
        return scale['param'], np.linspace(scale['start'], scale['stop'], scale['num'])

    def discovery_config(self) -> DiscoveryConfig:
        search = self.descriptor['search']
        return DiscoveryConfig(
            template=self.template,
            target=self.target.state,
            weights=self.weights,
            schedule=self.schedule,
            opt=self.opt,
            num_orderings=search['num_orderings'],
            pool_size=search['pool_size'],
            seed=self.seed,
            method=search['method'],
            both_directions=search['both_directions'],
        )


def available() -> List[str]:
    return sorted(p.stem for p in DESCRIPTOR_DIR.glob('*.json'))


def descriptor_path(name: str) -> Path:
    path = DESCRIPTOR_DIR / f'{name}.json'
    if not path.exists():
        raise UnknownNameError(f"unknown experiment {name!r}; known: {available()}")
    return path


def load_experiment(name: str) -> Experiment:
    path = descriptor_path(name)
    text = path.read_text()
    return Experiment.from_descriptor(json.loads(text), text)


def make_baseline(name: str) -> TopologyTemplate:
    if name not in BASELINES:
        raise UnknownNameError(f"unknown baseline {name!r}; known: {list(BASELINES)}")
    return load_experiment(name).template


# ---------------------------------------------------------------------------
# reproduction


@dataclass
class ReproduceReport:
    name: str
    mode: str
    rows: List[dict]
    topologies: List[dict]
    summary: dict = field(default_factory=dict)


def front_row(point: ParetoPoint) -> dict:
    return {
        'f0': point.f0,
        'fidelity': point.fidelity,
        'probability': point.probability,
        'counts_per_s': point.counts_per_s,
        'ordering_key': point.ordering_key,
        'params_json': json.dumps(point.param_dict(), sort_keys=True),
    }


@dataclass
class CheckedPoints:
    """Design points that held up at raised cutoffs, as csv rows and per-ordering fronts."""

    rows: List[dict] = field(default_factory=list)
    fronts: Dict[str, ParetoFront] = field(default_factory=dict)
    passed: int = 0
    dropped: int = 0

    @property
    def counts(self) -> dict:
        return {'passed': self.passed, 'dropped': self.dropped}


def check_points(experiment: Experiment, topologies: Dict[str, Topology],
                 points: Dict[str, Sequence[ParetoPoint]]) -> CheckedPoints:
    """Recheck every point at raised cutoffs and keep only those that pass."""
    checked = CheckedPoints()
    for key in sorted(points):
        front = ParetoFront()
        for point in points[key]:
            try:
                passed = recheck(topologies[key], point.param_dict(), experiment.pattern,
                                 experiment.target.state).passed
            except SqueezeDesignerError as e:
                logger.warning(f"recheck of {key} at f0={point.f0:.4f} failed: {e}")
                passed = False
            if not passed:
                checked.dropped += 1
                continue
            checked.passed += 1
            checked.rows.append(front_row(point))
            front.add(point)
        checked.fronts[key] = front
    if checked.dropped:
        logger.warning(f"{experiment.name}: dropped {checked.dropped} points that moved at raised cutoffs")
    return checked


def scale_points(experiment: Experiment, topology: Topology, key: str) -> List[ParetoPoint]:
    """One design point per scale grid value with a defined fidelity."""
    param, grid = experiment.scale_grid()
    init = {name: float(v) for name, v in zip(experiment.topology.parameters, experiment.init_params)}
    return [
        ParetoPoint(r['fidelity'], r['fidelity'], r['probability'], tuple({**init, param: r['scale']}.items()), key)
        for r in scale_sweep(topology, experiment.pattern, experiment.target.state, grid, param, init)
        if math.isfinite(r['fidelity'])
    ]


def step_points(outcomes: Dict[str, SweepOutcome]) -> Dict[str, List[ParetoPoint]]:
    """Successful continuation steps as design points."""
    return {
        key: [
            ParetoPoint(s.f0, s.result.fidelity, s.result.probability, tuple(s.result.param_dict().items()), key)
            for s in outcome.steps if s.result is not None and s.result.success
        ]
        for key, outcome in outcomes.items()
    }


def _best_by_level(fronts: Dict[str, ParetoFront]) -> Dict[str, Optional[str]]:
    result = {}
    for level in REPORT_LEVELS:
        best_key, best_p = None, -1.0
        for key in sorted(fronts):
            point = fronts[key].best_at(level)
            if point is not None and point.probability > best_p:
                best_key, best_p = key, point.probability
        result[f'{level:.2f}'] = best_key
    return result


def dominant_ordering(best_by_fidelity: Dict[str, Optional[str]]) -> Optional[str]:
    """The ordering that is best at every reported fidelity level, if there is one."""
    keys = set(best_by_fidelity.values())
    return keys.pop() if len(keys) == 1 and None not in keys else None


def front_summary(fronts: Dict[str, ParetoFront]) -> dict:
    report = select_best([SweepOutcome(key, [], front) for key, front in fronts.items()])
    by_level = _best_by_level(fronts)
    best = report.best if report.best is not None and len(fronts[report.best]) else None
    return {
        'best': best,
        'hypervolumes': report.hypervolumes,
        'best_by_fidelity': by_level,
        'dominant': dominant_ordering(by_level),
    }


def cluster_orderings(experiment: Experiment, orderings: Sequence[CanonicalOrdering]) -> dict:
    """Group orderings whose count-rate curves coincide along the scale.

    With a ``clustering.grid`` block the curves are the low-gain responses on
    that grid; otherwise they are the log10 count rates on the scale grid.
    """
    clustering = experiment.descriptor.get('clustering', {})
    param, grid = experiment.scale_grid()
    if clustering.get('grid'):
        spec = clustering['grid']
        grid = np.linspace(spec['start'], spec['stop'], spec['num'])
    init = {name: float(v) for name, v in zip(experiment.topology.parameters, experiment.init_params)}
    curves = {}
    for ordering in orderings:
        rows = scale_sweep(experiment.template.realize(ordering.key), experiment.pattern, experiment.target.state,
                           grid, param, init)
        curves[ordering.key_string] = [math.log10(max(r['counts_per_s'], Config.NO_SUPPORT_FLOOR)) for r in rows]
    if clustering.get('grid'):
        curves = low_gain_response(curves, grid)
    groups = cluster_fronts(curves, clustering.get('threshold', 0.5))
    result = {'clusters': len(groups), 'groups': groups}
    labels = clustering.get('position_labels')
    if labels:
        by_key = {o.key_string: o for o in orderings}
        result['groups_follow_positions'] = groups_follow_positions(
            groups, by_key, labels, experiment.template.commutation_table())
    return result


def _reproduce_scale(experiment: Experiment) -> ReproduceReport:
    orderings = enumerate_canonical(experiment.template, experiment.descriptor['search']['method'])
    realized, points, topologies = {}, {}, []
    for ordering in orderings:
        key = ordering.key_string
        realized[key] = experiment.template.realize(ordering.key)
        points[key] = scale_points(experiment, realized[key], key)
        topologies.append({'ordering_key': key, 'topology': realized[key].to_dict()})
    checked = check_points(experiment, realized, points)
    summary = {'orderings': len(orderings), **front_summary(checked.fronts), 'recheck': checked.counts}
    if len(orderings) > 1:
        summary.update(cluster_orderings(experiment, orderings))
    return ReproduceReport(experiment.name, 'scale', checked.rows, topologies, summary)


def _reproduce_sweep(experiment: Experiment, runner) -> ReproduceReport:
    orderings = enumerate_canonical(experiment.template, experiment.descriptor['search']['method'])
    jobs, topologies, realized = [], [], {}
    for ordering in orderings:
        topology = experiment.template.realize(ordering.key)
        realized[ordering.key_string] = topology
        jobs.append(SweepJob(ordering.key_string, topology, experiment.pattern, experiment.target.state,
                             experiment.schedule, experiment.weights, experiment.opt, experiment.init_params,
                             experiment.descriptor['search']['both_directions']))
        topologies.append({'ordering_key': ordering.key_string, 'topology': topology.to_dict()})
    report = pareto_sweep(jobs, runner)
    checked = check_points(experiment, realized, step_points(report.outcomes))
    summary = {
        'orderings': len(orderings),
        **front_summary(checked.fronts),
        'failed_steps': sum(1 for o in report.outcomes.values() for s in o.steps if s.error),
        'recheck': checked.counts,
    }
    return ReproduceReport(experiment.name, 'sweep', checked.rows, topologies, summary)


def _reproduce_discovery(experiment: Experiment, runner, optimizer) -> ReproduceReport:
    discovery = discovery_run(experiment.discovery_config(), optimizer=optimizer, runner=runner)
    topologies = [{'ordering_key': c.key, 'topology': c.topology.to_dict()} for c in discovery.pool]
    summary = discovery.summary()
    rows = []
    if discovery.sweep:
        pool = {c.key: c.topology for c in discovery.pool}
        checked = check_points(experiment, pool, step_points(discovery.sweep.outcomes))
        rows = checked.rows
        summary.update(front_summary(checked.fronts))
        summary['recheck'] = checked.counts
    return ReproduceReport(experiment.name, 'discovery', rows, topologies, summary)


def reproduce(experiment: Experiment, runner=serial_runner, optimizer=None) -> ReproduceReport:
    """Scale sweep, continuation sweep or discovery run, depending on the descriptor mode."""
    logger.info(f"reproducing {experiment.name} ({experiment.mode})")
    if experiment.mode == 'scale':
        report = _reproduce_scale(experiment)
    elif experiment.mode == 'sweep':
        report = _reproduce_sweep(experiment, runner)
    else:
        report = _reproduce_discovery(experiment, runner, optimizer)
    logger.info(f"{experiment.name}: {len(report.rows)} rows, best {report.summary.get('best')}")
    return report
