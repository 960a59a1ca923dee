"""Command-line front end: descriptor parsing, run orchestration and data emission."""
import argparse
import csv
import json
import logging
import sys
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence

from squeeze_designer.config import Config
from squeeze_designer.database import create_tables
from squeeze_designer.errors import DescriptorError, OptimizationError, SqueezeDesignerError
from squeeze_designer.experiments import (
    Experiment,
    available,
    check_points,
    descriptor_path,
    reproduce,
    scale_points,
    step_points,
)
from squeeze_designer.measurement import (
    ancilla_sector_weights,
    counts_per_second,
    fidelity_by_ancilla_sector,
    measure,
    postselect,
)
from squeeze_designer.objective import optimize, truncation_error
from squeeze_designer.search import (
    SweepJob,
    enumerate_canonical,
    parameter_commutations,
    pareto_sweep,
)
from squeeze_designer.services import FrontService, RunService, StatsService
from squeeze_designer.tasks import celery_optimizer, celery_runner, persist_front_task

logger = logging.getLogger(__name__)

CSV_FIELDS = ('f0', 'fidelity', 'probability', 'counts_per_s', 'ordering_key', 'params_json')

EXIT_ERROR = 2


class JsonLinesHandler(logging.Handler):
    """Writes one JSON object per log record; ``extra={'data': {...}}`` is merged in."""

    def __init__(self, path: Path):
        super().__init__()
        self._stream = open(path, 'w', encoding='utf-8')

    def emit(self, record: logging.LogRecord) -> None:
        try:
            entry = {
                'time': datetime.fromtimestamp(record.created, timezone.utc).isoformat(),
                'level': record.levelname,
                'logger': record.name,
                'message': record.getMessage(),
            }
            entry.update(getattr(record, 'data', {}))
            self._stream.write(json.dumps(entry, default=str) + '\n')
            self._stream.flush()
        except Exception:
            self.handleError(record)

    def close(self) -> None:
        self._stream.close()
        super().close()


@contextmanager
def run_log(out_dir: Path, experiment: Experiment, command: str) -> Iterator[Path]:
    """Attach a log.jsonl handler to the package logger for the duration of a run."""
    out_dir.mkdir(parents=True, exist_ok=True)
    package_logger = logging.getLogger('squeeze_designer')
    handler = JsonLinesHandler(out_dir / 'log.jsonl')
    handler.setLevel(Config.LOG_LEVEL)
    previous = package_logger.level
    package_logger.addHandler(handler)
    if package_logger.getEffectiveLevel() > handler.level:
        package_logger.setLevel(handler.level)
    try:
        logger.info(f"{command} {experiment.name}", extra={'data': {
            'command': command,
            'seed': experiment.seed,
            'schema_version': experiment.descriptor['schema_version'],
            'cutoffs': experiment.descriptor['modes']['cutoffs'],
            'weights_preset': experiment.descriptor['weights_preset'],
            'descriptor': experiment.descriptor,
        }})
        yield out_dir
    finally:
        package_logger.removeHandler(handler)
        package_logger.setLevel(previous)
        handler.close()


def parse_experiment(path) -> Experiment:
    """Load, validate and default a descriptor file, or a shipped descriptor by name."""
    path = Path(path)
    if not path.exists():
        if path.suffix or str(path) not in available():
            raise DescriptorError(f"no such descriptor: {path}", 'experiment')
        path = descriptor_path(str(path))
    text = path.read_text(encoding='utf-8')
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise DescriptorError(f"invalid JSON: {e.msg}", '<root>', e.lineno) from e
    experiment = Experiment.from_descriptor(data, text)
    dimension = experiment.estimated_dimension()
    if dimension > Config.MAX_DIMENSION:
        logger.warning(
            f"{experiment.name}: state dimension {dimension} exceeds the memory budget of "
            f"{Config.MAX_DIMENSION} amplitudes",
            extra={'data': {'dimension': dimension, 'budget': Config.MAX_DIMENSION}},
        )
    return experiment


def write_front_csv(path: Path, rows: Sequence[dict]) -> None:
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.DictWriter(f, fieldnames=CSV_FIELDS, extrasaction='ignore')
        writer.writeheader()
        writer.writerows(rows)


def write_json(path: Path, data) -> None:
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, sort_keys=True, default=float)
        f.write('\n')


def emit(data) -> None:
    """Machine-readable result on stdout."""
    print(json.dumps(data, sort_keys=True, default=float))


# ---------------------------------------------------------------------------
# argument handling


def f0_range_arg(value: str):
    try:
        start, stop, step = (float(v) for v in value.split(':'))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a:b:step, got {value!r}") from None
    return start, stop, step


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog='squeeze-designer',
                                     description='Design photonic state sources from squeezers and detectors.')
    sub = parser.add_subparsers(dest='command', required=True)

    def experiment_command(name: str, help_text: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument('--experiment', required=True, help='descriptor path or shipped descriptor name')
        p.add_argument('--out', type=Path, help='output directory (default runs/<name>)')
        p.add_argument('--seed', type=int)
        p.add_argument('--cutoff-override', type=int)
        p.add_argument('--threads', type=int, default=1)
        p.add_argument('--f0-range', type=f0_range_arg)
        p.add_argument('--weights-preset')
        return p

    for name in ('simulate', 'decompose'):
        p = experiment_command(name, f'{name} the descriptor topology at fixed parameters')
        p.add_argument('--params', type=json.loads, default={}, help='JSON object overriding parameter values')
    p = experiment_command('optimize', 'optimize the descriptor topology at one target fidelity')
    p.add_argument('--f0', type=float, help='target fidelity (default: start of the f0 range)')
    experiment_command('sweep', 'sweep the descriptor topology and write front.csv')
    p = experiment_command('enumerate-orderings', 'list canonical source orderings')
    p.add_argument('--method', choices=('exact', 'local'))
    p.add_argument('--no-symmetry', action='store_true')
    p = experiment_command('reproduce', 'run the experiment mode and write the report bundle')
    p.add_argument('--no-persist', action='store_true', help='do not archive the run in the database')

    sub.add_parser('init-db', help='create the results archive tables')
    p = sub.add_parser('stats', help='show results archive statistics')
    p.add_argument('--runs', type=int, default=10, help='number of recent runs to list')
    p.add_argument('--front', metavar='EXPERIMENT', help='also list the archived Pareto front of an experiment')
    return parser


def load(args) -> Experiment:
    experiment = parse_experiment(args.experiment)
    if any(v is not None for v in (args.cutoff_override, args.seed, args.f0_range, args.weights_preset)):
        experiment = experiment.with_overrides(args.cutoff_override, args.seed, args.f0_range, args.weights_preset)
    return experiment


def out_dir(args, experiment: Experiment) -> Path:
    return args.out or Path('runs') / experiment.name


def fixed_params(experiment: Experiment, overrides: Dict[str, float]) -> Dict[str, float]:
    values = dict(zip(experiment.topology.parameters, (float(v) for v in experiment.init_params)))
    unknown = set(overrides) - set(values)
    if unknown:
        raise DescriptorError(f"unknown parameters {sorted(unknown)}", 'params')
    values.update({k: float(v) for k, v in overrides.items()})
    return values


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    experiment = load(args)
    directory = out_dir(args, experiment)
    with run_log(directory, experiment, 'simulate'):
        params = fixed_params(experiment, args.params)
        state = experiment.topology.run(params)
        fidelity, probability = measure(state, experiment.pattern, experiment.target.state)
        result = {
            'experiment': experiment.name,
            'params': params,
            'fidelity': fidelity,
            'probability': probability,
            'counts_per_s': counts_per_second(probability),
            'truncation_error': truncation_error(state),
            'commutations': parameter_commutations(experiment.topology, params),
        }
        logger.info(f"simulate: F={fidelity:.6f}, P={probability:.4e}", extra={'data': {'result': result}})
        write_json(directory / 'simulate.json', result)
        write_json(directory / 'state.json', state.to_snapshot())
    emit(result)
    return 0


def cmd_optimize(args) -> int:
    experiment = load(args)
    directory = out_dir(args, experiment)
    f0 = args.f0 if args.f0 is not None else experiment.schedule[0]
    with run_log(directory, experiment, 'optimize'):
        result = optimize(experiment.topology, experiment.pattern, experiment.target.state, f0,
                          experiment.weights, experiment.init_params, experiment.opt)
        data = {'experiment': experiment.name, 'f0': f0, **result.to_dict(), 'trace': result.trace}
        logger.info(f"optimize: F={result.fidelity:.6f}, P={result.probability:.4e}, {result.message}")
        write_json(directory / 'optimize.json', data)
    if not result.success:
        raise OptimizationError(f"optimization at f0={f0} did not converge: {result.message}")
    emit({k: v for k, v in data.items() if k != 'trace'})
    return 0


def cmd_sweep(args) -> int:
    experiment = load(args)
    directory = out_dir(args, experiment)
    key = '-'.join(experiment.template.labels)
    topologies = {key: experiment.topology}
    with run_log(directory, experiment, 'sweep'):
        if experiment.mode == 'scale':
            points = {key: scale_points(experiment, experiment.topology, key)}
        else:
            job = SweepJob(key, experiment.topology, experiment.pattern, experiment.target.state, experiment.schedule,
                           experiment.weights, experiment.opt, experiment.init_params,
                           experiment.descriptor['search']['both_directions'])
            points = step_points(pareto_sweep([job], celery_runner(args.threads)).outcomes)
        checked = check_points(experiment, topologies, points)
        write_front_csv(directory / 'front.csv', checked.rows)
        write_json(directory / 'topologies.json', [{'ordering_key': key, 'topology': experiment.topology.to_dict()}])
        logger.info(f"sweep: {len(checked.rows)} rows written, {checked.dropped} dropped by the recheck")
    emit({'experiment': experiment.name, 'rows': len(checked.rows), 'recheck': checked.counts, 'out': str(directory)})
    return 0


def cmd_enumerate_orderings(args) -> int:
    experiment = load(args)
    directory = out_dir(args, experiment)
    method = args.method or experiment.descriptor['search']['method']
    with run_log(directory, experiment, 'enumerate-orderings'):
        orderings = enumerate_canonical(experiment.template, method, use_symmetry=not args.no_symmetry)
        data = {
            'experiment': experiment.name,
            'method': method,
            'symmetry': not args.no_symmetry,
            'count': len(orderings),
            'orderings': [o.key_string for o in orderings],
        }
        write_json(directory / 'orderings.json', data)
    emit(data)
    return 0


def cmd_decompose(args) -> int:
    experiment = load(args)
    directory = out_dir(args, experiment)
    with run_log(directory, experiment, 'decompose'):
        params = fixed_params(experiment, args.params)
        projected, probability = postselect(experiment.topology.run(params), experiment.pattern)
        target = experiment.target.state
        fractions = fidelity_by_ancilla_sector(projected, experiment.pattern, target)
        weights = ancilla_sector_weights(projected, experiment.pattern, target)
        rows = [{'ancilla_photons': n, 'fidelity': weights.get(n, 0.0), 'fraction': fractions[n]}
                for n in sorted(fractions)]
        with open(directory / 'decompose.csv', 'w', newline='', encoding='utf-8') as f:
            writer = csv.DictWriter(f, fieldnames=('ancilla_photons', 'fidelity', 'fraction'))
            writer.writeheader()
            writer.writerows(rows)
        logger.info(f"decompose: {len(rows)} ancilla sectors", extra={'data': {'sectors': rows}})
    emit({'experiment': experiment.name, 'probability': probability, 'sectors': rows})
    return 0


def persist(experiment: Experiment, command: str, rows: List[dict], summary: dict) -> Optional[int]:
    create_tables()
    reply = persist_front_task.delay({
        'experiment': experiment.name,
        'command': command,
        'mode': experiment.mode,
        'seed': experiment.seed,
        'descriptor': experiment.descriptor,
        'summary': summary,
        'rows': rows,
    }).get()
    return reply.get('run_id')


def cmd_reproduce(args) -> int:
    experiment = load(args)
    directory = out_dir(args, experiment)
    with run_log(directory, experiment, 'reproduce'):
        optimizer = celery_optimizer(experiment.discovery_config(), args.threads) if experiment.mode == 'discovery' \
            else None
        report = reproduce(experiment, runner=celery_runner(args.threads), optimizer=optimizer)
        write_front_csv(directory / 'front.csv', report.rows)
        write_json(directory / 'topologies.json', report.topologies)
        write_json(directory / 'summary.json', report.summary)
        logger.info(f"reproduce: {len(report.rows)} rows", extra={'data': {'summary': report.summary}})
        run_id = None
        if Config.PERSIST_RESULTS and not args.no_persist:
            run_id = persist(experiment, 'reproduce', report.rows, report.summary)
    emit({'experiment': experiment.name, 'mode': report.mode, 'rows': len(report.rows),
          'best': report.summary.get('best'), 'run_id': run_id, 'out': str(directory)})
    return 0


def cmd_init_db(args) -> int:
    create_tables()
    logger.info("Database tables created successfully")
    emit({'status': 'success'})
    return 0


def cmd_stats(args) -> int:
    stats = StatsService.get_comprehensive_stats()
    stats['recent_runs'] = RunService.list_runs(limit=args.runs)
    if args.front:
        stats['front'] = FrontService.best_points(args.front)
    emit(stats)
    return 0


COMMANDS = {
    'simulate': cmd_simulate,
    'optimize': cmd_optimize,
    'sweep': cmd_sweep,
    'enumerate-orderings': cmd_enumerate_orderings,
    'decompose': cmd_decompose,
    'reproduce': cmd_reproduce,
    'init-db': cmd_init_db,
    'stats': cmd_stats,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Dispatch a subcommand; every failure becomes a JSON object on stderr and a non-zero status."""
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except SqueezeDesignerError as e:
        logger.error(f"{args.command} failed: {e}")
        sys.stderr.write(json.dumps(e.to_dict(), sort_keys=True) + '\n')
        return EXIT_ERROR
    except Exception as e:
        logger.exception(f"{args.command} failed unexpectedly")
        error = {'error': 'internal', 'type': type(e).__name__, 'message': str(e)}
        sys.stderr.write(json.dumps(error, sort_keys=True) + '\n')
        return EXIT_ERROR
