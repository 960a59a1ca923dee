"""Celery tasks for distributed ordering optimization, sweeps and result persistence."""
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from typing import Any, Callable, Dict, List, Optional, Sequence

from celery import group
from sqlalchemy.exc import SQLAlchemyError

from squeeze_designer.celery_app import celery_app
from squeeze_designer.database import DesignPoint, Run, get_db_session
from squeeze_designer.errors import SqueezeDesignerError
from squeeze_designer.fock import StateVector
from squeeze_designer.measurement import ClickPattern
from squeeze_designer.objective import LossWeights, OptConfig, OptResult, optimize
from squeeze_designer.ops import Topology
from squeeze_designer.search import (
    DiscoveryConfig,
    ParetoFront,
    SweepJob,
    SweepOutcome,
    SweepStep,
    sweep_topology,
)

logger = logging.getLogger(__name__)


@celery_app.task(bind=True)
def optimize_candidate_task(self, payload: Dict[str, Any]) -> Dict[str, Any]:
    """Optimize one realized ordering at a single target fidelity."""
    key = payload['key']
    try:
        logger.info(f"Starting optimize_candidate_task for {key} at f0={payload['f0']}")
        result = optimize(
            Topology.from_dict(payload['topology']),
            ClickPattern.from_list(payload['pattern']),
            StateVector.from_snapshot(payload['target']),
            payload['f0'],
            LossWeights.from_list(payload['weights']),
            payload['init'],
            OptConfig.from_dict(payload['config']),
        )
        logger.info(f"optimize_candidate_task {key}: F={result.fidelity:.4f}, P={result.probability:.3e}")
        return {'status': 'success', 'key': key, 'result': result.to_dict()}
    except SqueezeDesignerError as e:
        logger.error(f"Error in optimize_candidate_task for {key}: {e}")
        return {'status': 'failed', 'key': key, 'error': e.to_dict()}


@celery_app.task(bind=True)
def sweep_topology_task(self, payload: Dict[str, Any]) -> Dict[str, Any]:
    """Continuation sweep of one pooled topology along its f0 schedule."""
    key = payload['key']
    try:
        logger.info(f"Starting sweep_topology_task for {key}")
        outcome = sweep_topology(SweepJob.from_payload(payload))
        logger.info(f"sweep_topology_task {key}: {len(outcome.front)} front points")
        return {'status': 'success', 'key': key, 'outcome': outcome.to_payload()}
    except SqueezeDesignerError as e:
        logger.error(f"Error in sweep_topology_task for {key}: {e}")
        return {'status': 'failed', 'key': key, 'error': e.to_dict()}


@celery_app.task(bind=True, max_retries=3)
def persist_front_task(self, run_payload: Dict[str, Any]) -> Dict[str, Any]:
    """Archive a finished run and its front rows."""
    try:
        logger.info(f"Starting persist_front_task for {run_payload['experiment']}")
        descriptor = run_payload.get('descriptor') or {}
        db = get_db_session()
        try:
            run = Run(
                experiment=run_payload['experiment'],
                command=run_payload.get('command', 'reproduce'),
                mode=run_payload.get('mode'),
                seed=run_payload.get('seed', 0),
                status=run_payload.get('status', 'success'),
                weight_preset=descriptor.get('weights_preset'),
                cutoffs=descriptor.get('modes', {}).get('cutoffs'),
                descriptor=descriptor or None,
                summary=run_payload.get('summary'),
                finished_at=datetime.utcnow(),
            )
            db.add(run)
            db.flush()
            for row in run_payload.get('rows', []):
                db.add(DesignPoint(
                    run_id=run.id,
                    ordering_key=row['ordering_key'],
                    f0=row['f0'],
                    fidelity=row['fidelity'],
                    probability=row['probability'],
                    counts_per_s=row['counts_per_s'],
                    params=json.loads(row['params_json']),
                ))
            db.commit()
            logger.info(f"persist_front_task completed: run {run.id}, {len(run_payload.get('rows', []))} points")
            return {'status': 'success', 'run_id': run.id, 'points': len(run_payload.get('rows', []))}
        except SQLAlchemyError:
            db.rollback()
            raise
        finally:
            db.close()

    except SQLAlchemyError as e:
        logger.error(f"Database error in persist_front_task: {e}")
        raise self.retry(countdown=60, exc=e)


def run_batch(task, payloads: Sequence[Dict[str, Any]], threads: int = 1) -> List[Dict[str, Any]]:
    """Run ``task`` over ``payloads``; replies come back in payload order."""
    if not payloads:
        return []
    if not celery_app.conf.task_always_eager:
        logger.info(f"Dispatching {len(payloads)} {task.name} tasks to the broker")
        return group(task.s(p) for p in payloads).apply_async().get()
    if threads <= 1:
        return [task.apply(args=(p,)).get() for p in payloads]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(lambda p: task.apply(args=(p,)).get(), payloads))


def celery_runner(threads: int = 1) -> Callable[[Sequence[SweepJob]], List[SweepOutcome]]:
    """Sweep runner for ``pareto_sweep`` backed by ``sweep_topology_task``."""

    def runner(jobs: Sequence[SweepJob]) -> List[SweepOutcome]:
        replies = run_batch(sweep_topology_task, [job.to_payload() for job in jobs], threads)
        outcomes = []
        for job, reply in zip(jobs, replies):
            if reply['status'] == 'success':
                outcomes.append(SweepOutcome.from_payload(reply['outcome']))
                continue
            message = reply['error']['message']
            outcomes.append(SweepOutcome(job.key, [SweepStep(f0, error=message) for f0 in job.schedule],
                                         ParetoFront()))
        return outcomes

    return runner


def celery_optimizer(config: DiscoveryConfig,
                     threads: int = 1) -> Callable[[List[dict]], List[Optional[OptResult]]]:
    """Candidate optimizer for ``discovery_run`` backed by ``optimize_candidate_task``."""
    pattern = config.template.pattern.to_list()
    target = config.target.to_snapshot()
    weights = config.weights.as_list()
    opt = config.opt.__dict__.copy()

    def optimizer(requests: List[dict]) -> List[Optional[OptResult]]:
        payloads = [
            {
                'key': r['key'],
                'topology': r['topology'].to_dict(),
                'pattern': pattern,
                'target': target,
                'f0': float(r['f0']),
                'init': [float(v) for v in r['init']],
                'weights': weights,
                'config': opt,
            }
            for r in requests
        ]
        replies = run_batch(optimize_candidate_task, payloads, threads)
        return [OptResult.from_dict(r['result']) if r['status'] == 'success' else None for r in replies]

    return optimizer
