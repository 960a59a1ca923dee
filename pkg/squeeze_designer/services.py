"""Service layer for archived runs and design points."""
import json
from datetime import datetime
from typing import Any, Dict, List, Optional

from sqlalchemy import func

from squeeze_designer.database import DesignPoint, Run, get_db_session
from squeeze_designer.search import ParetoFront, ParetoPoint


def _point_dict(point: DesignPoint) -> Dict[str, Any]:
    return {
        'id': point.id,
        'ordering_key': point.ordering_key,
        'f0': point.f0,
        'fidelity': point.fidelity,
        'probability': point.probability,
        'counts_per_s': point.counts_per_s,
        'params': point.params,
    }


class RunService:
    """Service class for run bookkeeping."""

    @staticmethod
    def create_run(experiment: str, command: str, mode: Optional[str] = None, seed: int = 0,
                   descriptor: Optional[dict] = None) -> int:
        """Open a run record and return its id."""
        db = get_db_session()
        try:
            descriptor = descriptor or {}
            run = Run(
                experiment=experiment,
                command=command,
                mode=mode,
                seed=seed,
                weight_preset=descriptor.get('weights_preset'),
                cutoffs=descriptor.get('modes', {}).get('cutoffs'),
                descriptor=descriptor or None,
            )
            db.add(run)
            db.commit()
            return run.id
        finally:
            db.close()

    @staticmethod
    def finish_run(run_id: int, summary: Optional[dict] = None, status: str = 'success',
                   error: Optional[str] = None) -> bool:
        db = get_db_session()
        try:
            run = db.query(Run).filter(Run.id == run_id).first()
            if not run:
                return False
            run.summary = summary
            run.status = status
            run.error = error
            run.finished_at = datetime.utcnow()
            db.commit()
            return True
        finally:
            db.close()

    @staticmethod
    def add_points(run_id: int, rows: List[Dict[str, Any]]) -> int:
        """Store front.csv-shaped rows; ``params_json`` is decoded into the JSON column."""
        db = get_db_session()
        try:
            for row in rows:
                params = row.get('params_json')
                db.add(DesignPoint(
                    run_id=run_id,
                    ordering_key=row['ordering_key'],
                    f0=row['f0'],
                    fidelity=row['fidelity'],
                    probability=row['probability'],
                    counts_per_s=row['counts_per_s'],
                    params=json.loads(params) if isinstance(params, str) else params,
                ))
            db.commit()
            return len(rows)
        finally:
            db.close()

    @staticmethod
    def get_run_with_points(run_id: int) -> Optional[Dict[str, Any]]:
        """Get a run with all its design points."""
        db = get_db_session()
        try:
            run = db.query(Run).filter(Run.id == run_id).first()
            if not run:
                return None
            return {
                'id': run.id,
                'experiment': run.experiment,
                'command': run.command,
                'mode': run.mode,
                'seed': run.seed,
                'status': run.status,
                'summary': run.summary,
                'error': run.error,
                'created_at': run.created_at.isoformat() if run.created_at else None,
                'finished_at': run.finished_at.isoformat() if run.finished_at else None,
                'points': [_point_dict(p) for p in run.points],
            }
        finally:
            db.close()

    @staticmethod
    def list_runs(limit: int = 100, offset: int = 0) -> List[Dict[str, Any]]:
        """Get all runs with pagination, newest first."""
        db = get_db_session()
        try:
            runs = db.query(Run).order_by(Run.id.desc()).offset(offset).limit(limit).all()
            return [
                {
                    'id': run.id,
                    'experiment': run.experiment,
                    'command': run.command,
                    'status': run.status,
                    'points_count': len(run.points),
                } for run in runs
            ]
        finally:
            db.close()


class FrontService:
    """Pareto fronts across every archived run of an experiment."""

    @staticmethod
    def best_points(experiment: str) -> List[Dict[str, Any]]:
        db = get_db_session()
        try:
            points = (
                db.query(DesignPoint)
                .join(Run)
                .filter(Run.experiment == experiment, Run.status == 'success')
                .all()
            )
            front = ParetoFront(
                ParetoPoint(p.f0, p.fidelity, p.probability, tuple((p.params or {}).items()), p.ordering_key)
                for p in points
            )
            return [point.to_dict() for point in front]
        finally:
            db.close()


class StatsService:
    """Service class for statistics about the archive."""

    @staticmethod
    def get_comprehensive_stats() -> Dict[str, Any]:
        db = get_db_session()
        try:
            total_runs = db.query(Run).count()
            total_points = db.query(DesignPoint).count()
            by_status = dict(db.query(Run.status, func.count(Run.id)).group_by(Run.status).all())
            experiments = db.query(Run.experiment).distinct().count()
            best_fidelity = db.query(func.max(DesignPoint.fidelity)).scalar()
            successful = by_status.get('success', 0)

            return {
                'total_runs': total_runs,
                'total_points': total_points,
                'experiments': experiments,
                'runs_by_status': by_status,
                'best_fidelity': best_fidelity,
                'success_percent': round(successful / total_runs * 100, 2) if total_runs > 0 else 0,
            }
        finally:
            db.close()
