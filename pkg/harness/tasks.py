import logging

from celery import shared_task

from core.exceptions import SimulationError
from .experiments import run_cell

logger = logging.getLogger(__name__)


@shared_task(bind=True, max_retries=2)
def run_ablation_cell(self, payload):
    """Generate, train and evaluate one sweep cell; returns its result row."""
    try:
        result = run_cell(payload)
    except SimulationError:
        # Deterministic in (config, seed)
        raise
    except Exception as exc:
        logger.warning("cell %s failed (%s), retrying", payload.get('cell_id'), exc)
        raise self.retry(exc=exc, countdown=30)
    logger.info("cell %s done in %.1fs", result['cell_id'], result['wall_time'])
    return result
