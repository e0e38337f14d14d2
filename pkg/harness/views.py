from django.http import JsonResponse
from django.shortcuts import get_object_or_404

from .models import RunRecord

LIST_LIMIT = 50


def run_payload(record, detail=False):
    payload = {
        'id': record.id,
        'command': record.command,
        'config_hash': record.config_hash,
        'seed': record.seed,
        'wall_time': record.wall_time,
        'created_at': record.created_at.isoformat(),
    }
    if detail:
        payload.update(
            metrics=record.metrics,
            diagnostics=record.diagnostics,
            plan_log_path=record.plan_log_path,
            output_dir=record.output_dir,
        )
    return payload


def run_list(request):
    """Latest run records, optionally filtered by ?config_hash=."""
    records = RunRecord.objects.all()
    config_hash = request.GET.get('config_hash')
    if config_hash:
        records = records.filter(config_hash=config_hash)
    return JsonResponse({'runs': [run_payload(r) for r in records[:LIST_LIMIT]]})


def run_detail(request, run_id):
    return JsonResponse(run_payload(get_object_or_404(RunRecord, id=run_id), detail=True))
