from django.contrib import admin

from .models import AblationCell, RunRecord


@admin.register(RunRecord)
class RunRecordAdmin(admin.ModelAdmin):
    list_display = ['id', 'command', 'short_hash', 'seed', 'wall_time', 'created_at']
    list_filter = ['command', 'created_at']
    search_fields = ['config_hash', 'output_dir']
    readonly_fields = ['created_at']

    def short_hash(self, obj):
        return obj.config_hash[:12]
    short_hash.short_description = 'Config'


@admin.register(AblationCell)
class AblationCellAdmin(admin.ModelAdmin):
    list_display = ['sweep_id', 'sweep', 'value', 'seed', 'created_at']
    list_filter = ['sweep']
    search_fields = ['sweep_id']
