from django.apps import AppConfig


class QuerysetConfig(AppConfig):
    name = 'queryset'
    verbose_name = 'Query set'
