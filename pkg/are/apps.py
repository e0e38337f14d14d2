from django.apps import AppConfig


class AreConfig(AppConfig):
    name = 'are'
    verbose_name = 'Active Reverse Estimation'
