from django.apps import AppConfig


class SynthworldConfig(AppConfig):
    name = 'synthworld'
    verbose_name = 'Synthetic world'
