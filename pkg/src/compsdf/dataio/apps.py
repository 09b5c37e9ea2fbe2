from django.apps import AppConfig
from django.utils.translation import gettext_lazy as _


class DataioConfig(AppConfig):
    name = 'compsdf.dataio'
    verbose_name = _('Данные сцены')
