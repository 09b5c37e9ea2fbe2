from django.apps import AppConfig
from django.utils.translation import gettext_lazy as _


class GeometryConfig(AppConfig):
    name = 'compsdf.geometry'
    verbose_name = _('Аналитическая геометрия')
