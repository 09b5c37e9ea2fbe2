from django.apps import AppConfig
from django.utils.translation import gettext_lazy as _


class MeshingConfig(AppConfig):
    name = 'compsdf.meshing'
    verbose_name = _('Извлечение сеток')
