from django.apps import AppConfig
from django.utils.translation import gettext_lazy as _


class CommonConfig(AppConfig):
    name = 'compsdf.common'
    verbose_name = _('Общие компоненты и команды')
