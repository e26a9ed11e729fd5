from django.apps import AppConfig
from django.conf import settings


class PointflowAppConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'pointflow_app'
    verbose_name = 'Point-cloud flow surrogate'

    def ready(self):
        from . import tensor_core

        # NaN/Inf checks after every affine call when running with POINTFLOW_DEBUG=1.
        tensor_core.enable_debug_checks(settings.DEBUG)
