from django.apps import AppConfig


class G2pAppConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'g2p_app'
    verbose_name = 'rg2p - Robust Grapheme-to-Phoneme'

    def ready(self):
        from django.conf import settings
        from .tensorcore import set_default_dtype

        set_default_dtype(getattr(settings, 'G2P_TENSOR_DTYPE', 'float32'))
