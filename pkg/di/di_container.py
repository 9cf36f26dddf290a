from dependency_injector import containers, providers

from config.config import load_config, load_settings
from utils.logging_config import configure_logging


class Container(containers.DeclarativeContainer):
    """
    Dependency Injection container for the tradeoff toolkit.

    - ✅ `settings`: run settings from `config/settings.yaml` (or `PASS_SETTINGS_PATH`).
    - ✅ `system_config`: the deployment parameters, read from the path in `config.system_path`.
    - ✅ `logging`: structured logging, initialized once per process.
    """

    config = providers.Configuration()

    settings = providers.Singleton(load_settings, config.settings_path)

    system_config = providers.Singleton(load_config, config.system_path)

    logging = providers.Singleton(configure_logging, settings)
