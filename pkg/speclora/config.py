import logging
import os
from typing import Any, Dict, Optional

from dotenv import load_dotenv


class ConfigManager:
    """Process-level settings read from the environment and an optional .env file"""

    _config: Dict[str, Any] = {}

    DEFAULTS = {
        "SPECLORA_LOG_LEVEL": "INFO",
        "SPECLORA_RECORD_WALL_TIME": "0",
        "SPECLORA_JOBS": "1",
    }

    @staticmethod
    def load_config(env_file: Optional[str] = None):
        # existing environment variables win over the .env file
        load_dotenv(dotenv_path=env_file, override=False)

        local_config = {}
        for key, default in ConfigManager.DEFAULTS.items():
            local_config[key] = os.environ.get(key, default)

        ConfigManager._config = local_config

    @staticmethod
    def get_config(param):
        return ConfigManager._config.get(param, ConfigManager.DEFAULTS.get(param))

    @staticmethod
    def get_bool(param) -> bool:
        value = str(ConfigManager.get_config(param)).strip().lower()
        return value not in ("0", "false", "no", "off", "")

    @staticmethod
    def get_int(param) -> int:
        return int(ConfigManager.get_config(param))


def configure_logging(level: Optional[str] = None):
    """Configure root logging once for an entry point"""
    level_name = (level or ConfigManager.get_config("SPECLORA_LOG_LEVEL") or "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.INFO),
        format="%(levelname)s %(name)s: %(message)s",
    )


ConfigManager.load_config()
