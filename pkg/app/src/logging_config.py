import logging
import logging.config
from typing import Optional

APP_LOGGERS = ("model", "stark", "montecarlo", "tagproc", "fit", "app", "cli")


def setup_logging(
    default_level=logging.INFO, log_file: Optional[str] = None
):
    handler_names = ["console"]
    # the file handler records DEBUG even when the console is quieter
    logger_level = logging.DEBUG if log_file else default_level
    handlers = {
        "console": {
            "level": default_level,
            "class": "rich.logging.RichHandler",
            "formatter": "console",
            "rich_tracebacks": True,
            "show_path": False,
        },
    }
    if log_file:
        handlers["file"] = {
            "level": "DEBUG",
            "class": "logging.FileHandler",
            "filename": log_file,
            "formatter": "standard",
            "mode": "a",
        }
        handler_names.append("file")

    loggers = {
        "": {  # root logger
            "handlers": handler_names,
            "level": logger_level,
            "propagate": True,
        },
    }
    # Application loggers
    for name in APP_LOGGERS:
        loggers[name] = {
            "handlers": handler_names,
            "level": logger_level,
            "propagate": False,
        }

    logging_config = {
        "version": 1,
        "disable_existing_loggers": False,
        "formatters": {
            "standard": {
                "format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
            },
            "console": {"format": "%(name)s: %(message)s"},
        },
        "handlers": handlers,
        "loggers": loggers,
    }

    logging.config.dictConfig(logging_config)
