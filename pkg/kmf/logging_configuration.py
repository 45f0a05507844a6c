import logging.config

from kmf.config import Config, get_config


def configure_logging(level: str = None) -> None:
    """Install the console handler on the root logger"""
    settings = Config.get_logging_config()
    level = level or Config.get('LOG_LEVEL') or get_config().LOG_LEVEL

    logging.config.dictConfig({
        'version': 1,
        'disable_existing_loggers': False,
        'formatters': {
            'console': {
                '()': 'coloredlogs.ColoredFormatter',
                'fmt': settings['LOG_FORMAT']
            }
        },
        'handlers': {
            'console': {
                'class': 'logging.StreamHandler',
                'formatter': 'console',
                'stream': 'ext://sys.stderr'
            }
        },
        'loggers': {
            '': {
                'handlers': ['console'],
                'level': level.upper()
            }
        }
    })
