import sys
import logging

import constants

LOG_FORMAT = logging.Formatter('[%(asctime)s] %(levelname)-8s %(name)-10s %(message)s')

DEFAULT_LEVEL = logging.getLevelName(constants.LOG_LEVEL)
if not isinstance(DEFAULT_LEVEL, int):
    DEFAULT_LEVEL = logging.INFO


def create_logger(name, level=None):
    """Returns the logger called `name`, attaching a stdout handler the first
    time it is requested.

    Args:
        name (str): The name of the logger.
        level (int, optional): Logging level. Defaults to `PLAP_LOG_LEVEL`.
    """

    logger = logging.getLogger(name)
    logger.setLevel(DEFAULT_LEVEL if level is None else level)

    # Only one console handler per logger, even when modules are reloaded
    if not logger.handlers:
        console_handler = logging.StreamHandler(sys.stdout)
        console_handler.setFormatter(LOG_FORMAT)
        logger.addHandler(console_handler)

    logger.propagate = False

    return logger
