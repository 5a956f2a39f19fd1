"""General utilities"""
import logging
from functools import wraps
from time import time

# Create a custom logger
logger = logging.getLogger("ppisvrg")
logger.setLevel(logging.DEBUG)
FORMAT = "%(levelname)s:[%(filename)s:%(lineno)s %(funcName)20s() ] %(message)s"

# Console handler only; file output is opt-in through add_file_handler()
c_handler = logging.StreamHandler()
c_handler.setLevel(logging.INFO)
c_handler.setFormatter(logging.Formatter(FORMAT))
logger.addHandler(c_handler)


def add_file_handler(path: str, level: int = logging.WARNING) -> logging.Handler:
    """
    Attach a file handler to the package logger.

    Args:
        path (str): The log file to append to.
        level (int, optional): Minimum level written to the file. Defaults to WARNING.

    Returns:
        logging.Handler: The created handler, so callers can detach it again.
    """
    f_handler = logging.FileHandler(path)
    f_handler.setLevel(level)
    f_handler.setFormatter(logging.Formatter("%(asctime)s|" + FORMAT))
    logger.addHandler(f_handler)
    return f_handler


def set_console_level(level: int):
    c_handler.setLevel(level)


def timeit(f):
    @wraps(f)
    def wrap(*args, **kw):
        ts = time()
        result = f(*args, **kw)
        te = time()
        logger.debug(f"Timeit: {f.__name__}(), took: {te-ts:2.4f} sec")
        return result

    return wrap
