"""
utils/logger.py
---------------
Tiny logger factory; every module does `logger = get_logger(__name__)`.
"""
import logging

from utils.config import settings


def get_logger(name: str = "mt_counterexample"):
    logger = logging.getLogger(name)
    if not logger.handlers:
        logger.setLevel(getattr(logging, settings.log_level, logging.INFO))
        ch = logging.StreamHandler()
        ch.setFormatter(logging.Formatter("[%(levelname)s] %(name)s: %(message)s"))
        logger.addHandler(ch)
    return logger
