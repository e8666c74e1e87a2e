"""
pybnl.filesystem_utilities
==========================
Contains functions for setting up logging, reading run configuration and laying out the output folder of a run.

Key functions
-------------

:py:func:`init_log` Sets up logging to both console and file

:py:func:`read_config` Reads the default run configuration, optionally overridden by a user .ini file

:py:func:`create_file_structure` Creates the output folder structure used by the `bnl` commands

Function reference
------------------
"""

import configparser
import logging
import os

from pybnl.exceptions import InvalidParamsException

log = logging.getLogger("pybnl")
formatter = logging.Formatter("%(asctime)s: %(levelname)s: %(message)s")

DEFAULT_CONFIG_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), "apps", "bnl.ini")


def init_log(log_path):
    """
    Sets up the log format and log handlers; one for stdout and one to write to a file, 'log_path'.
    Calling this twice with the same path does not duplicate the file handler.

    Parameters
    ----------
    log_path : str
        The path to the file output of this log.

    Returns
    -------
    log : logging.Logger
        The pybnl logger.

    """
    logging.basicConfig(format="%(asctime)s: %(levelname)s: %(message)s")
    log = logging.getLogger("pybnl")
    log.setLevel(logging.INFO)
    log_path = os.path.abspath(log_path)
    already_attached = any(isinstance(handler, logging.FileHandler) and handler.baseFilename == log_path
                           for handler in log.handlers)
    if not already_attached:
        file_handler = logging.FileHandler(log_path)
        file_handler.setLevel(logging.INFO)
        file_handler.setFormatter(formatter)
        log.addHandler(file_handler)
    log.info("****RUN START****")
    return log


def read_config(conf_path=None):
    """
    Reads the packaged default configuration (apps/bnl.ini) and, if given, a user configuration on top of it.

    Parameters
    ----------
    conf_path : str, optional
        Path to a user .ini file. Keys present there override the defaults.

    Returns
    -------
    conf : configparser.ConfigParser

    """
    conf = configparser.ConfigParser()
    conf.read(DEFAULT_CONFIG_PATH)
    if conf_path:
        conf_path = os.path.abspath(conf_path)
        if not os.path.exists(conf_path):
            raise FileNotFoundError("No configuration found at {}, please check path to .ini file".format(conf_path))
        try:
            conf.read(conf_path)
        except configparser.Error as e:
            raise InvalidParamsException("Could not parse configuration {}: {}".format(conf_path, e)) from e
    return conf


def read_float_list(text):
    """Parses a comma separated list of numbers, such as the epsilons entry of bnl.ini"""
    try:
        return [float(value) for value in text.split(",") if value.strip()]
    except ValueError as e:
        raise InvalidParamsException("Expected a comma separated list of numbers, got {!r}".format(text)) from e


def create_file_structure(root):
    """
    Creates the folder structure written by the `bnl` commands: ::
        root
        -plot_data
        -reports
        -log

    Parameters
    ----------
    root : str
        The root folder for the file structure. Created if missing.

    Returns
    -------
    root : str
        The absolute path of the root folder.
    """
    root = os.path.abspath(root)
    for folder in ["", "plot_data", "reports", "log"]:
        os.makedirs(os.path.join(root, folder), exist_ok=True)
    return root
