"""
Defines a global settings registry used by other modules.

Recognised keys are DEBUG, EXECUTOR_BACKEND and THREADS. Experiment
parameters do not live here; they are passed around as validated
dataclasses.
"""

_config = {}


def set(**kwargs):
    """Override runtime settings, e.g. ``set(EXECUTOR_BACKEND='serial')``."""
    _config.update(kwargs)


def load_dict(dict_items):
    """Merge a mapping of settings, as read from a settings file or the CLI flags."""
    _config.update(dict_items)


def get(key, default=None):
    """Current value of a runtime setting, or ``default`` when unset."""
    return _config.get(key, default)


def clear():
    """Forget every runtime setting."""
    _config.clear()
