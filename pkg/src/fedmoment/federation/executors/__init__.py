"""
Backends that execute the group chains of a round.

A backend exposes ``run(tasks)``: it calls every zero-argument task once
and returns their results in task order. Backends differ only in wall
time; numerical results never depend on the backend.
"""

from fedmoment.config import get as get_config
from fedmoment.federation.executors import serial, threaded


DEFAULT_BACKEND = 'threaded'

backend_classes = {
    'serial': serial.GroupExecutor,
    'threaded': threaded.AsyncGroupExecutor,
}


class GroupExecutionError(RuntimeError):
    """Raised when an unknown executor backend is requested."""


def get_executor(backend=None, **kwargs):
    """
    Load a group executor backend and return an instance of it.
    """
    _backend = backend or get_config('EXECUTOR_BACKEND', DEFAULT_BACKEND)
    klass = backend_classes.get(_backend)
    if klass is None:
        raise GroupExecutionError(
            f'Unknown executor backend {_backend!r}; '
            f'choose from {sorted(backend_classes)}'
        )
    return klass(**kwargs)
