"""
Defines an executor that runs group chains concurrently.

Each chain runs in a worker thread scheduled from an asyncio loop; a
semaphore caps how many run at once.
"""

from __future__ import annotations

import asyncio
import logging
import os

from fedmoment.config import get as get_config


logger = logging.getLogger(__name__)


class AsyncGroupExecutor:
    """
    Concurrent backend. ``run`` is synchronous and drives its own event
    loop; ``run_async`` can be awaited from async code.
    """

    def __init__(self, max_workers=None):
        self._max_workers = max_workers

    def _get_max_workers(self) -> int:
        """
        Determines the worker cap in order of priority:
        1. max_workers passed to the constructor
        2. THREADS setting in fedmoment.config
        3. FEDMOMENT_THREADS environment variable
        4. os.cpu_count()
        """
        workers = (
            self._max_workers
            or get_config('THREADS')
            or os.environ.get('FEDMOMENT_THREADS')
            or os.cpu_count()
            or 1
        )
        try:
            return max(1, int(workers))
        except ValueError:
            logger.warning(f'Ignoring non-integer worker cap {workers!r}')
            return 1

    async def run_async(self, tasks):
        """
        Run all tasks concurrently, returning results in task order.

        If any task fails, the failure of the earliest task in order is
        raised once all tasks have settled.
        """
        semaphore = asyncio.Semaphore(self._get_max_workers())

        async def _guarded(task):
            async with semaphore:
                return await asyncio.to_thread(task)

        outcomes = await asyncio.gather(
            *(_guarded(task) for task in tasks),
            return_exceptions=True,
        )
        for outcome in outcomes:
            if isinstance(outcome, BaseException):
                raise outcome
        return outcomes

    def run(self, tasks):
        """
        Run the async scheduler from synchronous code.
        """
        tasks = list(tasks)
        logger.debug(f'Running {len(tasks)} tasks on up to {self._get_max_workers()} workers')
        return asyncio.run(self.run_async(tasks))
