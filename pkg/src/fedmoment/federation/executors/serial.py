"""
Defines an executor that runs group chains one after another in the
caller's thread. Used for debugging and as the reference ordering in
tests.
"""


class GroupExecutor:

    def __init__(self, *args, **kwargs):
        self.executed = 0

    def run(self, tasks):
        """
        Run every task in order and return the results.
        """
        results = []
        for task in tasks:
            results.append(task())
            self.executed += 1
        return results
