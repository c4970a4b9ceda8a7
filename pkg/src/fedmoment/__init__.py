"""
Simulator for grouped sequential federated learning on a synthetic
moment-localization task.
"""

__version__ = "0.1.0"
