"""Desk-scale simulator of a time-synchronized entanglement-distribution LAN.

Submodules follow the signal path: timebase (clock sync), tdc (time tagging),
photonics (pair source and analyzers), coincidence (stream correlation),
tomography (state reconstruction), keyplane (key production and rotation),
network (topology and channel allocation), scenario/runner/cli (experiment
configs and artifact generation).
"""

__version__ = "0.1.0"
