"""Simultaneous magnetic actuation and localisation of a capsule robot.

One rotating permanent magnet propels a capsule through a tube while a
magnetometer array localises both magnets.
"""

__version__ = "0.1.0"
