"""Software-in-the-loop quadcopter testbed for sensor-attack detection and recovery."""

__version__ = "0.1.0"
