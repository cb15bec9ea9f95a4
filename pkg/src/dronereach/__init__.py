"""Online energy-model learning and probabilistic reachability for battery-limited delivery drones."""

__version__ = "0.1.0"
