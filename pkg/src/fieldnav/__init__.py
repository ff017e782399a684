"""Energy-aware mission planning and interaction-aware local navigation for a field robot."""

__version__ = "0.1.0"
