"""Activity-aware wearable fatigue pipeline: signal processing, features, and two-stage recurrent classification."""

__version__ = "0.1.0"
