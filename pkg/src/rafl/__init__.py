"""Resource-aware federated learning with per-layer structured dropout."""

__version__ = "0.1.0"
