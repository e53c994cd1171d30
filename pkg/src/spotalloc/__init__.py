"""Cost-aware allocation of self-owned, spot and on-demand instances to deadline jobs."""

__version__ = "0.1.0"
