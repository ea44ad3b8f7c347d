"""Deterministic discrete-event simulator for source-routed SDN LEO networks."""

__version__ = "0.1.0"
