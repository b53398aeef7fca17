"""Outage-constrained robust downlink beamforming via relaxation and convex restriction."""

__version__ = "0.1.0"
