"""Emulator of an autoscaled video-sink pod pool behind an IPVS-style balancer."""

__version__ = "0.1.0"
