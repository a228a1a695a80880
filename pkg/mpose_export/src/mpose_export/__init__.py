"""Exporter turning the published pose dataset package into POSEPACK v1
directories that the `act` classifier consumes."""

__version__ = "0.1.0"
