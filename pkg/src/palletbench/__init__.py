"""Digital-twin simulator for palletized-load acceleration bench tests."""

__version__ = "0.1.0"
