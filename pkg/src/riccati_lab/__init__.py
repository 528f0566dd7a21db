"""Simulation and verification toolkit for one-dimensional Riccati diffusions and ensemble Kalman-Bucy filters."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree without installation
    __version__ = "0.0.0"
