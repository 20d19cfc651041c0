"""Weakly supervised amodal completion with boundary-uncertainty estimation."""

__version__ = "0.1.0"
