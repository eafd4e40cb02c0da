"""Warped Berger Ricci flow simulator and verification suite."""

from .__version__ import VERSION

__all__ = ["VERSION"]
