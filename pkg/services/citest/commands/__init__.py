"""
Command-line verbs of citest.
"""
from . import simulation, testing

__all__ = ["simulation", "testing"]
