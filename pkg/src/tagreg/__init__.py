"""Linear GP programs whose modules regulate each other through tag matching."""

__version__ = "0.1.0"
