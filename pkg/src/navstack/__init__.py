"""Navigation stack and closed-loop simulator for a differential-drive robot."""

__version__ = "0.1.0"
