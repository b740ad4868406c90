"""Animation-to-robot pipeline for a 20-DoF bipedal character."""

__version__ = "0.1.0"
