"""Deep Q-learning trading agents and a test-time observation-attack harness."""

__version__ = "0.1.0"
