"""Population-size estimation when part of the population is nearly unobservable."""

__version__ = "0.1.0"
