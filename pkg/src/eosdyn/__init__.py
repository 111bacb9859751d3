"""Edge-of-stability dynamics of gradient descent on the degree-4 scalar model."""

__version__ = "0.1.0"
