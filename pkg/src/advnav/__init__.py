"""Game-theoretic joint forecasting and planning for crowd navigation."""

__version__ = "0.1.0"
