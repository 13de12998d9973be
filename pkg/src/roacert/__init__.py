"""Region-of-attraction certification from trajectory data and analytical Lyapunov functions."""
__version__ = "0.1.0"
