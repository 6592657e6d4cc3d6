"""Green matrices of fractional-parabolic systems: kernels, estimates and the Levi method."""

__version__ = "0.1.0"
