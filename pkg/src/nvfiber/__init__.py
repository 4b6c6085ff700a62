"""NV-center nanodiamond coupled to a tapered nanofiber: modes, coupling,
taper adiabaticity, photon-stream simulation and TCSPC analysis."""

__version__ = "0.1.0"
