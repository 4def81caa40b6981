"""rayflow: a numerical laboratory for shear-free ray congruences and
conformal-foliation flows on curved space-times."""

__version__ = "0.1.0"
