"""Planar Gaussian splatting for spatial power spectrum synthesis."""
import os

# the TBB layer on this platform is too old; avoid the probe warning
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

__version__ = "0.1.0"
