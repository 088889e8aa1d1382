"""Online surgical phase recognition over per-frame feature sequences."""
__version__ = "0.1.0"
