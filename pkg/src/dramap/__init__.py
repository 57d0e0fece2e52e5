"""Recover linear physical-to-DRAM address mappings from timing-labeled address pairs."""

__version__ = "0.1.0"
