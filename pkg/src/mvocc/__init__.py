"""MVOCC - Multi-view deep one-class classification baselines and evaluation harness."""

__version__ = "0.1.0"
