"""Behavioral conditional generative model for stochastic LTI systems."""

__version__ = "0.1.0"
CODE_VERSION = f"bcgm-{__version__}"
