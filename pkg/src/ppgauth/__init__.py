"""Multi-task PPG signal-quality and identity-verification workbench."""

__version__ = "0.1.0"
