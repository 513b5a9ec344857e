# Autoformer desk-scale forecasting toolkit
__version__ = "1.0.0"
