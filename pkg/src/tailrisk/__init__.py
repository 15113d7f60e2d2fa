"""Dynamic tail-risk protection: exceedance models, stacking and fee-aware backtests."""

__version__ = "0.1.0"
