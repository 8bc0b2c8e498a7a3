"""Aggregate-posterior auto-encoders (WiSE-ALE) with AEVB and beta-VAE baselines."""

__version__ = "0.1.0"
