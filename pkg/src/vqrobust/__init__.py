"""Desk-scale toolkit for probing and hardening discrete image tokenizers."""

__version__ = "0.1.0"
