"""Multimodal-LLM-assisted evolutionary search for programmatic control policies."""

__version__ = "0.1.0"
