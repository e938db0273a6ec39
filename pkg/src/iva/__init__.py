"""Interactive visual adapter for long-video language models, at desk scale."""
__version__ = "0.1.0"
