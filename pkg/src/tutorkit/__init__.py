"""Staged fine-tuning pipeline and guided-tutoring session engine at desk scale."""

__version__ = "0.1.0"
