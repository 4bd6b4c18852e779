"""HTTP service wrapping the lab's operations."""

from .app import app

__all__ = ["app"]
