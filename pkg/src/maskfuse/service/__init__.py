"""FastAPI service wrapping the segmentation engine."""

from .app import app, create_app

__all__ = ["app", "create_app"]
