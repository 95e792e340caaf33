"""Headless render worker for the chartcf line protocol."""

from .worker import HANDSHAKE, serve

__all__ = ["HANDSHAKE", "serve"]
