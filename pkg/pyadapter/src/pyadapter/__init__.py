"""Reference stdio adapter for hosting a logits model over line-delimited JSON."""

from .server import AdapterSession, build_user_model, load_linear, main, serve

__all__ = ["AdapterSession", "build_user_model", "load_linear", "main", "serve"]
