from .env import settings

__all__ = ["settings"]
