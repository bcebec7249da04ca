"""
Core package initialization
"""
from pdafem.core.config import settings

__all__ = ["settings"]
