"""
Primal-dual adaptive finite elements
"""
from pdafem.core.config import settings

__version__ = "1.0.0"

__all__ = ["settings", "__version__"]
