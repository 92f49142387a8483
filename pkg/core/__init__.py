"""
Backstepping Toolkit - Core Package
"""

from .toolkit import BacksteppingToolkit
from .database import KernelCache

__version__ = "1.0.0"
__all__ = ["BacksteppingToolkit", "KernelCache"]
