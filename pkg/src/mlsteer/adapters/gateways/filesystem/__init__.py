from .local import LocalDirectory
from .temporary import TemporaryDirectory

__all__ = ["LocalDirectory", "TemporaryDirectory"]
