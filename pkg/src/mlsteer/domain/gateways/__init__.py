from .output_storage import OutputStorage

__all__ = ["OutputStorage"]
