from .json import dump, dumps, jsonable

__all__ = ["dump", "dumps", "jsonable"]
