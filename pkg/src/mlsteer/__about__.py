"""The `__about__` module exposes the version of the `mlsteer` package:

Example:

```python
from mlsteer.__about__ import __version__
print(__version__)
```

Note that version can also be imported directly from `mlsteer` package:

Example:

```python
from mlsteer import __version__
print(__version__)
```
"""
__version__ = "0.1.0"
