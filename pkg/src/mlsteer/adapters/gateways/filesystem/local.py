import typing as t
from pathlib import Path

from mlsteer.domain.gateways import OutputStorage


class LocalDirectory(OutputStorage):
    """Write command outputs into a local directory."""

    def __init__(self, path: t.Union[str, Path], create: bool = False) -> None:
        """Create a new local directory.

        Arguments:
            path: path to the root of the local directory
            create: create the directory and its parents when missing
        """
        path = Path(path).expanduser()
        if create:
            path.mkdir(parents=True, exist_ok=True)
        self._root_path = path.resolve(True)

    @property
    def root(self) -> Path:
        """Local directory root path."""
        return self._root_path

    def get_path(self, *parts: str) -> Path:
        return self._root_path.joinpath(*(part.lstrip("/") for part in parts))

    def write_bytes(
        self,
        *destination: str,
        content: bytes,
        create_parents: bool = False,
    ) -> Path:
        target = self.get_path(*destination)
        if create_parents:
            target.parent.mkdir(exist_ok=True, parents=True)
        target.write_bytes(content)
        return target

    def read_bytes(self, *source: str) -> bytes:
        return self.get_path(*source).read_bytes()
