from abc import ABC, abstractmethod
from typing import Any, Callable, Generic, List, TypeVar

from gmfg.exceptions import CatalogError

T = TypeVar("T")


class BaseRepository(ABC, Generic[T]):
    """Base repository interface for named catalogs of factories."""

    def __init__(self):
        self._factories: dict[str, Callable[..., T]] = {}

    @property
    @abstractmethod
    def kind(self) -> str:
        """Return the human-readable name of the catalog entries."""
        pass

    def register(self, name: str, factory: Callable[..., T]) -> None:
        """Register (or replace) a factory under a name."""
        self._factories[name] = factory

    def get_by_name(self, name: str, **params: Any) -> T:
        """Build the entry registered under ``name`` with the given parameters."""
        factory = self._factories.get(name)
        if factory is None:
            raise CatalogError(
                f"unknown {self.kind} '{name}'",
                {"available": ", ".join(self.list_names())},
            )
        try:
            return factory(**params)
        except TypeError as e:
            raise CatalogError(f"invalid parameters for {self.kind} '{name}': {e}") from e

    def exists(self, name: str) -> bool:
        """Check if an entry is registered."""
        return name in self._factories

    def list_names(self) -> List[str]:
        """Get all registered names, sorted."""
        return sorted(self._factories)

    def count(self) -> int:
        """Get total count of entries."""
        return len(self._factories)
