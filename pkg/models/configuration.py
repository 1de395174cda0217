# models/configuration.py
from dataclasses import dataclass
from typing import Iterable, Optional, Tuple

from utils.errors import ValidationError


@dataclass(frozen=True, order=True)
class Configuration:
    """A subset of a problem's knowledge-point indices, kept in canonical form.

    The empty configuration is the unhinted prompt; the full range 0..n-1 is K.
    Two configurations are equal iff their canonical keys are identical.
    """
    kp_indices: Tuple[int, ...] = ()

    @classmethod
    def of(cls, indices: Iterable[int], n_kps: Optional[int] = None) -> "Configuration":
        return canonicalize(cls(tuple(indices)), n_kps)

    @classmethod
    def empty(cls) -> "Configuration":
        return cls(())

    @classmethod
    def full(cls, n_kps: int) -> "Configuration":
        return cls(tuple(range(n_kps)))

    @classmethod
    def from_key(cls, key: str) -> "Configuration":
        if not key:
            return cls(())
        return canonicalize(cls(tuple(int(part) for part in key.split(","))))

    @property
    def key(self) -> str:
        return ",".join(str(i) for i in self.kp_indices)

    def __len__(self):
        return len(self.kp_indices)

    def __iter__(self):
        return iter(self.kp_indices)

    def __contains__(self, index):
        return index in self.kp_indices

    def __str__(self):
        return "{" + self.key + "}"

    def as_set(self):
        return frozenset(self.kp_indices)

    def without(self, removed: Iterable[int]) -> "Configuration":
        dropped = set(removed)
        return Configuration(tuple(i for i in self.kp_indices if i not in dropped))

    def is_subset_of(self, n_kps: int) -> bool:
        return all(0 <= i < n_kps for i in self.kp_indices)

    def sort_key(self):
        # Standard tie-break: fewest KPs, then lexicographically smallest.
        return (len(self.kp_indices), self.kp_indices)


def canonicalize(config: Configuration, n_kps: Optional[int] = None) -> Configuration:
    """Sort and deduplicate; validates indices against n_kps when given."""
    indices = config.kp_indices
    for index in indices:
        if isinstance(index, bool) or not isinstance(index, int):
            raise ValidationError(f"KP index {index!r} is not an integer")
        if index < 0 or (n_kps is not None and index >= n_kps):
            raise ValidationError(f"KP index {index} out of range [0, {n_kps if n_kps is not None else 'n'})")
    return Configuration(tuple(sorted(set(indices))))
