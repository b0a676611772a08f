"""Channel structure of equivariant features."""

from __future__ import annotations

import math

from ..errors import DomainError


class Fiber:
    """Ordered ``(multiplicity, degree)`` pairs with unique, ascending degrees.

    >>> Fiber([(4, 0), (2, 1)]).n_features
    10
    """

    def __init__(self, entries):
        if isinstance(entries, dict):
            entries = [(m, d) for d, m in entries.items()]
        pairs = sorted(((int(m), int(d)) for m, d in entries), key=lambda p: p[1])
        degrees = [d for _, d in pairs]
        if len(set(degrees)) != len(degrees):
            raise DomainError(f"duplicate degrees in fiber {entries}")
        if any(m <= 0 or d < 0 for m, d in pairs):
            raise DomainError(f"fiber entries need positive multiplicity and non-negative degree: {entries}")
        self.entries = tuple(pairs)
        self._mult = {d: m for m, d in pairs}

    @classmethod
    def uniform(cls, channels: int, max_degree: int) -> "Fiber":
        return cls([(channels, d) for d in range(max_degree + 1)])

    @property
    def degrees(self) -> list[int]:
        return [d for _, d in self.entries]

    @property
    def max_degree(self) -> int:
        return max(self.degrees) if self.entries else 0

    @property
    def n_features(self) -> int:
        return sum(m * (2 * d + 1) for m, d in self.entries)

    def __getitem__(self, degree: int) -> int:
        return self._mult[degree]

    def get(self, degree: int, default=0) -> int:
        return self._mult.get(degree, default)

    def __contains__(self, degree) -> bool:
        return degree in self._mult

    def __iter__(self):
        return iter(self.entries)

    def __len__(self):
        return len(self.entries)

    def __eq__(self, other):
        return isinstance(other, Fiber) and self.entries == other.entries

    def __hash__(self):
        return hash(self.entries)

    def __repr__(self):
        return f"Fiber({list(self.entries)})"

    def divided(self, div) -> "Fiber":
        """Multiplicities ``floor(m / div)``; degrees that drop to zero vanish."""
        return Fiber([(math.floor(m / div), d) for m, d in self.entries if math.floor(m / div) > 0])

    def restricted(self, degrees) -> "Fiber":
        keep = set(degrees)
        return Fiber([(m, d) for m, d in self.entries if d in keep])

    def plus(self, other: "Fiber") -> "Fiber":
        """Add multiplicities degree-wise."""
        out = dict(self._mult)
        for m, d in other.entries:
            out[d] = out.get(d, 0) + m
        return Fiber(out)

    def to_json(self):
        return [list(e) for e in self.entries]
