"""Mixed-radix coder between factored state vectors and a single integer id.

A factored state is a tuple of 1-based digits ``(R_1, ..., R_n)`` with
``1 <= R_i <= numD_i``.  Its code is

    L = R_1 + sum_{i=2..n} R_i * prod_{j<i} numD_j

which is a bijection onto a contiguous integer range starting at
``offset = 1 + sum_{i=2..n} prod_{j<i} numD_j``.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import prod
from typing import Sequence

# encoded ids are stored in int64 arrays
MAX_CODE = 2**63 - 1


class CodecError(ValueError):
    pass


@dataclass(frozen=True)
class DomainSpec:
    cardinalities: tuple[int, ...]

    def __init__(self, cardinalities: Sequence[int]):
        cards = tuple(int(c) for c in cardinalities)
        if not cards:
            raise CodecError("a domain needs at least one variable")
        for i, c in enumerate(cards):
            if c < 1:
                raise CodecError(f"variable {i + 1} has cardinality {c} < 1")
        object.__setattr__(self, "cardinalities", cards)
        if self.max_code > MAX_CODE:
            raise CodecError(
                f"state space of {self.size} states does not fit a 64-bit id"
            )

    @property
    def variable_count(self) -> int:
        return len(self.cardinalities)

    @property
    def size(self) -> int:
        return prod(self.cardinalities)

    @property
    def place_values(self) -> tuple[int, ...]:
        """``prod_{j<i} numD_j`` for each variable (empty product is 1)."""
        out, p = [], 1
        for c in self.cardinalities:
            out.append(p)
            p *= c
        return tuple(out)

    @property
    def offset(self) -> int:
        """Smallest code, i.e. the code of ``(1, ..., 1)``."""
        return sum(self.place_values)

    @property
    def max_code(self) -> int:
        return self.offset + self.size - 1


def encode(spec: DomainSpec, digits: Sequence[int]) -> int:
    if len(digits) != spec.variable_count:
        raise CodecError(
            f"expected {spec.variable_count} digits, got {len(digits)}"
        )
    code = 0
    for i, (r, card, place) in enumerate(
        zip(digits, spec.cardinalities, spec.place_values)
    ):
        if not 1 <= r <= card:
            raise CodecError(f"variable {i + 1}: digit {r} outside [1, {card}]")
        code += int(r) * place
    return code


def decode(spec: DomainSpec, code: int) -> tuple[int, ...]:
    code = int(code)
    if not spec.offset <= code <= spec.max_code:
        raise CodecError(
            f"code {code} outside [{spec.offset}, {spec.max_code}]"
        )
    rest = code - spec.offset
    digits = []
    for card in spec.cardinalities:
        rest, r = divmod(rest, card)
        digits.append(r + 1)
    return tuple(digits)


def to_index(spec: DomainSpec, code: int) -> int:
    """Dense 0-based table row for an encoded state."""
    return int(code) - spec.offset


def from_index(spec: DomainSpec, index: int) -> int:
    return int(index) + spec.offset
