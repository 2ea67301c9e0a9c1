"""Opcode vocabulary: values, mnemonics, stack arity and text descriptions.

The vocabulary is loaded from a shipped table asset (``data/opcodes.tsv``,
139 entries) so that node features, opcode histograms and the assembler all
draw from the same source.
"""

from __future__ import annotations

import importlib.resources
from dataclasses import dataclass
from functools import lru_cache

VOCABULARY_SIZE = 139

# Pseudo-value for bytes that do not decode to a vocabulary entry.
INVALID_VALUE = -1


class VocabularyError(Exception):
    """The opcode table asset is missing or malformed."""


@dataclass(frozen=True)
class OpcodeInfo:
    value: int
    mnemonic: str
    delta: int  # stack items removed
    alpha: int  # stack items added
    description: str

    @property
    def push_width(self) -> int:
        """Immediate byte count (PUSH1..PUSH32), 0 for anything else."""
        return self.value - 0x5F if 0x60 <= self.value <= 0x7F else 0

    @property
    def is_push(self) -> bool:
        return 0x60 <= self.value <= 0x7F


INVALID = OpcodeInfo(INVALID_VALUE, "INVALID", 0, 0, "Designated invalid instruction.")


@lru_cache(maxsize=1)
def opcode_vocabulary() -> tuple[OpcodeInfo, ...]:
    """All vocabulary entries, ordered by opcode value."""
    ref = importlib.resources.files("ponzigraph.evm").joinpath("data/opcodes.tsv")
    try:
        text = ref.read_text(encoding="utf-8")
    except OSError as exc:
        raise VocabularyError(f"opcode table asset unreadable: {exc}") from exc
    lines = text.splitlines()
    if not lines or lines[0].split("\t") != ["value", "mnemonic", "delta", "alpha", "description"]:
        raise VocabularyError("opcode table asset has an unexpected header")
    entries = []
    for lineno, line in enumerate(lines[1:], start=2):
        parts = line.split("\t")
        if len(parts) != 5:
            raise VocabularyError(f"opcode table line {lineno}: expected 5 columns")
        value, mnemonic, delta, alpha, desc = parts
        if not desc:
            raise VocabularyError(f"opcode table line {lineno}: empty description")
        entries.append(OpcodeInfo(int(value, 16), mnemonic, int(delta), int(alpha), desc))
    if len(entries) != VOCABULARY_SIZE:
        raise VocabularyError(f"expected {VOCABULARY_SIZE} opcodes, found {len(entries)}")
    if len({e.value for e in entries}) != len(entries):
        raise VocabularyError("duplicate opcode values in table")
    if any(e.delta < 0 or e.alpha < 0 for e in entries):
        raise VocabularyError("negative stack arity in table")
    return tuple(sorted(entries, key=lambda e: e.value))


@lru_cache(maxsize=1)
def _by_value() -> dict[int, OpcodeInfo]:
    return {e.value: e for e in opcode_vocabulary()}


@lru_cache(maxsize=1)
def _by_mnemonic() -> dict[str, OpcodeInfo]:
    return {e.mnemonic: e for e in opcode_vocabulary()}


def by_value(value: int) -> OpcodeInfo | None:
    return _by_value().get(value)


def by_mnemonic(mnemonic: str) -> OpcodeInfo | None:
    return _by_mnemonic().get(mnemonic.upper())


def vocabulary_index(value: int) -> int:
    """Dense index of an opcode value within the 139-entry vocabulary."""
    idx = _vocab_indices().get(value)
    if idx is None:
        raise KeyError(f"opcode value 0x{value:02x} not in vocabulary")
    return idx


@lru_cache(maxsize=1)
def _vocab_indices() -> dict[int, int]:
    return {e.value: i for i, e in enumerate(opcode_vocabulary())}
