"""Two-pass textual assembler and tolerant disassembler.

Source format: one instruction per line, ``;`` starts a comment,
``name:`` defines a label. PUSH immediates are decimal, ``0x`` hex, or a
label name which resolves to the label's absolute byte offset.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from . import opcodes
from .opcodes import INVALID, OpcodeInfo

_LABEL_DEF = re.compile(r"^([A-Za-z_]\w*)\s*:\s*(.*)$")


class AssemblyError(Exception):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass(frozen=True)
class Bytecode:
    code: bytes
    # pc -> 1-based source line, for assembler-built programs
    source_map: dict[int, int] = field(default_factory=dict, compare=False)

    def __len__(self) -> int:
        return len(self.code)


@dataclass(frozen=True)
class Instr:
    """One decoded instruction."""

    pc: int
    info: OpcodeInfo
    immediate: bytes = b""

    @property
    def size(self) -> int:
        return 1 + len(self.immediate)

    @property
    def immediate_value(self) -> int:
        return int.from_bytes(self.immediate, "big") if self.immediate else 0


def _parse_immediate(token: str, labels: dict[str, int], line: int) -> int:
    if token.startswith(("0x", "0X")):
        return int(token, 16)
    if token.isdigit():
        return int(token, 10)
    if token in labels:
        return labels[token]
    raise AssemblyError(f"undefined label {token!r}", line)


def _split_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split(";", 1)[0].strip()
        if line:
            yield lineno, line


def assemble(text: str) -> Bytecode:
    """Assemble source text into bytecode, resolving labels to absolute pcs."""
    # pass 1: lay out instructions, record label offsets
    labels: dict[str, int] = {}
    items: list[tuple[int, str, list[str]]] = []  # (lineno, mnemonic, args)
    offset = 0
    for lineno, line in _split_lines(text):
        while (m := _LABEL_DEF.match(line)) is not None:
            label = m.group(1)
            if label in labels:
                raise AssemblyError(f"duplicate label {label!r}", lineno)
            labels[label] = offset
            line = m.group(2)
        if not line:
            continue
        parts = line.split()
        mnemonic, args = parts[0].upper(), parts[1:]
        info = opcodes.by_mnemonic(mnemonic)
        if info is None:
            raise AssemblyError(f"unknown mnemonic {mnemonic!r}", lineno)
        if info.is_push:
            if len(args) != 1:
                raise AssemblyError(f"{mnemonic} takes exactly one immediate", lineno)
        elif args:
            raise AssemblyError(f"{mnemonic} takes no immediate", lineno)
        items.append((lineno, mnemonic, args))
        offset += 1 + info.push_width

    # pass 2: encode with labels resolved
    out = bytearray()
    source_map: dict[int, int] = {}
    for lineno, mnemonic, args in items:
        info = opcodes.by_mnemonic(mnemonic)
        assert info is not None
        source_map[len(out)] = lineno
        out.append(info.value)
        if info.is_push:
            value = _parse_immediate(args[0], labels, lineno)
            width = info.push_width
            if value < 0 or value >= 1 << (8 * width):
                raise AssemblyError(
                    f"immediate {args[0]} out of range for {mnemonic}", lineno
                )
            out.extend(value.to_bytes(width, "big"))
    return Bytecode(bytes(out), source_map)


def disassemble(code: Bytecode | bytes) -> list[Instr]:
    """Decode every byte. Unknown bytes and truncated PUSH immediates map to
    an INVALID pseudo-op (covering the remaining bytes in the truncated case).
    """
    raw = code.code if isinstance(code, Bytecode) else code
    out: list[Instr] = []
    pc = 0
    while pc < len(raw):
        info = opcodes.by_value(raw[pc])
        if info is None:
            out.append(Instr(pc, INVALID, b""))
            pc += 1
            continue
        width = info.push_width
        if width and pc + 1 + width > len(raw):
            out.append(Instr(pc, INVALID, raw[pc + 1:]))
            break
        out.append(Instr(pc, info, raw[pc + 1:pc + 1 + width]))
        pc += 1 + width
    return out


def format_program(instrs: list[Instr]) -> str:
    """Render decoded instructions back to assembler text (no labels)."""
    lines = []
    for ins in instrs:
        if ins.info.is_push:
            lines.append(f"{ins.info.mnemonic} 0x{ins.immediate.hex()}")
        else:
            lines.append(ins.info.mnemonic)
    return "\n".join(lines)
