"""Dynamic taint engine running in lockstep with the interpreter.

Eight taint labels cover the external-data sources; the engine mirrors the
machine with a taint stack (one set per stack slot), a byte-granular taint
memory, and a persistent taint storage keyed by (account, slot) that
survives transaction boundaries. Sink opcodes emit one data-flow event per
distinct label among their tainted inputs.

Provenance is most-recent-source: every label in a set remembers the single
latest source step that contributed it. Sets propagated through SLOAD are
flagged, which is what the graph pruning stage uses to recognize
comparisons against state variables.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple

from .evm.interp import MachineState, FrameEnv, Step
from .evm import opcodes


class TaintDesyncError(Exception):
    """Taint state diverged from the machine state (internal invariant)."""


class TaintLabel(IntEnum):
    CALL_VALUE = 0
    CALLDATA = 1
    CALLDATA_SIZE = 2
    CALLER = 3
    ORIGIN = 4
    BLOCK_ENV = 5
    BALANCE = 6
    SELF_ADDRESS = 7

    @property
    def display(self) -> str:
        return _LABEL_DISPLAY[self]


_LABEL_DISPLAY = {
    TaintLabel.CALL_VALUE: "CallValue",
    TaintLabel.CALLDATA: "Calldata",
    TaintLabel.CALLDATA_SIZE: "CalldataSize",
    TaintLabel.CALLER: "Caller",
    TaintLabel.ORIGIN: "Origin",
    TaintLabel.BLOCK_ENV: "BlockEnv",
    TaintLabel.BALANCE: "Balance",
    TaintLabel.SELF_ADDRESS: "SelfAddress",
}

# ten source opcodes collapse onto the eight labels
SOURCE_LABELS: dict[int, TaintLabel] = {
    0x34: TaintLabel.CALL_VALUE,     # CALLVALUE
    0x35: TaintLabel.CALLDATA,       # CALLDATALOAD
    0x37: TaintLabel.CALLDATA,       # CALLDATACOPY (taints memory)
    0x36: TaintLabel.CALLDATA_SIZE,  # CALLDATASIZE
    0x33: TaintLabel.CALLER,         # CALLER
    0x32: TaintLabel.ORIGIN,         # ORIGIN
    0x42: TaintLabel.BLOCK_ENV,      # TIMESTAMP
    0x40: TaintLabel.BLOCK_ENV,      # BLOCKHASH
    0x31: TaintLabel.BALANCE,        # BALANCE
    0x30: TaintLabel.SELF_ADDRESS,   # ADDRESS
}

COMPARISON_SINKS = frozenset({0x10, 0x11, 0x12, 0x13, 0x14})  # LT GT SLT SGT EQ
MEMORY_SINKS = frozenset({0x51, 0x52, 0x53})                  # MLOAD MSTORE MSTORE8
STORAGE_SINKS = frozenset({0x54, 0x55})                       # SLOAD SSTORE
CALL_SINKS = frozenset({0xF1, 0xF2, 0xF4, 0xFA})
JUMP_SINKS = frozenset({0x57})                                # JUMPI
SINK_OPS = COMPARISON_SINKS | MEMORY_SINKS | STORAGE_SINKS | CALL_SINKS | JUMP_SINKS


class TaintEntry(NamedTuple):
    label: TaintLabel
    tx: int
    step: int
    via_storage: bool


@dataclass(frozen=True)
class TaintSet:
    """Immutable set of labels, one provenance entry per label."""

    entries: tuple[TaintEntry, ...]  # sorted by label

    def labels(self) -> frozenset[TaintLabel]:
        return frozenset(e.label for e in self.entries)

    @property
    def is_empty(self) -> bool:
        return not self.entries

    def with_via_storage(self) -> "TaintSet":
        return TaintSet(tuple(e._replace(via_storage=True) for e in self.entries))


EMPTY = TaintSet(())


def _fresh(label: TaintLabel, tx: int, step: int) -> TaintSet:
    return TaintSet((TaintEntry(label, tx, step, False),))


def union(a: TaintSet | None, b: TaintSet | None) -> TaintSet | None:
    """Merge two sets; per label the most recent source wins."""
    if a is None or a.is_empty:
        return b
    if b is None or b.is_empty:
        return a
    if a is b:
        return a
    best: dict[TaintLabel, TaintEntry] = {e.label: e for e in a.entries}
    for e in b.entries:
        cur = best.get(e.label)
        if cur is None or (e.tx, e.step) > (cur.tx, cur.step):
            best[e.label] = e
    return TaintSet(tuple(best[k] for k in sorted(best)))


def union_all(sets) -> TaintSet | None:
    acc: TaintSet | None = None
    for s in sets:
        acc = union(acc, s)
    return acc


def propagate(info: opcodes.OpcodeInfo, operand_taints: list[TaintSet | None]) -> TaintSet:
    """Result taint of a value-combining opcode: the union of its operands."""
    if len(operand_taints) != info.delta:
        raise ValueError(f"{info.mnemonic} expects {info.delta} operand taints")
    acc = union_all(operand_taints)
    return acc if acc is not None else EMPTY


@dataclass(frozen=True)
class DataFlowEvent:
    label: TaintLabel
    src_tx: int
    src_step: int
    snk_tx: int
    snk_step: int
    via_storage: bool = False

    @property
    def cross_tx(self) -> bool:
        return self.src_tx != self.snk_tx


def dump_events(events) -> str:
    """Debug dump, one event per line: tx#,src_step,sink_step,label.

    Cross-transaction events render the transaction pair explicitly.
    """
    lines = []
    for e in events:
        tx = str(e.snk_tx) if not e.cross_tx else f"{e.src_tx}->{e.snk_tx}"
        lines.append(f"{tx},{e.src_step},{e.snk_step},{e.label.display}")
    return "\n".join(lines)


class _TaintFrame:
    __slots__ = ("stack", "memory", "address")

    def __init__(self, address: int):
        self.stack: list[TaintSet | None] = []
        self.memory: list[TaintSet | None] = []
        self.address = address


class TaintEngine:
    """Interpreter tracker implementing source/sink/propagation rules."""

    def __init__(self, check_lockstep: bool = False):
        self.storage: dict[tuple[int, int], TaintSet] = {}
        self.events: list[DataFlowEvent] = []
        self.check_lockstep = check_lockstep
        self._frames: list[_TaintFrame] = []
        self._tx_index = 0
        self._tx_snapshot: dict[tuple[int, int], TaintSet] = {}

    # -- interpreter hooks -------------------------------------------------

    def on_transaction_start(self, tx_index: int, env: FrameEnv) -> None:
        self._tx_index = tx_index
        self._frames = [_TaintFrame(env.self_address)]
        self._tx_snapshot = dict(self.storage)

    def on_transaction_end(self, outcome: str) -> None:
        if outcome != "success":
            self.storage = self._tx_snapshot  # reverted writes leave no taint
        self._frames = []

    def on_frame_enter(self, step: Step, child: FrameEnv) -> None:
        self._frames.append(_TaintFrame(child.self_address))

    def on_frame_exit(self, ok: bool) -> None:
        self._frames.pop()

    def on_call_result(self, step: Step, flag: int) -> None:
        # success flags and created addresses are fresh, untainted values
        self._frames[-1].stack.append(None)

    def snapshot(self):
        return dict(self.storage)

    def restore(self, token) -> None:
        self.storage = token

    def storage_carryover(self) -> dict[tuple[int, int], TaintSet]:
        """Immutable view of the persistent slot taint after a transaction."""
        return dict(self.storage)

    # -- per-step transfer -------------------------------------------------

    def on_step(self, step: Step, machine: MachineState) -> None:
        fr = self._frames[-1]
        mem_len = len(machine.memory)
        if len(fr.memory) < mem_len:
            fr.memory.extend([None] * (mem_len - len(fr.memory)))
        op = step.opcode
        stack = fr.stack

        if 0x60 <= op <= 0x7F:  # PUSH: literals are untainted
            stack.append(None)
        elif 0x80 <= op <= 0x8F:  # DUPn copies slot taint
            stack.append(stack[-1 - (op - 0x80)])
        elif 0x90 <= op <= 0x9F:  # SWAPn
            n = op - 0x8F
            stack[-1], stack[-1 - n] = stack[-1 - n], stack[-1]
        elif op in SOURCE_LABELS:
            self._source(fr, step, op)
        elif op in SINK_OPS:
            self._sink(fr, step, op)
        else:
            info = opcodes.by_value(op)
            acc: TaintSet | None = None
            for _ in range(info.delta):
                acc = union(acc, stack.pop())
            if info.alpha:
                stack.extend([acc] * info.alpha)

    def on_step_complete(self, step: Step, machine: MachineState) -> None:
        if not self.check_lockstep or not self._frames:
            return
        fr = self._frames[-1]
        if len(fr.stack) != machine.depth():
            raise TaintDesyncError(
                f"step {step.index} {step.mnemonic}: taint stack {len(fr.stack)} "
                f"!= machine stack {machine.depth()}"
            )
        if len(fr.memory) != len(machine.memory):
            raise TaintDesyncError(
                f"step {step.index} {step.mnemonic}: taint memory {len(fr.memory)} "
                f"!= machine memory {len(machine.memory)}"
            )

    # -- rules ---------------------------------------------------------------

    def _source(self, fr: _TaintFrame, step: Step, op: int) -> None:
        label = SOURCE_LABELS[op]
        produced = _fresh(label, step.tx_index, step.index)
        stack = fr.stack
        if op == 0x37:  # CALLDATACOPY marks the copied bytes, pushes nothing
            dest, _off, size = step.operands
            del stack[len(stack) - 3:]
            if size:
                fr.memory[dest:dest + size] = [produced] * size
            return
        info = opcodes.by_value(op)
        for _ in range(info.delta):  # operand taints are superseded
            stack.pop()
        stack.append(produced)

    def _sink(self, fr: _TaintFrame, step: Step, op: int) -> None:
        stack = fr.stack
        info = opcodes.by_value(op)
        operand_taints = [stack.pop() for _ in range(info.delta)]
        inputs = union_all(operand_taints)

        if op == 0x51:  # MLOAD: loaded bytes carry the data taint
            off = step.operands[0]
            loaded = union_all(fr.memory[off:off + 32])
            inputs = union(inputs, loaded)
            self._emit(step, inputs)
            stack.append(loaded)
            return
        if op == 0x52:  # MSTORE fans the value taint out to 32 bytes
            off, _value = step.operands
            self._emit(step, inputs)
            fr.memory[off:off + 32] = [operand_taints[1]] * 32
            return
        if op == 0x53:  # MSTORE8
            off, _value = step.operands
            self._emit(step, inputs)
            fr.memory[off] = operand_taints[1]
            return
        if op == 0x54:  # SLOAD: sink that propagates the stored taint
            slot = step.operands[0]
            stored = self.storage.get((fr.address, slot))
            inputs = union(inputs, stored)
            self._emit(step, inputs)
            stack.append(stored.with_via_storage() if stored else None)
            return
        if op == 0x55:  # SSTORE
            slot = step.operands[0]
            self._emit(step, inputs)
            value_taint = operand_taints[1]
            if value_taint is None or value_taint.is_empty:
                self.storage.pop((fr.address, slot), None)
            else:
                self.storage[(fr.address, slot)] = value_taint
            return
        # comparisons, JUMPI and the call family
        self._emit(step, inputs)
        if info.alpha and op in COMPARISON_SINKS:
            stack.append(inputs)
        # call-family results are pushed by on_call_result

    def _emit(self, step: Step, inputs: TaintSet | None) -> None:
        if inputs is None or inputs.is_empty:
            return
        for e in inputs.entries:
            self.events.append(DataFlowEvent(
                label=e.label,
                src_tx=e.tx,
                src_step=e.step,
                snk_tx=step.tx_index,
                snk_step=step.index,
                via_storage=e.via_storage,
            ))
