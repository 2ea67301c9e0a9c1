"""Brute-force def-use dependency tracker, independent of the taint engine.

Replays an execution trace with shadow values that carry the FULL set of
contributing source steps. Sink inputs follow the same dependency notion as
the engine (stack operands, plus loaded memory bytes for MLOAD and the
stored set for SLOAD), but the mechanism differs: plain step-index sets and
whole-set propagation, projected to most-recent-per-label only when the
expected pairs are extracted.
"""

from __future__ import annotations

import random

from ponzigraph.evm import opcodes
from ponzigraph.evm.interp import ExecutionTrace
from ponzigraph.taint import SOURCE_LABELS, SINK_OPS, TaintLabel

COMPARISONS = {0x10, 0x11, 0x12, 0x13, 0x14}


def oracle_pairs(trace: ExecutionTrace, full_sets: bool = False):
    """Expected (src_step, snk_step, label) triples for a single-transaction
    straight-line trace. ``full_sets`` reports every contributing source
    instead of the most recent one per label (diagnostics mode)."""
    stack: list[frozenset[int]] = []  # shadow: sets of source step indices
    memory: dict[int, frozenset[int]] = {}
    storage: dict[int, frozenset[int]] = {}
    label_of: dict[int, TaintLabel] = {}
    out: set[tuple[int, int, TaintLabel]] = set()

    def emit(inputs: frozenset[int], snk: int):
        if not inputs:
            return
        if full_sets:
            for s in inputs:
                out.add((s, snk, label_of[s]))
            return
        best: dict[TaintLabel, int] = {}
        for s in inputs:
            lab = label_of[s]
            if lab not in best or s > best[lab]:
                best[lab] = s
        for lab, s in best.items():
            out.add((s, snk, lab))

    empty = frozenset()
    for step in trace.steps:
        op = step.opcode
        info = opcodes.by_value(op)
        if 0x60 <= op <= 0x7F:          # PUSH
            stack.append(empty)
        elif 0x80 <= op <= 0x8F:        # DUP
            stack.append(stack[-1 - (op - 0x80)])
        elif 0x90 <= op <= 0x9F:        # SWAP
            n = op - 0x8F
            stack[-1], stack[-1 - n] = stack[-1 - n], stack[-1]
        elif op in SOURCE_LABELS:
            label_of[step.index] = SOURCE_LABELS[op]
            produced = frozenset({step.index})
            if op == 0x37:              # CALLDATACOPY marks memory bytes
                dest, _off, size = step.operands
                del stack[len(stack) - 3:]
                for b in range(dest, dest + size):
                    memory[b] = produced
            else:
                for _ in range(info.delta):
                    stack.pop()
                stack.append(produced)
        elif op == 0x51:                # MLOAD
            off = step.operands[0]
            addr_dep = stack.pop()
            loaded = empty
            for b in range(off, off + 32):
                loaded |= memory.get(b, empty)
            emit(addr_dep | loaded, step.index)
            stack.append(loaded)
        elif op == 0x52:                # MSTORE
            off, _ = step.operands
            addr_dep = stack.pop()
            value_dep = stack.pop()
            emit(addr_dep | value_dep, step.index)
            for b in range(off, off + 32):
                memory[b] = value_dep
        elif op == 0x53:                # MSTORE8
            off, _ = step.operands
            addr_dep = stack.pop()
            value_dep = stack.pop()
            emit(addr_dep | value_dep, step.index)
            memory[off] = value_dep
        elif op == 0x54:                # SLOAD
            slot = step.operands[0]
            key_dep = stack.pop()
            stored = storage.get(slot, empty)
            emit(key_dep | stored, step.index)
            stack.append(stored)
        elif op == 0x55:                # SSTORE
            slot = step.operands[0]
            key_dep = stack.pop()
            value_dep = stack.pop()
            emit(key_dep | value_dep, step.index)
            storage[slot] = value_dep
        elif op in SINK_OPS:            # comparisons (straight-line subset)
            deps = empty
            for _ in range(info.delta):
                deps |= stack.pop()
            emit(deps, step.index)
            if op in COMPARISONS:
                stack.append(deps)
        else:                           # arithmetic and the generic rest
            deps = empty
            for _ in range(info.delta):
                deps |= stack.pop()
            stack.extend([deps] * info.alpha)
    return out


def engine_pairs(events):
    return {(e.src_step, e.snk_step, e.label) for e in events}


# ---------------------------------------------------------------------------
# random straight-line program generator

_SOURCES0 = ["CALLVALUE", "CALLDATASIZE", "CALLER", "ORIGIN", "TIMESTAMP", "ADDRESS"]
_SOURCES1 = ["CALLDATALOAD", "BLOCKHASH", "BALANCE"]  # consume one operand
_ARITH2 = ["ADD", "MUL", "SUB", "DIV", "AND", "OR", "XOR"]
_ARITH1 = ["ISZERO", "NOT"]
_COMPARE = ["EQ", "LT", "GT", "SLT", "SGT"]


def random_program(seed: int, max_ops: int = 64) -> str:
    """Straight-line program over sources, arithmetic, memory, storage and
    comparison sinks; always stack-safe, bounded memory, ends with STOP."""
    rng = random.Random(seed)
    lines: list[str] = []
    depth = 0
    budget = max_ops - 1  # leave room for STOP

    def cost(atom):
        return len(atom)

    while budget > 0:
        choices = []
        if depth < 6:
            choices += [
                [f"PUSH1 {rng.randrange(256)}"],
                [rng.choice(_SOURCES0)],
                [f"PUSH1 {rng.randrange(64)}", rng.choice(_SOURCES1)],
                [f"PUSH1 {rng.randrange(1, 16)}",
                 f"PUSH1 {rng.randrange(32)}",
                 f"PUSH1 {rng.randrange(48)}",
                 "CALLDATACOPY"],
                [f"PUSH1 {rng.randrange(48)}", "MLOAD"],
                [f"PUSH1 {rng.randrange(8)}", "SLOAD"],
            ]
        if depth >= 1:
            choices += [
                [rng.choice(_ARITH1)],
                [f"PUSH1 {rng.randrange(48)}", "MSTORE"],
                [f"PUSH1 {rng.randrange(48)}", "MSTORE8"],
                [f"PUSH1 {rng.randrange(8)}", "SSTORE"],
                [f"DUP{rng.randrange(1, min(depth, 4) + 1)}"],
                ["POP"],
            ]
        if depth >= 2:
            choices += [
                [rng.choice(_ARITH2)],
                [rng.choice(_COMPARE)],
                [f"SWAP{rng.randrange(1, min(depth - 1, 4) + 1)}"],
            ]
        atom = rng.choice(choices)
        if cost(atom) > budget:
            break
        for mnem in atom:
            name = mnem.split()[0]
            info = opcodes.by_mnemonic(name)
            depth += info.alpha - info.delta
        lines.append("\n".join(atom))
        budget -= cost(atom)
    lines.append("STOP")
    return "\n".join(lines)
