"""Deterministic EVM-subset interpreter producing full per-step traces.

Execution model:
  * 256-bit wrapping arithmetic, two's-complement signed ops.
  * Gas is an abstract step budget shared by all frames of a transaction.
  * CALL/CALLCODE/DELEGATECALL/STATICCALL run the callee inline in the same
    trace (depth-limited); CREATE deploys the returned code from memory.
  * Opcodes outside the fully-implemented subset execute as
    "pop delta, push alpha zero words" so traces remain well-formed.
  * On success, storage effects commit to the caller's world; on revert or
    error the world is untouched.

A tracker object (see :mod:`ponzigraph.taint`) can observe every step in
lockstep; running without a tracker does no extra bookkeeping beyond the
trace itself.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import lru_cache

from . import opcodes
from .assembler import Bytecode

U256_MASK = (1 << 256) - 1
ADDR_MASK = (1 << 160) - 1
STACK_LIMIT = 1024
MEMORY_LIMIT = 1 << 20
CALL_DEPTH_LIMIT = 16
DEFAULT_STEP_LIMIT = 4096

CALL_FAMILY = frozenset({0xF1, 0xF2, 0xF4, 0xFA})
CREATE_FAMILY = frozenset({0xF0, 0xF5})
TERMINAL_OPS = frozenset({0x00, 0xF3, 0xFD, 0xFF})  # STOP RETURN REVERT SELFDESTRUCT

OUTCOME_SUCCESS = "success"
OUTCOME_REVERT = "revert"
OUTCOME_ERROR = "error"

ERR_STACK_UNDERFLOW = "stack_underflow"
ERR_STACK_OVERFLOW = "stack_overflow"
ERR_BAD_JUMP = "bad_jump"
ERR_STEP_LIMIT = "step_limit"
ERR_INVALID_OPCODE = "invalid_opcode"
ERR_MEMORY_LIMIT = "memory_limit"
ERR_STATIC_WRITE = "static_write"


class _FrameHalt(Exception):
    """Internal control flow: a frame finished (cleanly or not)."""

    def __init__(self, kind: str, data: bytes = b"", error: str | None = None):
        self.kind = kind  # stop | return | revert | selfdestruct | error
        self.data = data
        self.error = error
        super().__init__(kind)

    @property
    def ok(self) -> bool:
        return self.kind in ("stop", "return", "selfdestruct")


@dataclass
class Account:
    balance: int = 0
    code: bytes = b""
    storage: dict[int, int] = field(default_factory=dict)

    def copy(self) -> "Account":
        return Account(self.balance, self.code, dict(self.storage))


class World:
    """Flat account map: balances, code and storage."""

    def __init__(self, accounts: dict[int, Account] | None = None):
        self.accounts: dict[int, Account] = accounts if accounts is not None else {}
        self.create_nonce = 0

    def account(self, address: int) -> Account:
        acct = self.accounts.get(address)
        if acct is None:
            acct = Account()
            self.accounts[address] = acct
        return acct

    def balance(self, address: int) -> int:
        acct = self.accounts.get(address)
        return acct.balance if acct else 0

    def storage_of(self, address: int) -> dict[int, int]:
        return self.account(address).storage

    def copy(self) -> "World":
        clone = World({addr: acct.copy() for addr, acct in self.accounts.items()})
        clone.create_nonce = self.create_nonce
        return clone

    def adopt(self, other: "World") -> None:
        """Replace this world's contents with another's (commit point)."""
        self.accounts = other.accounts
        self.create_nonce = other.create_nonce

    def restore_in_place(self, snap: "World") -> None:
        """Roll back to a snapshot without disturbing account identities.

        Live frames hold references to account storage dicts, so rollback
        must mutate them in place rather than swap the account map.
        """
        for addr in [a for a in self.accounts if a not in snap.accounts]:
            del self.accounts[addr]
        for addr, snap_acct in snap.accounts.items():
            acct = self.accounts.get(addr)
            if acct is None:
                self.accounts[addr] = snap_acct.copy()
            else:
                acct.balance = snap_acct.balance
                acct.code = snap_acct.code
                acct.storage.clear()
                acct.storage.update(snap_acct.storage)
        self.create_nonce = snap.create_nonce

    def storage_snapshot(self) -> dict[int, dict[int, int]]:
        return {addr: dict(acct.storage) for addr, acct in self.accounts.items()}


@dataclass(frozen=True)
class TxEnv:
    caller: int
    origin: int
    value: int
    calldata: bytes
    timestamp: int
    block_hash: int
    self_address: int
    self_balance: int = 0  # balance after the call value is credited


@dataclass
class Step:
    index: int
    tx_index: int
    pc: int
    opcode: int
    mnemonic: str
    depth: int
    operands: tuple[int, ...] = ()
    results: tuple[int, ...] = ()
    stack_size_after: int = 0


@dataclass(frozen=True)
class StorageWrite:
    address: int
    slot: int
    value: int


@dataclass
class ExecutionTrace:
    tx_index: int
    steps: list[Step]
    outcome: str = OUTCOME_SUCCESS
    error_kind: str | None = None
    storage_writes: list[StorageWrite] = field(default_factory=list)
    return_data: bytes = b""


class MachineState:
    """Stack (top first when viewed), word-granular memory, live storage."""

    __slots__ = ("_stack", "memory", "storage", "pc", "gas_used", "halted")

    def __init__(self, storage: dict[int, int]):
        self._stack: list[int] = []  # top of stack kept at the END of the list
        self.memory = bytearray()
        self.storage = storage
        self.pc = 0
        self.gas_used = 0
        self.halted: str | None = None

    @property
    def stack(self) -> tuple[int, ...]:
        """Stack contents, top of stack at index 0."""
        return tuple(reversed(self._stack))

    def depth(self) -> int:
        return len(self._stack)

    def push(self, value: int) -> None:
        self._stack.append(value)

    def pop(self) -> int:
        return self._stack.pop()

    def peek(self, i: int = 0) -> int:
        return self._stack[-1 - i]

    def swap(self, n: int) -> None:
        s = self._stack
        s[-1], s[-1 - n] = s[-1 - n], s[-1]

    def grow_memory(self, offset: int, size: int) -> None:
        if size == 0:
            return
        end = offset + size
        if end > MEMORY_LIMIT:
            raise _FrameHalt("error", error=ERR_MEMORY_LIMIT)
        target = ((end + 31) // 32) * 32
        if target > len(self.memory):
            self.memory.extend(b"\x00" * (target - len(self.memory)))


@dataclass(frozen=True)
class FrameEnv:
    self_address: int
    caller: int
    origin: int
    value: int
    calldata: bytes
    code: bytes
    timestamp: int
    block_hash: int
    depth: int = 0
    static: bool = False


@lru_cache(maxsize=512)
def _valid_jumpdests(code: bytes) -> frozenset[int]:
    dests = set()
    pc = 0
    while pc < len(code):
        op = code[pc]
        if op == 0x5B:
            dests.add(pc)
        pc += 1 + (op - 0x5F if 0x60 <= op <= 0x7F else 0)
    return frozenset(dests)


def _signed(x: int) -> int:
    return x - (1 << 256) if x >> 255 else x


def _unsigned(x: int) -> int:
    return x & U256_MASK


def keccak_like(data: bytes) -> int:
    # sha3-256 stands in for keccak-256: same shape, deterministic; mainnet
    # hash compatibility is a non-goal.
    return int.from_bytes(hashlib.sha3_256(data).digest(), "big")


class _Runtime:
    """Per-transaction shared execution context."""

    __slots__ = ("world", "step_limit", "steps_used", "trace", "tracker",
                 "tx_index", "step_counter")

    def __init__(self, world: World, step_limit: int, tracker, tx_index: int):
        self.world = world
        self.step_limit = step_limit
        self.steps_used = 0
        self.trace: list[Step] = []
        self.tracker = tracker
        self.tx_index = tx_index
        self.step_counter = 0


def execute_transaction(
    world: World,
    tx: TxEnv,
    code: Bytecode | bytes | None = None,
    step_limit: int = DEFAULT_STEP_LIMIT,
    tracker=None,
    tx_index: int = 0,
) -> tuple[ExecutionTrace, MachineState]:
    """Run one transaction against ``world``.

    Commits storage/balance effects only on success; reverts and errors
    leave ``world`` untouched. The trace is returned in all cases.
    """
    if step_limit <= 0:
        raise ValueError("step_limit must be positive")
    scratch = world.copy()
    scratch.account(tx.self_address).balance += tx.value
    if code is None:
        raw_code = scratch.account(tx.self_address).code
    else:
        raw_code = code.code if isinstance(code, Bytecode) else code

    rt = _Runtime(scratch, step_limit, tracker, tx_index)
    env = FrameEnv(
        self_address=tx.self_address,
        caller=tx.caller,
        origin=tx.origin,
        value=tx.value,
        calldata=tx.calldata,
        code=raw_code,
        timestamp=tx.timestamp,
        block_hash=tx.block_hash,
    )
    if tracker is not None:
        tracker.on_transaction_start(tx_index, env)

    writes: list[StorageWrite] = []
    machine, halt = _run_frame(rt, env, writes)

    trace = ExecutionTrace(tx_index=tx_index, steps=rt.trace)
    if halt.kind == "error":
        trace.outcome = OUTCOME_ERROR
        trace.error_kind = halt.error
    elif halt.kind == "revert":
        trace.outcome = OUTCOME_REVERT
        trace.return_data = halt.data
    else:
        trace.outcome = OUTCOME_SUCCESS
        trace.return_data = halt.data
        trace.storage_writes = writes
        world.adopt(scratch)

    if tracker is not None:
        tracker.on_transaction_end(trace.outcome)
    return trace, machine


def _run_frame(rt: _Runtime, env: FrameEnv, writes: list[StorageWrite]):
    m = MachineState(rt.world.storage_of(env.self_address))
    try:
        _frame_loop(rt, env, m, writes)
        raise AssertionError("frame loop must raise _FrameHalt")
    except _FrameHalt as halt:
        m.halted = halt.error if halt.kind == "error" else halt.kind
        return m, halt


def _frame_loop(rt: _Runtime, env: FrameEnv, m: MachineState, writes) -> None:
    code = env.code
    jumpdests = _valid_jumpdests(code)
    tracker = rt.tracker

    while True:
        if rt.steps_used >= rt.step_limit:
            raise _FrameHalt("error", error=ERR_STEP_LIMIT)
        if m.pc >= len(code):
            raise _FrameHalt("stop")  # running off the code end halts cleanly
        op = code[m.pc]
        info = opcodes.by_value(op)
        if info is None:
            raise _FrameHalt("error", error=ERR_INVALID_OPCODE)
        if m.depth() < info.delta:
            raise _FrameHalt("error", error=ERR_STACK_UNDERFLOW)
        if m.depth() - info.delta + info.alpha > STACK_LIMIT:
            raise _FrameHalt("error", error=ERR_STACK_OVERFLOW)

        rt.steps_used += 1
        m.gas_used += 1
        step = Step(
            index=rt.step_counter,
            tx_index=rt.tx_index,
            pc=m.pc,
            opcode=op,
            mnemonic=info.mnemonic,
            depth=env.depth,
        )
        rt.step_counter += 1
        next_pc = m.pc + 1 + info.push_width

        try:
            if info.is_push:
                imm = code[m.pc + 1:next_pc]
                value = int.from_bytes(imm, "big")
                if len(imm) < info.push_width:  # trailing immediate zero-pads
                    value <<= 8 * (info.push_width - len(imm))
                rt.trace.append(step)
                if tracker is not None:
                    tracker.on_step(step, m)
                m.push(value)
                step.results = (value,)
            elif 0x80 <= op <= 0x8F:  # DUPn
                value = m.peek(op - 0x80)
                rt.trace.append(step)
                if tracker is not None:
                    tracker.on_step(step, m)
                m.push(value)
                step.results = (value,)
            elif 0x90 <= op <= 0x9F:  # SWAPn
                rt.trace.append(step)
                if tracker is not None:
                    tracker.on_step(step, m)
                m.swap(op - 0x8F)
            elif op in CALL_FAMILY:
                _op_call(rt, env, m, step, op, info, writes)
            elif op in CREATE_FAMILY:
                _op_create(rt, env, m, step, op, info, writes)
            else:
                operands = tuple(m.pop() for _ in range(info.delta))
                step.operands = operands
                _grow_for(m, op, operands)
                rt.trace.append(step)
                if tracker is not None:
                    tracker.on_step(step, m)
                results = _apply_op(rt, env, m, step, op, info, operands, jumpdests, writes)
                for r in results:
                    m.push(r)
                step.results = results
                if op == 0x56 or (op == 0x57 and operands[1] != 0):
                    next_pc = operands[0]  # target validated in _apply_op
        except _FrameHalt:
            step.stack_size_after = m.depth()
            raise

        step.stack_size_after = m.depth()
        if tracker is not None:
            tracker.on_step_complete(step, m)
        m.pc = next_pc


def _grow_for(m: MachineState, op: int, operands: tuple[int, ...]) -> None:
    """Memory growth happens before the step is observable by trackers."""
    if op == 0x51 or op == 0x52:  # MLOAD / MSTORE
        m.grow_memory(operands[0], 32)
    elif op == 0x53:  # MSTORE8
        m.grow_memory(operands[0], 1)
    elif op == 0x20:  # SHA3
        m.grow_memory(operands[0], operands[1])
    elif op == 0x37 or op == 0x39:  # CALLDATACOPY / CODECOPY
        m.grow_memory(operands[0], operands[2])
    elif op == 0xF3 or op == 0xFD:  # RETURN / REVERT
        m.grow_memory(operands[0], operands[1])


def _apply_op(rt, env, m, step, op, info, operands, jumpdests, writes) -> tuple[int, ...]:
    # arithmetic
    if op == 0x01:
        return ((operands[0] + operands[1]) & U256_MASK,)
    if op == 0x02:
        return ((operands[0] * operands[1]) & U256_MASK,)
    if op == 0x03:
        return ((operands[0] - operands[1]) & U256_MASK,)
    if op == 0x04:
        return (operands[0] // operands[1] if operands[1] else 0,)
    if op == 0x05:  # SDIV, truncated toward zero
        a, b = _signed(operands[0]), _signed(operands[1])
        return (_unsigned(abs(a) // abs(b) * (1 if (a >= 0) == (b >= 0) else -1)) if b else 0,)
    if op == 0x06:
        return (operands[0] % operands[1] if operands[1] else 0,)
    if op == 0x07:  # SMOD, sign of dividend
        a, b = _signed(operands[0]), _signed(operands[1])
        return (_unsigned(abs(a) % abs(b) * (1 if a >= 0 else -1)) if b else 0,)
    if op == 0x08:
        return ((operands[0] + operands[1]) % operands[2] if operands[2] else 0,)
    if op == 0x09:
        return ((operands[0] * operands[1]) % operands[2] if operands[2] else 0,)
    if op == 0x0A:
        return (pow(operands[0], operands[1], 1 << 256),)
    if op == 0x0B:  # SIGNEXTEND
        b, x = operands
        if b >= 31:
            return (x,)
        bits = 8 * (b + 1)
        mask = (1 << bits) - 1
        x &= mask
        if x >> (bits - 1):
            x |= U256_MASK ^ mask
        return (x,)
    # comparison / bitwise
    if op == 0x10:
        return (1 if operands[0] < operands[1] else 0,)
    if op == 0x11:
        return (1 if operands[0] > operands[1] else 0,)
    if op == 0x12:
        return (1 if _signed(operands[0]) < _signed(operands[1]) else 0,)
    if op == 0x13:
        return (1 if _signed(operands[0]) > _signed(operands[1]) else 0,)
    if op == 0x14:
        return (1 if operands[0] == operands[1] else 0,)
    if op == 0x15:
        return (1 if operands[0] == 0 else 0,)
    if op == 0x16:
        return (operands[0] & operands[1],)
    if op == 0x17:
        return (operands[0] | operands[1],)
    if op == 0x18:
        return (operands[0] ^ operands[1],)
    if op == 0x19:
        return (operands[0] ^ U256_MASK,)
    if op == 0x1A:  # BYTE
        i, x = operands
        return ((x >> (8 * (31 - i))) & 0xFF if i < 32 else 0,)
    if op == 0x1B:  # SHL
        shift, value = operands
        return ((value << shift) & U256_MASK if shift < 256 else 0,)
    if op == 0x1C:  # SHR
        shift, value = operands
        return (value >> shift if shift < 256 else 0,)
    if op == 0x1D:  # SAR
        shift, value = operands
        sv = _signed(value)
        if shift >= 256:
            return (0 if sv >= 0 else U256_MASK,)
        return (_unsigned(sv >> shift),)
    if op == 0x20:  # SHA3
        off, size = operands
        return (keccak_like(bytes(m.memory[off:off + size])),)
    # environment
    if op == 0x30:
        return (env.self_address,)
    if op == 0x31:
        return (rt.world.balance(operands[0] & ADDR_MASK),)
    if op == 0x32:
        return (env.origin,)
    if op == 0x33:
        return (env.caller,)
    if op == 0x34:
        return (env.value & U256_MASK,)
    if op == 0x35:  # CALLDATALOAD
        off = operands[0]
        if off >= len(env.calldata):
            return (0,)
        chunk = env.calldata[off:off + 32]
        return (int.from_bytes(chunk.ljust(32, b"\x00"), "big"),)
    if op == 0x36:
        return (len(env.calldata),)
    if op == 0x37:  # CALLDATACOPY
        dest, off, size = operands
        if size:
            data = env.calldata[off:off + size] if off < len(env.calldata) else b""
            m.memory[dest:dest + size] = data.ljust(size, b"\x00")
        return ()
    if op == 0x38:
        return (len(env.code),)
    if op == 0x39:  # CODECOPY
        dest, off, size = operands
        if size:
            data = env.code[off:off + size] if off < len(env.code) else b""
            m.memory[dest:dest + size] = data.ljust(size, b"\x00")
        return ()
    if op == 0x40:  # BLOCKHASH: desk model returns the env hash for any height
        return (env.block_hash,)
    if op == 0x42:
        return (env.timestamp,)
    # stack / memory / storage / flow
    if op == 0x50:
        return ()
    if op == 0x51:
        off = operands[0]
        return (int.from_bytes(bytes(m.memory[off:off + 32]), "big"),)
    if op == 0x52:
        off, value = operands
        m.memory[off:off + 32] = (value & U256_MASK).to_bytes(32, "big")
        return ()
    if op == 0x53:
        off, value = operands
        m.memory[off] = value & 0xFF
        return ()
    if op == 0x54:
        return (m.storage.get(operands[0], 0),)
    if op == 0x55:
        if env.static:
            raise _FrameHalt("error", error=ERR_STATIC_WRITE)
        slot, value = operands
        if value:
            m.storage[slot] = value
        else:
            m.storage.pop(slot, None)
        writes.append(StorageWrite(env.self_address, slot, value))
        return ()
    if op == 0x56:  # JUMP
        if operands[0] not in jumpdests:
            raise _FrameHalt("error", error=ERR_BAD_JUMP)
        return ()
    if op == 0x57:  # JUMPI
        if operands[1] != 0 and operands[0] not in jumpdests:
            raise _FrameHalt("error", error=ERR_BAD_JUMP)
        return ()
    if op == 0x58:
        return (step.pc,)
    if op == 0x59:
        return (len(m.memory),)
    if op == 0x5A:  # GAS: remaining abstract step budget
        return (rt.step_limit - rt.steps_used,)
    if op == 0x5B:
        return ()
    # halts
    if op == 0x00:
        raise _FrameHalt("stop")
    if op == 0xF3:
        off, size = operands
        raise _FrameHalt("return", bytes(m.memory[off:off + size]))
    if op == 0xFD:
        off, size = operands
        raise _FrameHalt("revert", bytes(m.memory[off:off + size]))
    if op == 0xFF:  # SELFDESTRUCT
        if env.static:
            raise _FrameHalt("error", error=ERR_STATIC_WRITE)
        beneficiary = operands[0] & ADDR_MASK
        acct = rt.world.account(env.self_address)
        rt.world.account(beneficiary).balance += acct.balance
        acct.balance = 0
        raise _FrameHalt("selfdestruct")
    # everything else in the vocabulary: alpha zero words
    return (0,) * info.alpha


def _op_call(rt: _Runtime, env: FrameEnv, m: MachineState, step: Step, op: int,
             info, writes: list[StorageWrite]) -> None:
    operands = tuple(m.pop() for _ in range(info.delta))
    step.operands = operands
    if op in (0xF1, 0xF2):  # CALL / CALLCODE carry an explicit value operand
        _gas, to, value, in_off, in_size, out_off, out_size = operands
    else:
        _gas, to, in_off, in_size, out_off, out_size = operands
        value = env.value if op == 0xF4 else 0
    to &= ADDR_MASK
    m.grow_memory(in_off, in_size)
    m.grow_memory(out_off, out_size)
    rt.trace.append(step)
    if rt.tracker is not None:
        rt.tracker.on_step(step, m)

    transfer = value if op == 0xF1 else 0  # only plain CALL moves balance
    callee_acct = rt.world.accounts.get(to)
    callee_code = callee_acct.code if callee_acct else b""
    blocked = (
        env.depth + 1 > CALL_DEPTH_LIMIT
        or transfer > rt.world.balance(env.self_address)
        or (env.static and transfer > 0)
    )
    flag = 0
    if blocked:
        flag = 0
    elif not callee_code:
        if transfer:
            rt.world.account(env.self_address).balance -= transfer
            rt.world.account(to).balance += transfer
        flag = 1
    else:
        snapshot = rt.world.copy()
        tracker_token = rt.tracker.snapshot() if rt.tracker is not None else None
        if transfer:
            rt.world.account(env.self_address).balance -= transfer
            rt.world.account(to).balance += transfer
        child = FrameEnv(
            self_address=to if op in (0xF1, 0xFA) else env.self_address,
            caller=env.caller if op == 0xF4 else env.self_address,
            origin=env.origin,
            value=value,
            calldata=bytes(m.memory[in_off:in_off + in_size]),
            code=callee_code,
            timestamp=env.timestamp,
            block_hash=env.block_hash,
            depth=env.depth + 1,
            static=env.static or op == 0xFA,
        )
        child_writes: list[StorageWrite] = []
        if rt.tracker is not None:
            rt.tracker.on_frame_enter(step, child)
        _child_m, halt = _run_frame(rt, child, child_writes)
        if halt.ok:
            flag = 1
            if out_size and halt.data:
                data = halt.data[:out_size]
                m.memory[out_off:out_off + len(data)] = data
            writes.extend(child_writes)
        else:
            rt.world.restore_in_place(snapshot)
            if rt.tracker is not None:
                rt.tracker.restore(tracker_token)
        if rt.tracker is not None:
            rt.tracker.on_frame_exit(halt.ok)

    m.push(flag)
    step.results = (flag,)
    if rt.tracker is not None:
        rt.tracker.on_call_result(step, flag)


def _op_create(rt: _Runtime, env: FrameEnv, m: MachineState, step: Step, op: int,
               info, writes: list[StorageWrite]) -> None:
    operands = tuple(m.pop() for _ in range(info.delta))
    step.operands = operands
    if op == 0xF0:
        value, off, size = operands
    else:  # CREATE2 (salt ignored by the desk model's address scheme)
        value, off, size, _salt = operands
    m.grow_memory(off, size)
    rt.trace.append(step)
    if rt.tracker is not None:
        rt.tracker.on_step(step, m)

    result = 0
    can_create = (
        not env.static
        and env.depth + 1 <= CALL_DEPTH_LIMIT
        and value <= rt.world.balance(env.self_address)
    )
    if can_create:
        init_code = bytes(m.memory[off:off + size])
        snapshot = rt.world.copy()
        tracker_token = rt.tracker.snapshot() if rt.tracker is not None else None
        rt.world.create_nonce += 1
        new_addr = keccak_like(
            env.self_address.to_bytes(20, "big") + rt.world.create_nonce.to_bytes(8, "big")
        ) & ADDR_MASK
        rt.world.account(env.self_address).balance -= value
        rt.world.account(new_addr).balance += value
        child = FrameEnv(
            self_address=new_addr,
            caller=env.self_address,
            origin=env.origin,
            value=value,
            calldata=b"",
            code=init_code,
            timestamp=env.timestamp,
            block_hash=env.block_hash,
            depth=env.depth + 1,
        )
        child_writes: list[StorageWrite] = []
        if rt.tracker is not None:
            rt.tracker.on_frame_enter(step, child)
        _child_m, halt = _run_frame(rt, child, child_writes)
        if halt.ok:
            rt.world.account(new_addr).code = halt.data
            result = new_addr
            writes.extend(child_writes)
        else:
            rt.world.restore_in_place(snapshot)
            if rt.tracker is not None:
                rt.tracker.restore(tracker_token)
        if rt.tracker is not None:
            rt.tracker.on_frame_exit(halt.ok)

    m.push(result)
    step.results = (result,)
    if rt.tracker is not None:
        rt.tracker.on_call_result(step, result)
