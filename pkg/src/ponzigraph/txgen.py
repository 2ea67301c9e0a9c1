"""Function discovery and transaction-sequence generation.

Static side: recognize the 4-byte-selector dispatcher idiom, walk each
dispatch branch, and collect per-function storage read/write sets (constant
slots; anything computed degrades to a wildcard that conflicts with every
slot). An interface description supplies names, payability and parameter
types; both together form the contract manifest.

Dynamic side: group functions (keyword / payable / state-writing), then
build invocation chains that mimic investment behavior: a prioritized
first pick, then Read-After-Write chaining, with random arguments, a pool
of distinct caller addresses and a strictly increasing Ether schedule for
payable calls.
"""

from __future__ import annotations

import json
import random
import string as string_mod
from dataclasses import dataclass, field, replace

from .evm import assembler, opcodes
from .evm.assembler import Bytecode, Instr

WILDCARD = "*"
FALLBACK_SELECTOR = -1
DEFAULT_KEYWORDS = ("invest", "enter", "init", "deposit")
# spaced so caller-derived storage slots (caller + small offset) never collide
DEFAULT_CALLER_POOL = tuple(0xAA000000000000000000000000000000AA000000 + 0x10000 * i for i in range(1, 9))
DEFAULT_BASE_VALUE = 10**16  # 0.01 ether in wei

_STATIC_PARAM_KINDS = {"uint", "int", "address", "bool", "bytesn"}
_DYNAMIC_PARAM_KINDS = {"string", "bytes"}


class ManifestError(Exception):
    pass


class InertContractError(ManifestError):
    """No selectable function mutates state or accepts Ether."""


class UnsupportedParamError(ManifestError):
    pass


@dataclass(frozen=True)
class ParamSpec:
    kind: str
    width: int = 0  # bits for uint/int, bytes for bytesn

    def __post_init__(self):
        if self.kind not in _STATIC_PARAM_KINDS | _DYNAMIC_PARAM_KINDS:
            raise UnsupportedParamError(f"unsupported param kind {self.kind!r}")


@dataclass
class FunctionDescriptor:
    name: str
    selector: int
    payable: bool = False
    mutating: bool = False
    params: tuple[ParamSpec, ...] = ()
    reads: frozenset = frozenset()
    writes: frozenset = frozenset()


@dataclass
class Manifest:
    contract_name: str
    functions: list[FunctionDescriptor]
    fallback: FunctionDescriptor | None = None
    keywords: tuple[str, ...] = DEFAULT_KEYWORDS
    initial_storage: dict[int, int] = field(default_factory=dict)
    initial_balance: int = 0

    def all_functions(self) -> list[FunctionDescriptor]:
        fns = list(self.functions)
        if self.fallback is not None:
            fns.append(self.fallback)
        return fns

    def by_selector(self, selector: int) -> FunctionDescriptor:
        for fn in self.all_functions():
            if fn.selector == selector:
                return fn
        raise KeyError(f"no function with selector {selector:#x}")


@dataclass(frozen=True)
class FunctionGroups:
    f_kws: frozenset[int]
    f_payable: frozenset[int]
    f_w: frozenset[int]
    f_all: frozenset[int]


@dataclass(frozen=True)
class TxCall:
    selector: int
    calldata: bytes
    value: int
    caller: int


@dataclass(frozen=True)
class Choice:
    """Which rule picked which function from which candidate pool."""

    rule: str  # first | first_all | dep | all
    pool: tuple[int, ...]
    chosen: int


@dataclass
class TxSequence:
    txs: list[TxCall]
    seed: int
    choices: list[Choice] = field(default_factory=list)


# ---------------------------------------------------------------------------
# interface description (JSON)

def _parse_selector(raw) -> int:
    return int(raw, 16) if isinstance(raw, str) else int(raw)


def _parse_slots(raw) -> frozenset:
    out = set()
    for item in raw:
        out.add(WILDCARD if item == WILDCARD else (int(item, 16) if isinstance(item, str) else int(item)))
    return frozenset(out)


def load_interface(data: dict | str) -> Manifest:
    """Parse an interface/manifest description (JSON text or dict)."""
    if isinstance(data, str):
        data = json.loads(data)
    functions = []
    for raw in data.get("functions", ()):
        params = tuple(ParamSpec(p["kind"], p.get("width", 0)) for p in raw.get("params", ()))
        functions.append(FunctionDescriptor(
            name=raw["name"],
            selector=_parse_selector(raw["selector"]),
            payable=bool(raw.get("payable", False)),
            params=params,
            reads=_parse_slots(raw.get("reads", ())),
            writes=_parse_slots(raw.get("writes", ())),
        ))
    fallback = None
    if "fallback" in data:
        raw = data["fallback"]
        fallback = FunctionDescriptor(
            name=raw.get("name", "fallback"),
            selector=FALLBACK_SELECTOR,
            payable=bool(raw.get("payable", True)),
            reads=_parse_slots(raw.get("reads", ())),
            writes=_parse_slots(raw.get("writes", ())),
        )
    storage = {int(k, 16) if isinstance(k, str) else int(k):
               int(v, 16) if isinstance(v, str) else int(v)
               for k, v in data.get("initial_storage", {}).items()}
    return Manifest(
        contract_name=data.get("contract_name", "contract"),
        functions=functions,
        fallback=fallback,
        keywords=tuple(data.get("keywords", DEFAULT_KEYWORDS)),
        initial_storage=storage,
        initial_balance=int(data.get("initial_balance", 0)),
    )


def manifest_to_dict(manifest: Manifest) -> dict:
    def slots(s):
        return sorted((hex(x) for x in s if x != WILDCARD)) + ([WILDCARD] if WILDCARD in s else [])

    def fn_dict(fn: FunctionDescriptor) -> dict:
        return {
            "name": fn.name,
            "selector": "fallback" if fn.selector == FALLBACK_SELECTOR else f"{fn.selector:#010x}",
            "payable": fn.payable,
            "mutating": fn.mutating,
            "params": [{"kind": p.kind, "width": p.width} for p in fn.params],
            "reads": slots(fn.reads),
            "writes": slots(fn.writes),
        }

    out = {
        "contract_name": manifest.contract_name,
        "keywords": list(manifest.keywords),
        "functions": [fn_dict(fn) for fn in manifest.functions],
    }
    if manifest.fallback is not None:
        out["fallback"] = fn_dict(manifest.fallback)
    if manifest.initial_storage:
        out["initial_storage"] = {hex(k): hex(v) for k, v in sorted(manifest.initial_storage.items())}
    if manifest.initial_balance:
        out["initial_balance"] = manifest.initial_balance
    return out


# ---------------------------------------------------------------------------
# static scan

_HALT_MNEMONICS = {"STOP", "RETURN", "REVERT", "SELFDESTRUCT", "INVALID"}


def scan_dispatcher(code: Bytecode | bytes) -> tuple[dict[int, int], int | None]:
    """Find `PUSH4 sel EQ PUSHn dest JUMPI` chains.

    Returns (selector -> branch entry pc, fallback entry pc). The fallback
    entry is the instruction following the last dispatch check.
    """
    instrs = assembler.disassemble(code)
    entries: dict[int, int] = {}
    last_dispatch = -1
    for i in range(len(instrs) - 3):
        a, b, c, d = instrs[i:i + 4]
        if (a.info.mnemonic == "PUSH4" and b.info.mnemonic == "EQ"
                and c.info.is_push and d.info.mnemonic == "JUMPI"):
            entries[a.immediate_value] = c.immediate_value
            last_dispatch = i + 3
    fallback_pc = None
    if last_dispatch >= 0 and last_dispatch + 1 < len(instrs):
        fallback_pc = instrs[last_dispatch + 1].pc
    return entries, fallback_pc


def _walk_branch(instrs: list[Instr], by_pc: dict[int, int], entry_pc: int) -> tuple[frozenset, frozenset, bool]:
    """Collect storage reads/writes reachable from a branch entry.

    Also reports whether the branch opens with a call-value guard (the
    non-payable idiom: CALLVALUE ... JUMPI into a revert).
    """
    start = by_pc.get(entry_pc)
    reads: set = set()
    writes: set = set()
    if start is None:
        return frozenset(), frozenset(), False
    seen: set[int] = set()
    work = [start]
    while work:
        idx = work.pop()
        if idx in seen or idx >= len(instrs):
            continue
        seen.add(idx)
        ins = instrs[idx]
        mnem = ins.info.mnemonic
        if mnem in ("SLOAD", "SSTORE"):
            prev = instrs[idx - 1] if idx > 0 else None
            slot = prev.immediate_value if prev is not None and prev.info.is_push else WILDCARD
            (reads if mnem == "SLOAD" else writes).add(slot)
        if mnem in _HALT_MNEMONICS:
            continue
        if mnem == "JUMP":
            prev = instrs[idx - 1] if idx > 0 else None
            if prev is not None and prev.info.is_push and prev.immediate_value in by_pc:
                work.append(by_pc[prev.immediate_value])
            continue
        if mnem == "JUMPI":
            prev = instrs[idx - 1] if idx > 0 else None
            if prev is not None and prev.info.is_push and prev.immediate_value in by_pc:
                work.append(by_pc[prev.immediate_value])
        work.append(idx + 1)

    # non-payable idiom: CALLVALUE feeding a JUMPI right at the branch head
    guard = False
    head = instrs[start:start + 6]
    for j, ins in enumerate(head):
        if ins.info.mnemonic == "CALLVALUE":
            guard = any(t.info.mnemonic == "JUMPI" for t in head[j + 1:j + 3])
            break
    return frozenset(reads), frozenset(writes), guard


def derive_manifest(code: Bytecode | bytes, interface: Manifest | dict | str | None = None) -> Manifest:
    """Complete a manifest with statically derived read/write sets.

    Requires the standard selector-dispatcher idiom; without an interface
    description, function names are synthesized and payability falls back
    to the call-value-guard heuristic.
    """
    entries, fallback_pc = scan_dispatcher(code)
    if interface is not None and not isinstance(interface, Manifest):
        interface = load_interface(interface)
    if not entries and interface is None:
        raise ManifestError("dispatcher not recognized and no interface supplied")

    instrs = assembler.disassemble(code)
    by_pc = {ins.pc: i for i, ins in enumerate(instrs)}

    if interface is None:
        functions = []
        for selector, pc in sorted(entries.items()):
            reads, writes, guard = _walk_branch(instrs, by_pc, pc)
            functions.append(FunctionDescriptor(
                name=f"func_{selector:08x}",
                selector=selector,
                payable=not guard,
                mutating=bool(writes),
                reads=reads,
                writes=writes,
            ))
        fallback = None
        if fallback_pc is not None:
            reads, writes, guard = _walk_branch(instrs, by_pc, fallback_pc)
            fallback = FunctionDescriptor(
                name="fallback", selector=FALLBACK_SELECTOR, payable=not guard,
                mutating=bool(writes), reads=reads, writes=writes,
            )
        return Manifest(contract_name="contract", functions=functions, fallback=fallback)

    functions = []
    for fn in interface.functions:
        pc = entries.get(fn.selector)
        if pc is None:
            raise ManifestError(
                f"function {fn.name!r} (selector {fn.selector:#010x}) not in dispatcher"
            )
        reads, writes, _ = _walk_branch(instrs, by_pc, pc)
        functions.append(replace(fn, reads=fn.reads | reads, writes=fn.writes | writes,
                                 mutating=bool(fn.writes | writes)))
    fallback = None
    if interface.fallback is not None:
        reads, writes = frozenset(), frozenset()
        if fallback_pc is not None:
            reads, writes, _ = _walk_branch(instrs, by_pc, fallback_pc)
        fb = interface.fallback
        fallback = replace(fb, reads=fb.reads | reads, writes=fb.writes | writes,
                           mutating=bool(fb.writes | writes))
    return replace(interface, functions=functions, fallback=fallback)


# ---------------------------------------------------------------------------
# grouping and dependencies

def _slots_conflict(a: frozenset, b: frozenset) -> bool:
    if not a or not b:
        return False
    if WILDCARD in a or WILDCARD in b:
        return True
    return bool(a & b)


def build_dependency_map(manifest: Manifest) -> dict[int, frozenset[int]]:
    """B depends on A when B reads a slot A writes (wildcards conflict with all)."""
    fns = manifest.all_functions()
    out: dict[int, frozenset[int]] = {}
    for a in fns:
        out[a.selector] = frozenset(
            b.selector for b in fns if _slots_conflict(b.reads, a.writes)
        )
    return out


def categorize(manifest: Manifest) -> FunctionGroups:
    """Group functions after dropping view/pure ones (neither mutating nor payable)."""
    selectable = [fn for fn in manifest.all_functions() if fn.mutating or fn.payable]
    if not selectable:
        raise InertContractError(
            f"{manifest.contract_name}: no function mutates state or accepts Ether"
        )
    keywords = tuple(k.lower() for k in manifest.keywords)
    f_kws = frozenset(fn.selector for fn in selectable
                      if any(k in fn.name.lower() for k in keywords))
    f_payable = frozenset(fn.selector for fn in selectable if fn.payable)
    f_w = frozenset(fn.selector for fn in selectable if fn.mutating)
    f_all = frozenset(fn.selector for fn in selectable)
    return FunctionGroups(f_kws=f_kws, f_payable=f_payable, f_w=f_w, f_all=f_all)


# ---------------------------------------------------------------------------
# transaction generation

class ValueSchedule:
    """Strictly increasing Ether amounts: v0 * 2^k across payable calls."""

    def __init__(self, base: int = DEFAULT_BASE_VALUE, factor: int = 2):
        self.base = base
        self.factor = factor
        self.count = 0

    def next(self) -> int:
        value = self.base * self.factor ** self.count
        self.count += 1
        return value


class CallerPool:
    """Distinct investor addresses, round-robin with a random perturbation."""

    def __init__(self, addresses: tuple[int, ...] = DEFAULT_CALLER_POOL):
        self.addresses = addresses
        self.counter = 0

    def next(self, rng: random.Random) -> int:
        addr = self.addresses[(self.counter + rng.randrange(2)) % len(self.addresses)]
        self.counter += 1
        return addr


def _random_param_value(spec: ParamSpec, rng: random.Random, pool: tuple[int, ...]):
    if spec.kind == "uint":
        return rng.randrange(0, 1 << spec.width)
    if spec.kind == "int":
        return rng.randrange(-(1 << (spec.width - 1)), 1 << (spec.width - 1))
    if spec.kind == "address":
        return rng.choice(pool)  # plausible investor addresses
    if spec.kind == "bool":
        return rng.randrange(2)
    if spec.kind == "bytesn":
        return rng.randbytes(spec.width)
    if spec.kind == "string":
        length = rng.randrange(1, 33)
        return "".join(rng.choice(string_mod.ascii_lowercase) for _ in range(length))
    if spec.kind == "bytes":
        return rng.randbytes(rng.randrange(1, 33))
    raise UnsupportedParamError(f"unsupported param kind {spec.kind!r}")


def encode_arguments(params: tuple[ParamSpec, ...], values: list) -> bytes:
    """ABI-style head/tail encoding for the supported parameter subset."""
    head: list[bytes] = []
    tail: list[bytes] = []
    head_size = 32 * len(params)
    for spec, value in zip(params, values):
        if spec.kind in _STATIC_PARAM_KINDS:
            head.append(_encode_static(spec, value))
        else:
            offset = head_size + sum(len(t) for t in tail)
            head.append(offset.to_bytes(32, "big"))
            data = value.encode("utf-8") if spec.kind == "string" else value
            padded = data.ljust((len(data) + 31) // 32 * 32, b"\x00")
            tail.append(len(data).to_bytes(32, "big") + padded)
    return b"".join(head) + b"".join(tail)


def _encode_static(spec: ParamSpec, value) -> bytes:
    if spec.kind == "uint" or spec.kind == "address" or spec.kind == "bool":
        return int(value).to_bytes(32, "big")
    if spec.kind == "int":
        return (int(value) & ((1 << 256) - 1)).to_bytes(32, "big")
    if spec.kind == "bytesn":  # left-aligned
        return bytes(value).ljust(32, b"\x00")
    raise UnsupportedParamError(spec.kind)


def decode_arguments(params: tuple[ParamSpec, ...], data: bytes) -> list:
    """Inverse of encode_arguments (used for round-trip checks)."""
    out = []
    for i, spec in enumerate(params):
        word = data[32 * i:32 * i + 32]
        if spec.kind in ("uint", "address", "bool"):
            out.append(int.from_bytes(word, "big"))
        elif spec.kind == "int":
            raw = int.from_bytes(word, "big")
            out.append(raw - (1 << 256) if raw >> 255 else raw)
        elif spec.kind == "bytesn":
            out.append(word[:spec.width])
        else:
            offset = int.from_bytes(word, "big")
            length = int.from_bytes(data[offset:offset + 32], "big")
            blob = data[offset + 32:offset + 32 + length]
            out.append(blob.decode("utf-8") if spec.kind == "string" else blob)
    return out


def generate_transaction(
    func: FunctionDescriptor,
    rng: random.Random,
    schedule: ValueSchedule,
    callers: CallerPool,
) -> TxCall:
    """Encode one call: random in-range arguments, scheduled value, pooled caller."""
    caller = callers.next(rng)
    value = schedule.next() if func.payable else 0
    if func.selector == FALLBACK_SELECTOR:
        calldata = b""
    else:
        values = [_random_param_value(p, rng, callers.addresses) for p in func.params]
        calldata = func.selector.to_bytes(4, "big") + encode_arguments(func.params, values)
    return TxCall(selector=func.selector, calldata=calldata, value=value, caller=caller)


def _random_choose(rng: random.Random, *pools: frozenset[int]) -> tuple[int, tuple[int, ...]] | None:
    """Uniform pick from the first non-empty pool, in priority order."""
    for pool in pools:
        if pool:
            ordered = tuple(sorted(pool))
            return rng.choice(ordered), ordered
    return None


def generate_sequences(
    manifest: Manifest,
    groups: FunctionGroups,
    dep_map: dict[int, frozenset[int]],
    max_sequences: int = 8,
    seed: int = 0,
    base_value: int = DEFAULT_BASE_VALUE,
    caller_addresses: tuple[int, ...] = DEFAULT_CALLER_POOL,
) -> list[TxSequence]:
    """Invocation chains: prioritized first pick, then Read-After-Write order.

    Each sequence has exactly |f_all| transactions. The Ether schedule and
    caller rotation persist across sequences so later sequences keep feeding
    the same contract instance. Fully deterministic for a given seed.
    """
    if max_sequences <= 0:
        raise ValueError("max_sequences must be positive")
    if not groups.f_all:
        raise InertContractError(manifest.contract_name)

    choice_rng = random.Random(seed)
    payload_rng = random.Random(f"{seed}/payload")
    schedule = ValueSchedule(base=base_value)
    callers = CallerPool(caller_addresses)
    sequences: list[TxSequence] = []

    for _ in range(max_sequences):
        txs: list[TxCall] = []
        choices: list[Choice] = []
        picked = _random_choose(choice_rng, groups.f_kws, groups.f_payable, groups.f_w)
        if picked is None:
            chosen, pool = _random_choose(choice_rng, groups.f_all)
            choices.append(Choice("first_all", pool, chosen))
        else:
            chosen, pool = picked
            choices.append(Choice("first", pool, chosen))
        txs.append(generate_transaction(manifest.by_selector(chosen), payload_rng, schedule, callers))

        while len(txs) < len(groups.f_all):
            f_dep = dep_map.get(txs[-1].selector, frozenset()) & groups.f_all
            if f_dep:
                chosen, pool = _random_choose(choice_rng, f_dep, groups.f_all)
                choices.append(Choice("dep", pool, chosen))
            else:
                chosen, pool = _random_choose(choice_rng, groups.f_all)
                choices.append(Choice("all", pool, chosen))
            txs.append(generate_transaction(manifest.by_selector(chosen), payload_rng, schedule, callers))

        sequences.append(TxSequence(txs=txs, seed=seed, choices=choices))
    return sequences
