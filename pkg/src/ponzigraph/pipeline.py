"""End-to-end orchestration: contract sources to featurized behavior graphs.

Per contract: derive the manifest, generate invocation sequences, execute
them against one persistent world with the taint engine attached, build
per-transaction raw graphs, prune (behavioral, then similarity), join the
survivors into a single graph, and featurize. Everything is a pure
function of (sources, config), so reruns are byte-identical.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from . import crbg as crbg_mod
from . import txgen
from .crbg import Crbg, RawGraph, TxMeta, build_raw_graph, featurize, join_graphs, prune_behavioral, prune_similar
from .evm.assembler import AssemblyError, Bytecode, assemble
from .evm.interp import DEFAULT_STEP_LIMIT, ExecutionTrace, TxEnv, World, execute_transaction
from .taint import DataFlowEvent, TaintEngine

CONTRACT_ADDRESS = 0xC0DE0000000000000000000000000000000000CE
BASE_TIMESTAMP = 1_700_000_000
BLOCK_SECONDS = 15


class PipelineError(Exception):
    pass


@dataclass
class PipelineConfig:
    seed: int = 0
    max_sequences: int = 8
    similarity_threshold: float = 0.975
    step_limit: int = DEFAULT_STEP_LIMIT
    base_value: int = txgen.DEFAULT_BASE_VALUE
    keywords: tuple[str, ...] | None = None  # None: the manifest's own list

    def validate(self) -> None:
        if self.seed < 0:
            raise PipelineError("seed must be non-negative")
        if self.max_sequences <= 0:
            raise PipelineError("max_sequences must be positive")
        if not 0.0 < self.similarity_threshold <= 1.0:
            raise PipelineError("similarity_threshold must be in (0, 1]")
        if self.step_limit <= 0:
            raise PipelineError("step_limit must be positive")
        if self.base_value <= 0:
            raise PipelineError("base_value must be positive")


@dataclass
class TxRecord:
    meta: TxMeta
    trace: ExecutionTrace


@dataclass
class ContractRun:
    """All intermediates of one contract's pipeline pass."""

    name: str
    manifest: txgen.Manifest
    sequences: list[txgen.TxSequence]
    records: list[TxRecord]
    events: list[DataFlowEvent]
    raw_graphs: list[RawGraph]
    retained: list[RawGraph]
    joined: RawGraph
    crbg: Crbg
    pruning_fallback: bool = False


def block_hash_for(tx_index: int) -> int:
    from .evm.interp import keccak_like

    return keccak_like(b"block:" + tx_index.to_bytes(8, "big"))


def execute_sequences(
    code: Bytecode,
    manifest: txgen.Manifest,
    sequences: list[txgen.TxSequence],
    step_limit: int = DEFAULT_STEP_LIMIT,
    tracker: TaintEngine | None = None,
) -> tuple[list[TxRecord], World]:
    """Run every sequence against one persistent contract instance."""
    world = World()
    acct = world.account(CONTRACT_ADDRESS)
    acct.code = code.code
    acct.storage.update(manifest.initial_storage)
    acct.balance = manifest.initial_balance

    records: list[TxRecord] = []
    tx_index = 0
    for seq in sequences:
        for call in seq.txs:
            env = TxEnv(
                caller=call.caller,
                origin=call.caller,
                value=call.value,
                calldata=call.calldata,
                timestamp=BASE_TIMESTAMP + BLOCK_SECONDS * tx_index,
                block_hash=block_hash_for(tx_index),
                self_address=CONTRACT_ADDRESS,
                self_balance=world.balance(CONTRACT_ADDRESS) + call.value,
            )
            trace, _machine = execute_transaction(
                world, env, step_limit=step_limit, tracker=tracker, tx_index=tx_index,
            )
            meta = TxMeta(tx_index=tx_index, selector=call.selector, value=call.value,
                          caller=call.caller, outcome=trace.outcome)
            records.append(TxRecord(meta=meta, trace=trace))
            tx_index += 1
    return records, world


def graphs_from_records(records: list[TxRecord], events: list[DataFlowEvent]) -> list[RawGraph]:
    by_sink: dict[int, list[DataFlowEvent]] = {}
    for ev in events:
        by_sink.setdefault(ev.snk_tx, []).append(ev)
    graphs = []
    for rec in records:
        if not rec.trace.steps:
            continue
        graphs.append(build_raw_graph(rec.trace, by_sink.get(rec.meta.tx_index, ()), rec.meta))
    return graphs


def run_contract(
    source: str,
    interface: dict | str | None,
    config: PipelineConfig = PipelineConfig(),
    name: str = "contract",
    label: int | None = None,
) -> ContractRun:
    """The full trace-to-graph pipeline for one assembler contract."""
    config.validate()
    code = assemble(source)
    manifest = txgen.derive_manifest(code, interface)
    if config.keywords is not None:
        manifest.keywords = tuple(config.keywords)
    groups = txgen.categorize(manifest)
    dep_map = txgen.build_dependency_map(manifest)
    sequences = txgen.generate_sequences(
        manifest, groups, dep_map,
        max_sequences=config.max_sequences,
        seed=config.seed,
        base_value=config.base_value,
    )
    engine = TaintEngine()
    records, _world = execute_sequences(code, manifest, sequences,
                                        step_limit=config.step_limit, tracker=engine)
    events = list(engine.events)
    raw_graphs = graphs_from_records(records, events)
    if not raw_graphs:
        raise PipelineError(f"{name}: no executable transactions produced a trace")

    behavioral = prune_behavioral(raw_graphs)
    fallback = not behavioral
    if fallback:
        # nothing matched the investment/reward filters: keep the deduplicated
        # raw graphs so the contract still yields a classifiable CRBG
        behavioral = raw_graphs
    retained = prune_similar(behavioral, config.similarity_threshold)
    joined = join_graphs(retained, [ev for ev in events if ev.cross_tx])
    graph = featurize(joined, label=label, name=name)
    return ContractRun(
        name=name,
        manifest=manifest,
        sequences=sequences,
        records=records,
        events=events,
        raw_graphs=raw_graphs,
        retained=retained,
        joined=joined,
        crbg=graph,
        pruning_fallback=fallback,
    )


# ---------------------------------------------------------------------------
# corpus loading

@dataclass(frozen=True)
class CorpusEntry:
    name: str
    label: int  # 1 Ponzi, 0 benign
    source_path: Path
    interface_path: Path


def corpus_root() -> Path:
    return Path(__file__).parent / "corpus"


def discover_corpus(root: Path | None = None) -> list[CorpusEntry]:
    root = root or corpus_root()
    entries: list[CorpusEntry] = []
    for label_name, label in (("ponzi", crbg_mod.LABEL_PONZI), ("benign", crbg_mod.LABEL_BENIGN)):
        directory = root / label_name
        if not directory.is_dir():
            continue
        for source in sorted(directory.glob("*.easm")):
            interface = source.with_suffix(".json")
            if not interface.exists():
                raise PipelineError(f"{source.name}: missing interface manifest")
            entries.append(CorpusEntry(source.stem, label, source, interface))
    return entries


def run_corpus_entry(entry: CorpusEntry, config: PipelineConfig = PipelineConfig()) -> ContractRun:
    source = entry.source_path.read_text(encoding="utf-8")
    interface = json.loads(entry.interface_path.read_text(encoding="utf-8"))
    return run_contract(source, interface, config, name=entry.name, label=entry.label)


def build_corpus_dataset(config: PipelineConfig = PipelineConfig(),
                         root: Path | None = None) -> list[ContractRun]:
    return [run_corpus_entry(e, config) for e in discover_corpus(root)]
