"""Contract runtime behavior graphs.

A raw graph has one node per executed opcode and typed edges: six
control-flow kinds (adjacent, jump, call, return, create, halt-to-sentinel),
eight data-flow kinds (one per taint label), plus the connection edges that
chain per-transaction subgraphs into the final CRBG. Nodes carry
102-dimensional features (100-d hashed description embedding plus the
opcode's stack arity); edges carry a 15-dimensional one-hot type vector.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from .evm import opcodes
from .evm.interp import CALL_FAMILY, CREATE_FAMILY, ExecutionTrace
from .taint import DataFlowEvent, TaintLabel

NODE_FEATURE_DIM = 102
EDGE_FEATURE_DIM = 15
TEXT_EMBED_DIM = 100

LABEL_PONZI = 1
LABEL_BENIGN = 0


class GraphBuildError(Exception):
    pass


class EdgeType(IntEnum):
    ADJACENT = 0
    JUMP = 1
    CALL = 2
    RETURN = 3
    CREATE = 4
    HALT = 5
    CALL_VALUE = 6
    CALLDATA = 7
    CALLDATA_SIZE = 8
    CALLER = 9
    ORIGIN = 10
    BLOCK_ENV = 11
    BALANCE = 12
    SELF_ADDRESS = 13
    CONNECTION = 14

    @property
    def display(self) -> str:
        return _EDGE_DISPLAY[self]


_EDGE_DISPLAY = {
    EdgeType.ADJACENT: "Adjacent",
    EdgeType.JUMP: "Jump",
    EdgeType.CALL: "Call",
    EdgeType.RETURN: "Return",
    EdgeType.CREATE: "Create",
    EdgeType.HALT: "Halt",
    EdgeType.CALL_VALUE: "CallValue",
    EdgeType.CALLDATA: "Calldata",
    EdgeType.CALLDATA_SIZE: "CalldataSize",
    EdgeType.CALLER: "Caller",
    EdgeType.ORIGIN: "Origin",
    EdgeType.BLOCK_ENV: "BlockEnv",
    EdgeType.BALANCE: "Balance",
    EdgeType.SELF_ADDRESS: "SelfAddress",
    EdgeType.CONNECTION: "Connection",
}
_EDGE_BY_DISPLAY = {v: k for k, v in _EDGE_DISPLAY.items()}

CONTROL_FLOW_TYPES = frozenset({
    EdgeType.ADJACENT, EdgeType.JUMP, EdgeType.CALL,
    EdgeType.RETURN, EdgeType.CREATE, EdgeType.HALT,
})
DATA_FLOW_TYPES = frozenset({
    EdgeType.CALL_VALUE, EdgeType.CALLDATA, EdgeType.CALLDATA_SIZE,
    EdgeType.CALLER, EdgeType.ORIGIN, EdgeType.BLOCK_ENV,
    EdgeType.BALANCE, EdgeType.SELF_ADDRESS,
})


def edge_type_for_label(label: TaintLabel) -> EdgeType:
    return EdgeType(EdgeType.CALL_VALUE + int(label))


@dataclass(frozen=True)
class GraphNode:
    node_id: int
    opcode: int | None  # None marks the per-transaction terminal sentinel
    mnemonic: str
    tx_index: int
    step_index: int


@dataclass(frozen=True)
class GraphEdge:
    src: int
    dst: int
    etype: EdgeType


@dataclass(frozen=True)
class TxMeta:
    tx_index: int
    selector: int | None = None
    value: int = 0
    caller: int = 0
    outcome: str = "success"


@dataclass
class RawGraph:
    nodes: list[GraphNode]
    edges: list[GraphEdge]
    tx_meta: TxMeta | None = None
    # all sink-side events for this graph's transactions, incoming
    # cross-transaction flows included (used by behavioral pruning)
    events: tuple[DataFlowEvent, ...] = ()
    parts: tuple[TxMeta, ...] = ()

    def opcode_values(self) -> set[int]:
        return {n.opcode for n in self.nodes if n.opcode is not None}

    def sentinel_ids(self) -> list[int]:
        return [n.node_id for n in self.nodes if n.opcode is None]


_COMPARISON_OPS = frozenset({0x10, 0x11, 0x12, 0x13, 0x14})
_SENTINEL_MNEMONIC = "HALT_SENTINEL"


def build_raw_graph(trace: ExecutionTrace, events, tx_meta: TxMeta | None = None) -> RawGraph:
    """One node per executed step; control edges between consecutive steps,
    a halt edge into a terminal sentinel, and one data-flow edge per
    within-transaction event.
    """
    steps = trace.steps
    if not steps:
        raise GraphBuildError("cannot build a graph from an empty trace")

    nodes = [
        GraphNode(i, s.opcode, s.mnemonic, trace.tx_index, s.index)
        for i, s in enumerate(steps)
    ]
    sentinel = GraphNode(len(steps), None, _SENTINEL_MNEMONIC, trace.tx_index, -1)
    nodes.append(sentinel)
    by_step = {s.index: i for i, s in enumerate(steps)}

    edges: list[GraphEdge] = []
    for i in range(len(steps) - 1):
        a, b = steps[i], steps[i + 1]
        if b.depth > a.depth:
            etype = EdgeType.CREATE if a.opcode in CREATE_FAMILY else EdgeType.CALL
        elif b.depth < a.depth:
            etype = EdgeType.RETURN
        elif a.opcode in CALL_FAMILY:
            etype = EdgeType.CALL  # inline call into an empty account
        elif a.opcode in CREATE_FAMILY:
            etype = EdgeType.CREATE
        elif a.opcode == 0x56 or (a.opcode == 0x57 and b.pc != a.pc + 1):
            etype = EdgeType.JUMP
        else:
            etype = EdgeType.ADJACENT
        edges.append(GraphEdge(i, i + 1, etype))
    edges.append(GraphEdge(len(steps) - 1, sentinel.node_id, EdgeType.HALT))

    kept_events = []
    for ev in events:
        if ev.snk_tx != trace.tx_index:
            continue
        kept_events.append(ev)
        if ev.src_tx != trace.tx_index:
            continue  # cross-transaction flows are materialized at join time
        src = by_step.get(ev.src_step)
        dst = by_step.get(ev.snk_step)
        if src is None or dst is None:
            raise GraphBuildError(
                f"event references a step outside the trace: {ev}"
            )
        edges.append(GraphEdge(src, dst, edge_type_for_label(ev.label)))

    return RawGraph(nodes=nodes, edges=edges, tx_meta=tx_meta,
                    events=tuple(kept_events),
                    parts=(tx_meta,) if tx_meta is not None else ())


def is_investment_like(graph: RawGraph) -> bool:
    ops = graph.opcode_values()
    return 0x34 in ops and 0x33 in ops  # CALLVALUE and CALLER both executed


def is_reward_like(graph: RawGraph) -> bool:
    """A comparison consumed taint that passed through an SLOAD."""
    if not graph.events:
        return False
    comparison_steps = {
        n.step_index for n in graph.nodes
        if n.opcode in _COMPARISON_OPS
    }
    return any(ev.via_storage and ev.snk_step in comparison_steps for ev in graph.events)


def prune_behavioral(graphs: list[RawGraph]) -> list[RawGraph]:
    """Keep graphs that store state and look like investment or reward
    behavior; drop the rest (typically failed or irrelevant executions)."""
    kept = []
    for g in graphs:
        if 0x55 not in g.opcode_values():  # no SSTORE: likely a failed run
            continue
        if is_investment_like(g) or is_reward_like(g):
            kept.append(g)
    return kept


@dataclass(frozen=True)
class GraphSignature:
    node_hist: np.ndarray  # 139-d opcode counts
    edge_hist: np.ndarray  # 15-d edge type counts

    def vector(self) -> np.ndarray:
        return np.concatenate([self.node_hist, self.edge_hist])


def signature(graph: RawGraph) -> GraphSignature:
    node_hist = np.zeros(opcodes.VOCABULARY_SIZE, dtype=np.int64)
    for n in graph.nodes:
        if n.opcode is not None:
            node_hist[opcodes.vocabulary_index(n.opcode)] += 1
    edge_hist = np.zeros(EDGE_FEATURE_DIM, dtype=np.int64)
    for e in graph.edges:
        edge_hist[e.etype] += 1
    return GraphSignature(node_hist, edge_hist)


def cosine(u: np.ndarray, v: np.ndarray) -> float:
    nu = float(np.linalg.norm(u))
    nv = float(np.linalg.norm(v))
    if nu == 0.0 and nv == 0.0:
        return 1.0
    if nu == 0.0 or nv == 0.0:
        return 0.0
    return float(np.dot(u, v) / (nu * nv))


DEFAULT_SIMILARITY_THRESHOLD = 0.975


def prune_similar(graphs: list[RawGraph],
                  threshold: float = DEFAULT_SIMILARITY_THRESHOLD) -> list[RawGraph]:
    """Greedy scan in input order; a graph survives only if its signature
    stays below the similarity threshold against every kept graph.

    Counts are sqrt-dampened before the cosine: stack-op counts dominate raw
    histograms so hard that every pair of executions of the same contract
    lands above 0.98; dampening restores a usable similarity scale.
    """
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must be in (0, 1]")
    kept: list[RawGraph] = []
    kept_sigs: list[np.ndarray] = []
    for g in graphs:
        sig = np.sqrt(signature(g).vector().astype(np.float64))
        if all(cosine(sig, other) < threshold for other in kept_sigs):
            kept.append(g)
            kept_sigs.append(sig)
    return kept


def join_graphs(graphs: list[RawGraph], cross_tx_events=()) -> RawGraph:
    """Chain per-transaction subgraphs with connection edges and materialize
    cross-transaction data flows whose endpoints both survived pruning."""
    if not graphs:
        raise GraphBuildError("nothing to join")
    tx_order = [g.tx_meta.tx_index if g.tx_meta else g.nodes[0].tx_index for g in graphs]
    if any(b <= a for a, b in zip(tx_order, tx_order[1:])):
        raise GraphBuildError("graphs must be ordered by transaction index")

    nodes: list[GraphNode] = []
    edges: list[GraphEdge] = []
    locate: dict[tuple[int, int], int] = {}  # (tx, step) -> joined node id
    first_ids: list[int] = []
    sentinel_ids: list[int] = []
    for g in graphs:
        offset = len(nodes)
        first_ids.append(offset)
        for n in g.nodes:
            nid = offset + n.node_id
            nodes.append(GraphNode(nid, n.opcode, n.mnemonic, n.tx_index, n.step_index))
            if n.opcode is None:
                sentinel_ids.append(nid)
            else:
                locate[(n.tx_index, n.step_index)] = nid
        edges.extend(GraphEdge(offset + e.src, offset + e.dst, e.etype) for e in g.edges)

    for sentinel, nxt in zip(sentinel_ids, first_ids[1:]):
        edges.append(GraphEdge(sentinel, nxt, EdgeType.CONNECTION))

    for ev in cross_tx_events:
        if ev.src_tx == ev.snk_tx:
            continue
        src = locate.get((ev.src_tx, ev.src_step))
        dst = locate.get((ev.snk_tx, ev.snk_step))
        if src is not None and dst is not None:
            edges.append(GraphEdge(src, dst, edge_type_for_label(ev.label)))

    return RawGraph(
        nodes=nodes,
        edges=edges,
        tx_meta=None,
        events=tuple(ev for g in graphs for ev in g.events),
        parts=tuple(p for g in graphs for p in g.parts),
    )


# ---------------------------------------------------------------------------
# features

def embed_description(text: str, dim: int = TEXT_EMBED_DIM) -> np.ndarray:
    """Deterministic signed feature hashing of a description into a unit
    vector: tokens hash to one of ``dim`` buckets with a hashed sign."""
    if not text:
        raise ValueError("cannot embed empty text")
    vec = np.zeros(dim, dtype=np.float64)
    for token in re.split(r"[^0-9a-zA-Z]+", text.lower()):
        if not token:
            continue
        digest = hashlib.sha256(b"desc-embed/" + token.encode("utf-8")).digest()
        bucket = int.from_bytes(digest[:4], "big") % dim
        sign = 1.0 if digest[4] & 1 else -1.0
        vec[bucket] += sign
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:  # pathological cancellation; keep the unit-norm contract
        vec[0] = 1.0
        norm = 1.0
    return vec / norm


_EMBED_CACHE: dict[int, np.ndarray] = {}


def _node_feature(opcode: int | None) -> np.ndarray:
    if opcode is None:
        return np.zeros(NODE_FEATURE_DIM, dtype=np.float64)
    cached = _EMBED_CACHE.get(opcode)
    if cached is None:
        info = opcodes.by_value(opcode)
        cached = np.empty(NODE_FEATURE_DIM, dtype=np.float64)
        cached[:TEXT_EMBED_DIM] = embed_description(info.description)
        cached[TEXT_EMBED_DIM] = info.alpha
        cached[TEXT_EMBED_DIM + 1] = info.delta
        _EMBED_CACHE[opcode] = cached
    return cached


@dataclass
class Crbg:
    """Featurized graph ready for classification."""

    node_features: np.ndarray        # (n, 102)
    edge_index: np.ndarray           # (2, m)
    edge_features: np.ndarray        # (m, 15) one-hot rows
    label: int | None = None
    name: str = ""
    mnemonics: list[str] = field(default_factory=list)
    node_tx: list[int] = field(default_factory=list)

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]

    @property
    def num_edges(self) -> int:
        return self.edge_index.shape[1]

    def edge_types(self) -> list[EdgeType]:
        return [EdgeType(int(np.argmax(row))) for row in self.edge_features]

    def equals(self, other: "Crbg") -> bool:
        return (
            np.array_equal(self.node_features, other.node_features)
            and np.array_equal(self.edge_index, other.edge_index)
            and np.array_equal(self.edge_features, other.edge_features)
            and self.label == other.label
            and self.name == other.name
            and self.mnemonics == other.mnemonics
            and self.node_tx == other.node_tx
        )


def featurize(graph: RawGraph, label: int | None = None, name: str = "") -> Crbg:
    """Attach 102-d node features and one-hot 15-d edge features."""
    for n in graph.nodes:
        if n.opcode is not None and opcodes.by_value(n.opcode) is None:
            raise GraphBuildError(f"unknown opcode 0x{n.opcode:02x} in graph")
    n = len(graph.nodes)
    m = len(graph.edges)
    x = np.zeros((n, NODE_FEATURE_DIM), dtype=np.float64)
    for node in graph.nodes:
        x[node.node_id] = _node_feature(node.opcode)
    edge_index = np.zeros((2, m), dtype=np.int64)
    edge_feat = np.zeros((m, EDGE_FEATURE_DIM), dtype=np.float64)
    for k, e in enumerate(graph.edges):
        edge_index[0, k] = e.src
        edge_index[1, k] = e.dst
        edge_feat[k, e.etype] = 1.0
    return Crbg(
        node_features=x,
        edge_index=edge_index,
        edge_features=edge_feat,
        label=label,
        name=name,
        mnemonics=[node.mnemonic for node in graph.nodes],
        node_tx=[node.tx_index for node in graph.nodes],
    )


MODE_DF = "DF"
MODE_CF = "CF"
MODE_DF_CF = "DF+CF"
MODE_NE = "NE"
MODES = (MODE_DF, MODE_CF, MODE_DF_CF, MODE_NE)


def filter_mode(crbg: Crbg, mode: str) -> Crbg:
    """Ablation filter. Connection edges encode transaction ordering, not a
    flow kind, so DF and CF both retain them; NE drops every edge."""
    if mode == MODE_DF_CF:
        return crbg
    if mode == MODE_NE:
        keep = np.zeros(crbg.num_edges, dtype=bool)
    else:
        allowed = DATA_FLOW_TYPES if mode == MODE_DF else CONTROL_FLOW_TYPES
        allowed = {int(t) for t in allowed} | {int(EdgeType.CONNECTION)}
        types = np.argmax(crbg.edge_features, axis=1) if crbg.num_edges else np.zeros(0, dtype=np.int64)
        keep = np.isin(types, sorted(allowed))
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    return Crbg(
        node_features=crbg.node_features,
        edge_index=crbg.edge_index[:, keep],
        edge_features=crbg.edge_features[keep],
        label=crbg.label,
        name=crbg.name,
        mnemonics=crbg.mnemonics,
        node_tx=crbg.node_tx,
    )


# ---------------------------------------------------------------------------
# serialization

def serialize(crbg: Crbg) -> str:
    """Canonical JSON record; re-serialization is byte-identical."""
    types = crbg.edge_types()
    record = {
        "contract": crbg.name,
        "label": crbg.label,
        "nodes": [
            {
                "id": i,
                "opcode": crbg.mnemonics[i],
                "tx": crbg.node_tx[i],
                "feat": [float(v) for v in crbg.node_features[i]],
            }
            for i in range(crbg.num_nodes)
        ],
        "edges": [
            {
                "src": int(crbg.edge_index[0, k]),
                "dst": int(crbg.edge_index[1, k]),
                "type": types[k].display,
                "feat": [float(v) for v in crbg.edge_features[k]],
            }
            for k in range(crbg.num_edges)
        ],
    }
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


def deserialize(text: str) -> Crbg:
    try:
        record = json.loads(text)
        nodes = record["nodes"]
        edges = record["edges"]
        n, m = len(nodes), len(edges)
        x = np.zeros((n, NODE_FEATURE_DIM), dtype=np.float64)
        mnemonics = [""] * n
        node_tx = [0] * n
        for node in nodes:
            i = node["id"]
            x[i] = node["feat"]
            mnemonics[i] = node["opcode"]
            node_tx[i] = node["tx"]
        edge_index = np.zeros((2, m), dtype=np.int64)
        edge_feat = np.zeros((m, EDGE_FEATURE_DIM), dtype=np.float64)
        for k, e in enumerate(edges):
            edge_index[0, k] = e["src"]
            edge_index[1, k] = e["dst"]
            edge_feat[k] = e["feat"]
            if _EDGE_BY_DISPLAY[e["type"]] != EdgeType(int(np.argmax(edge_feat[k]))):
                raise GraphBuildError(f"edge {k}: type/feature mismatch")
        return Crbg(
            node_features=x,
            edge_index=edge_index,
            edge_features=edge_feat,
            label=record["label"],
            name=record["contract"],
            mnemonics=mnemonics,
            node_tx=node_tx,
        )
    except GraphBuildError:
        raise
    except (KeyError, TypeError, ValueError, IndexError, json.JSONDecodeError) as exc:
        raise GraphBuildError(f"malformed graph record: {exc}") from exc
