import numpy as np
import pytest

from ponzigraph.crbg import (
    Crbg,
    EDGE_FEATURE_DIM,
    EdgeType,
    GraphBuildError,
    GraphEdge,
    GraphNode,
    NODE_FEATURE_DIM,
    RawGraph,
    TxMeta,
    build_raw_graph,
    cosine,
    deserialize,
    edge_type_for_label,
    embed_description,
    featurize,
    filter_mode,
    is_reward_like,
    join_graphs,
    prune_behavioral,
    prune_similar,
    serialize,
    signature,
)
from ponzigraph.evm import World, TxEnv, assemble, execute_transaction, opcode_vocabulary
from ponzigraph.taint import DataFlowEvent, TaintEngine, TaintLabel

CALLER = 0xA11CE
CONTRACT = 0xC0DE


def run_graph(src, value=0, calldata=b"", world=None, tx_index=0, engine=None):
    world = world if world is not None else World()
    engine = engine if engine is not None else TaintEngine()
    tx = TxEnv(caller=CALLER, origin=CALLER, value=value, calldata=calldata,
               timestamp=1000, block_hash=0xB10C, self_address=CONTRACT,
               self_balance=world.balance(CONTRACT) + value)
    trace, _ = execute_transaction(world, tx, assemble(src), tracker=engine, tx_index=tx_index)
    events = [e for e in engine.events if e.snk_tx == tx_index]
    meta = TxMeta(tx_index=tx_index, selector=None, value=value, caller=CALLER,
                  outcome=trace.outcome)
    return build_raw_graph(trace, events, meta), trace, engine


def edge_types(graph):
    return [e.etype for e in graph.edges]


# --- build_raw_graph ---------------------------------------------------------

def test_straight_line_graph_shape():
    g, trace, _ = run_graph("PUSH1 1 \n PUSH1 2 \n ADD \n STOP")
    assert len(g.nodes) == 5  # 4 ops + sentinel
    assert g.nodes[-1].opcode is None
    kinds = edge_types(g)
    assert kinds.count(EdgeType.ADJACENT) == 3
    assert kinds.count(EdgeType.HALT) == 1
    assert len(kinds) == 4


def test_taken_jumpi_gets_jump_edge_not_adjacent():
    src = "PUSH1 1 \n PUSH1 lbl \n JUMPI \n STOP \n lbl: JUMPDEST \n STOP"
    g, trace, _ = run_graph(src)
    jumpi_id = next(n.node_id for n in g.nodes if n.mnemonic == "JUMPI")
    out = [e for e in g.edges if e.src == jumpi_id]
    assert len(out) == 1
    assert out[0].etype == EdgeType.JUMP


def test_untaken_jumpi_gets_adjacent_edge():
    src = "PUSH1 0 \n PUSH1 lbl \n JUMPI \n STOP \n lbl: JUMPDEST \n STOP"
    g, _, _ = run_graph(src)
    jumpi_id = next(n.node_id for n in g.nodes if n.mnemonic == "JUMPI")
    out = [e for e in g.edges if e.src == jumpi_id]
    assert out[0].etype == EdgeType.ADJACENT


def test_data_flow_edge_from_taint_event():
    g, trace, _ = run_graph("CALLVALUE \n PUSH1 100 \n LT \n STOP", value=7)
    df = [e for e in g.edges if e.etype == EdgeType.CALL_VALUE]
    assert len(df) == 1
    assert g.nodes[df[0].src].mnemonic == "CALLVALUE"
    assert g.nodes[df[0].dst].mnemonic == "LT"


def test_call_and_return_edges_span_frames():
    from ponzigraph.evm import Account
    world = World()
    world.accounts[0xCA11EE] = Account(code=assemble("PUSH1 1 \n PUSH1 0 \n SSTORE \n STOP").code)
    world.account(CONTRACT).balance = 10
    src = """
    PUSH1 0x00
    PUSH1 0x00
    PUSH1 0x00
    PUSH1 0x00
    PUSH1 0x00
    PUSH3 0xCA11EE
    PUSH2 0xffff
    CALL
    STOP
    """
    g, trace, _ = run_graph(src, world=world)
    kinds = edge_types(g)
    assert EdgeType.CALL in kinds
    assert EdgeType.RETURN in kinds


def test_event_outside_trace_rejected():
    src = "PUSH1 1 \n STOP"
    world = World()
    tx = TxEnv(caller=CALLER, origin=CALLER, value=0, calldata=b"", timestamp=0,
               block_hash=0, self_address=CONTRACT, self_balance=0)
    trace, _ = execute_transaction(world, tx, assemble(src))
    bogus = DataFlowEvent(TaintLabel.CALLER, 0, 99, 0, 100)
    with pytest.raises(GraphBuildError, match="outside the trace"):
        build_raw_graph(trace, [bogus])


def test_empty_trace_rejected():
    from ponzigraph.evm.interp import ExecutionTrace
    with pytest.raises(GraphBuildError):
        build_raw_graph(ExecutionTrace(tx_index=0, steps=[]), [])


def test_every_step_has_one_outgoing_control_edge():
    src = "PUSH1 1 \n PUSH1 lbl \n JUMPI \n STOP \n lbl: JUMPDEST \n PUSH1 2 \n POP \n STOP"
    g, trace, _ = run_graph(src)
    control = [e for e in g.edges if e.etype in
               (EdgeType.ADJACENT, EdgeType.JUMP, EdgeType.CALL,
                EdgeType.RETURN, EdgeType.CREATE, EdgeType.HALT)]
    assert len(control) == len(trace.steps)  # n-1 successions + 1 halt
    assert sorted(e.src for e in control) == list(range(len(trace.steps)))


# --- pruning -----------------------------------------------------------------

def _mini_graph(mnemonics, with_events=(), tx=0):
    from ponzigraph.evm import by_mnemonic
    nodes = [GraphNode(i, by_mnemonic(m).value, m, tx, i) for i, m in enumerate(mnemonics)]
    nodes.append(GraphNode(len(mnemonics), None, "HALT_SENTINEL", tx, -1))
    edges = [GraphEdge(i, i + 1, EdgeType.ADJACENT) for i in range(len(mnemonics) - 1)]
    edges.append(GraphEdge(len(mnemonics) - 1, len(mnemonics), EdgeType.HALT))
    return RawGraph(nodes=nodes, edges=edges, tx_meta=TxMeta(tx_index=tx),
                    events=tuple(with_events), parts=(TxMeta(tx_index=tx),))


def test_prune_drops_graph_without_sstore():
    g = _mini_graph(["CALLVALUE", "CALLER", "STOP"])
    assert prune_behavioral([g]) == []


def test_prune_keeps_investment_like():
    g = _mini_graph(["CALLVALUE", "CALLER", "SSTORE", "STOP"])
    assert prune_behavioral([g]) == [g]


def test_prune_keeps_reward_like():
    ev = DataFlowEvent(TaintLabel.CALL_VALUE, 0, 0, 0, 1, via_storage=True)
    g = _mini_graph(["SLOAD", "GT", "SSTORE", "STOP"], with_events=[ev])
    assert is_reward_like(g)
    assert prune_behavioral([g]) == [g]


def test_prune_requires_via_storage_for_reward():
    ev = DataFlowEvent(TaintLabel.CALL_VALUE, 0, 0, 0, 1, via_storage=False)
    g = _mini_graph(["CALLVALUE", "GT", "SSTORE", "STOP"], with_events=[ev])
    assert not is_reward_like(g)
    assert prune_behavioral([g]) == []


def test_prune_behavioral_empty_input():
    assert prune_behavioral([]) == []


def test_prune_behavioral_preserves_order_and_subsequence():
    keep1 = _mini_graph(["CALLVALUE", "CALLER", "SSTORE", "STOP"], tx=0)
    drop = _mini_graph(["ADD", "STOP"], tx=1)
    keep2 = _mini_graph(["CALLVALUE", "CALLER", "SSTORE", "STOP"], tx=2)
    out = prune_behavioral([keep1, drop, keep2])
    assert out == [keep1, keep2]


def test_prune_similar_identical_graphs_collapse():
    g1 = _mini_graph(["CALLVALUE", "SSTORE", "STOP"], tx=0)
    g2 = _mini_graph(["CALLVALUE", "SSTORE", "STOP"], tx=1)
    assert prune_similar([g1, g2], threshold=0.95) == [g1]


def test_prune_similar_distinct_graphs_survive():
    g1 = _mini_graph(["CALLVALUE", "SSTORE", "STOP"], tx=0)
    g2 = _mini_graph(["TIMESTAMP", "MLOAD", "JUMPDEST"], tx=1)
    out = prune_similar([g1, g2], threshold=0.95)
    assert out == [g1, g2]


def test_prune_similar_ten_copies_plus_one():
    from ponzigraph.evm import by_mnemonic

    a = [_mini_graph(["CALLVALUE", "SSTORE", "STOP"], tx=i) for i in range(10)]
    # jump-heavy loop graph: disjoint opcodes AND a disjoint edge-type mix
    mnems = ["JUMPDEST", "TIMESTAMP", "MLOAD"] * 4
    nodes = [GraphNode(i, by_mnemonic(m).value, m, 10, i) for i, m in enumerate(mnems)]
    nodes.append(GraphNode(len(mnems), None, "HALT_SENTINEL", 10, -1))
    edges = [GraphEdge(i, i + 1, EdgeType.JUMP) for i in range(len(mnems))]
    b = RawGraph(nodes=nodes, edges=edges, tx_meta=TxMeta(tx_index=10))
    sig_a = signature(a[0]).vector().astype(float)
    sig_b = signature(b).vector().astype(float)
    assert cosine(sig_a, sig_b) < 0.35  # structurally disjoint fixtures
    out = prune_similar(a + [b], threshold=0.95)
    assert out == [a[0], b]


def test_prune_similar_threshold_validation():
    with pytest.raises(ValueError):
        prune_similar([], threshold=0.0)


# --- joining -----------------------------------------------------------------

def test_join_adds_k_minus_1_connection_edges():
    graphs = [_mini_graph(["CALLVALUE", "SSTORE", "STOP"], tx=i) for i in range(4)]
    joined = join_graphs(graphs)
    conn = [e for e in joined.edges if e.etype == EdgeType.CONNECTION]
    assert len(conn) == 3


def test_join_single_graph_rebased_only():
    g = _mini_graph(["CALLVALUE", "SSTORE", "STOP"], tx=0)
    joined = join_graphs([g])
    assert len(joined.nodes) == len(g.nodes)
    assert [e.etype for e in joined.edges] == [e.etype for e in g.edges]


def test_join_rejects_unordered_input():
    g0 = _mini_graph(["CALLVALUE", "STOP"], tx=1)
    g1 = _mini_graph(["CALLVALUE", "STOP"], tx=0)
    with pytest.raises(GraphBuildError, match="ordered"):
        join_graphs([g0, g1])


def test_join_materializes_cross_tx_flow():
    g0 = _mini_graph(["CALLVALUE", "SSTORE", "STOP"], tx=0)
    g1 = _mini_graph(["SLOAD", "GT", "SSTORE", "STOP"], tx=1)
    ev = DataFlowEvent(TaintLabel.CALL_VALUE, src_tx=0, src_step=0,
                       snk_tx=1, snk_step=0, via_storage=False)
    joined = join_graphs([g0, g1], [ev])
    cross = [e for e in joined.edges if e.etype == EdgeType.CALL_VALUE]
    assert len(cross) == 1
    assert joined.nodes[cross[0].src].tx_index == 0
    assert joined.nodes[cross[0].dst].mnemonic == "SLOAD"


def test_join_drops_flows_into_pruned_transactions():
    g0 = _mini_graph(["CALLVALUE", "SSTORE", "STOP"], tx=0)
    g1 = _mini_graph(["SLOAD", "STOP", "SSTORE"], tx=2)
    ev = DataFlowEvent(TaintLabel.CALL_VALUE, src_tx=1, src_step=0, snk_tx=2, snk_step=0)
    joined = join_graphs([g0, g1], [ev])
    assert not [e for e in joined.edges if e.etype == EdgeType.CALL_VALUE]


def test_join_output_weakly_connected():
    graphs = [_mini_graph(["CALLVALUE", "SSTORE", "STOP"], tx=i) for i in range(3)]
    joined = join_graphs(graphs)
    n = len(joined.nodes)
    adj = {i: set() for i in range(n)}
    for e in joined.edges:
        adj[e.src].add(e.dst)
        adj[e.dst].add(e.src)
    seen, work = set(), [0]
    while work:
        cur = work.pop()
        if cur in seen:
            continue
        seen.add(cur)
        work.extend(adj[cur] - seen)
    assert seen == set(range(n))


# --- embedding ---------------------------------------------------------------

def test_embedding_unit_norm():
    for text in ("conditionally alter the program counter", "x", "halts execution."):
        assert np.linalg.norm(embed_description(text)) == pytest.approx(1.0)


def test_embedding_deterministic():
    a = embed_description("conditionally alter the program counter")
    b = embed_description("conditionally alter the program counter")
    assert np.array_equal(a, b)


def test_embedding_distinguishes_descriptions():
    vocab = {o.mnemonic: o for o in opcode_vocabulary()}
    jumpi = embed_description(vocab["JUMPI"].description)
    add = embed_description(vocab["ADD"].description)
    assert float(jumpi @ add) < float(jumpi @ jumpi) == pytest.approx(1.0)


def test_embedding_rejects_empty():
    with pytest.raises(ValueError):
        embed_description("")


# --- featurize ---------------------------------------------------------------

def test_featurize_dimensions_and_arity_positions():
    g = _mini_graph(["JUMPI", "SSTORE", "STOP"])
    crbg = featurize(g, label=1, name="t")
    assert crbg.node_features.shape == (4, NODE_FEATURE_DIM)
    assert crbg.edge_features.shape == (3, EDGE_FEATURE_DIM)
    jumpi_row = crbg.node_features[0]
    assert (jumpi_row[100], jumpi_row[101]) == (0.0, 2.0)  # alpha, delta


def test_featurize_sentinel_all_zero():
    g = _mini_graph(["STOP"])
    crbg = featurize(g)
    assert not crbg.node_features[-1].any()


def test_edge_features_one_hot():
    g = _mini_graph(["CALLVALUE", "SSTORE", "STOP"])
    crbg = featurize(g)
    assert np.array_equal(crbg.edge_features.sum(axis=1), np.ones(crbg.num_edges))
    assert set(np.unique(crbg.edge_features)) <= {0.0, 1.0}


def test_featurize_unknown_opcode_rejected():
    g = _mini_graph(["STOP"])
    bad = RawGraph(nodes=[GraphNode(0, 0x21, "???", 0, 0)], edges=[], tx_meta=None)
    with pytest.raises(GraphBuildError, match="unknown opcode"):
        featurize(bad)


# --- mode filtering ----------------------------------------------------------

def _typed_graph():
    g0 = _mini_graph(["CALLVALUE", "SSTORE", "STOP"], tx=0)
    g1 = _mini_graph(["SLOAD", "GT", "SSTORE", "STOP"], tx=1)
    ev = DataFlowEvent(TaintLabel.CALL_VALUE, 0, 0, 1, 1, via_storage=True)
    return featurize(join_graphs([g0, g1], [ev]), label=1)


def test_mode_filtering_partitions_edges():
    crbg = _typed_graph()
    all_types = crbg.edge_types()
    df = filter_mode(crbg, "DF").edge_types()
    cf = filter_mode(crbg, "CF").edge_types()
    ne = filter_mode(crbg, "NE").edge_types()
    assert ne == []
    assert EdgeType.CALL_VALUE in df and EdgeType.CALL_VALUE not in cf
    assert EdgeType.ADJACENT in cf and EdgeType.ADJACENT not in df
    # connection edges survive both filtered modes
    assert EdgeType.CONNECTION in df and EdgeType.CONNECTION in cf
    assert sorted(df + cf, key=int) == sorted(all_types + [EdgeType.CONNECTION], key=int)


def test_mode_filter_rejects_unknown_mode():
    with pytest.raises(ValueError):
        filter_mode(_typed_graph(), "XX")


# --- serialization -----------------------------------------------------------

def test_serialize_roundtrip_equality():
    crbg = _typed_graph()
    text = serialize(crbg)
    back = deserialize(text)
    assert back.equals(crbg)


def test_reserialize_byte_identical():
    crbg = _typed_graph()
    once = serialize(crbg)
    assert serialize(deserialize(once)) == once


def test_deserialize_truncated_record_errors():
    text = serialize(_typed_graph())
    with pytest.raises(GraphBuildError, match="malformed"):
        deserialize(text[: len(text) // 2])


def test_deserialize_garbage_errors():
    with pytest.raises(GraphBuildError):
        deserialize("{\"nodes\": 7}")
