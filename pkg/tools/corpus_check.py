#!/usr/bin/env python3
"""Development harness: run every corpus contract through the pipeline and
report execution health, pruning outcomes and graph shape."""

from __future__ import annotations

import sys
from collections import Counter

from ponzigraph.crbg import is_investment_like, is_reward_like
from ponzigraph.pipeline import PipelineConfig, discover_corpus, run_corpus_entry


def main(names: list[str]) -> int:
    bad = 0
    for entry in discover_corpus():
        if names and entry.name not in names:
            continue
        try:
            run = run_corpus_entry(entry, PipelineConfig())
        except Exception as exc:  # noqa: BLE001 - dev harness
            print(f"{entry.name:18s} FAIL: {type(exc).__name__}: {exc}")
            bad += 1
            continue
        outcomes = Counter(r.meta.outcome for r in run.records)
        errors = Counter(r.trace.error_kind for r in run.records if r.trace.error_kind)
        inv = sum(is_investment_like(g) for g in run.raw_graphs)
        rew = sum(is_reward_like(g) for g in run.raw_graphs)
        cross = sum(1 for e in run.events if e.cross_tx)
        flags = []
        if run.pruning_fallback:
            flags.append("FALLBACK")
        if outcomes.get("error"):
            flags.append(f"ERRORS:{dict(errors)}")
        label = "ponzi " if entry.label else "benign"
        print(
            f"{entry.name:18s} {label} txs={len(run.records):3d} ok={outcomes.get('success', 0):3d} "
            f"rev={outcomes.get('revert', 0):2d} err={outcomes.get('error', 0):2d} "
            f"inv={inv:2d} rew={rew:2d} kept={len(run.retained):2d} "
            f"nodes={len(run.joined.nodes):4d} edges={len(run.joined.edges):4d} cross={cross:3d} "
            f"{' '.join(flags)}"
        )
    return 1 if bad else 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
