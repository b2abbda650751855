"""From locked netlist to learning problem: attack graphs, candidate links,
labeled enclosing subgraphs, and train/validation/test datasets.

Nodes are gates (key MUXes never appear; their data inputs define candidate
links instead).  Output-bypass MUXes of routing blocks are resolved to their
gate side when building edges -- full path utilization fixes those selects,
which is exactly the structural weakness the attack exploits.

Node features are 10 wide: one-hot over the eight plain gate functions plus
a touches-PI flag and a drives-PO flag.  Subgraph features append a one-hot
distance-to-both-targets label (capped; overflow and unreachable bucket to
zero, targets always get label 1).
"""

from __future__ import annotations

import json
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import shortest_path

from .locking import LockedDesign, LockMeta, LockingError, Scheme
from .netlist import BASE_FUNCTIONS, GateFunction, Netlist

FEATURE_WIDTH = 10
_FUNC_INDEX = {f: i for i, f in enumerate(BASE_FUNCTIONS)}
DEFAULT_LABEL_CAP = 50


class GraphPrepError(ValueError):
    pass


@dataclass
class AttackGraph:
    node_ids: list[str]
    index: dict[str, int]
    adjacency: sp.csr_matrix
    features: np.ndarray
    neighbors: list[list[int]]

    @property
    def n(self) -> int:
        return len(self.node_ids)

    @property
    def n_edges(self) -> int:
        return self.adjacency.nnz // 2

    def has_edge(self, u: int, v: int) -> bool:
        return v in self.neighbors[u]

    def with_edges(self, pairs: Sequence[tuple[int, int]]) -> "AttackGraph":
        """A new graph with extra undirected edges (features shared)."""
        neigh = [list(ns) for ns in self.neighbors]
        rows = list(self.adjacency.nonzero()[0])
        cols = list(self.adjacency.nonzero()[1])
        for u, v in pairs:
            if v in neigh[u] or u == v:
                continue
            neigh[u].append(v)
            neigh[v].append(u)
            rows += [u, v]
            cols += [v, u]
        adj = sp.csr_matrix(
            (np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(self.n, self.n)
        )
        return AttackGraph(self.node_ids, self.index, adj, self.features, neigh)


@dataclass(frozen=True)
class CandidateLink:
    u: int  # driver node
    v: int  # consumer node
    group: int  # decision group: one per obfuscated gate input
    role: int  # position within the group (0 = l_a, 1 = l_b)
    key_index: int  # key bit the group decides
    key_value: int  # value of that bit if this link is the true one
    swb: int = -1  # switch-box id; -1 for independent MUX key-gates
    slot: int = -1  # 0 = first gate, 1 = second gate of the switch box


@dataclass
class CandidateSet:
    links: list[CandidateLink] = field(default_factory=list)
    structural_bits: dict[int, int] = field(default_factory=dict)
    total_key_bits: int = 0

    def __iter__(self) -> Iterator[CandidateLink]:
        return iter(self.links)

    def __len__(self) -> int:
        return len(self.links)

    def groups(self) -> dict[int, list[CandidateLink]]:
        out: dict[int, list[CandidateLink]] = {}
        for link in self.links:
            out.setdefault(link.group, []).append(link)
        return out

    def pairs(self) -> set[tuple[int, int]]:
        return {(min(l.u, l.v), max(l.u, l.v)) for l in self.links}


def build_attack_graph(
    netlist: Netlist, meta: LockMeta
) -> tuple[AttackGraph, CandidateSet]:
    """Undirected gate graph over observable wires plus the candidate links
    left open by the key gates."""
    mux_ids = meta.mux_node_ids()
    for mid in mux_ids:
        gate = netlist.gates.get(mid)
        if gate is None or gate.function is not GateFunction.MUX2:
            raise GraphPrepError(f"meta/netlist mismatch: '{mid}' is not a MUX in the design")
    node_ids = [g for g, gate in netlist.gates.items() if g not in mux_ids]
    for g in node_ids:
        if netlist.gates[g].function is GateFunction.MUX2:
            raise GraphPrepError(f"meta/netlist mismatch: MUX '{g}' not covered by meta")
    index = {g: i for i, g in enumerate(node_ids)}

    # bypass MUXes resolve to their gate side; routing MUXes stay hidden
    fixed_mux: dict[str, str] = {}
    hidden_mux: set[str] = {m.mux_node for m in meta.mux_entries}
    for s in meta.swb_entries:
        fixed_mux[s.out_muxes[0]] = s.f1
        fixed_mux[s.out_muxes[1]] = s.f2
        hidden_mux.update(s.in_muxes)

    def resolve(sig: str) -> Optional[int]:
        while sig in fixed_mux:
            sig = fixed_mux[sig]
        if sig in index:
            return index[sig]
        return None  # primary input or hidden mux

    n = len(node_ids)
    features = np.zeros((n, FEATURE_WIDTH), dtype=np.float64)
    pi_set = set(netlist.inputs)
    rows: list[int] = []
    cols: list[int] = []
    for g in node_ids:
        gi = index[g]
        gate = netlist.gates[g]
        features[gi, _FUNC_INDEX[gate.function]] = 1.0
        for src in gate.fanin:
            if src in pi_set:
                features[gi, 8] = 1.0
                continue
            if src in hidden_mux:
                continue
            si = resolve(src)
            if si is not None and si != gi:
                rows += [si, gi]
                cols += [gi, si]
    for po in netlist.outputs:
        pi_idx = resolve(po)
        if pi_idx is not None:
            features[pi_idx, 9] = 1.0

    adj = sp.csr_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n))
    adj.data[:] = 1  # collapse duplicate wires
    adj = ((adj + adj.T) > 0).astype(np.int8)
    adj.setdiag(0)
    adj.eliminate_zeros()
    neighbors = [adj.indices[adj.indptr[i] : adj.indptr[i + 1]].tolist() for i in range(n)]
    graph = AttackGraph(node_ids, index, adj, features, neighbors)

    cands = CandidateSet()
    group = 0
    for m in meta.mux_entries:
        v = index[m.consumer]
        for pos, wire in enumerate(m.data_inputs):
            u = resolve(wire)
            if u is None:
                raise GraphPrepError(f"candidate wire '{wire}' is not a gate")
            cands.links.append(
                CandidateLink(u, v, group, pos, m.key_index, pos)
            )
        group += 1
    for si, s in enumerate(meta.swb_entries):
        drivers = []
        for wire in s.stage_inputs:
            u = resolve(wire)
            if u is None:
                raise GraphPrepError(f"candidate wire '{wire}' is not a gate")
            drivers.append(u)
        for slot, f in enumerate((s.f1, s.f2)):
            v = index[f]
            for pos, u in enumerate(drivers):
                # straight routing (bit 0) sends input 0 to the first gate
                # and input 1 to the second
                implied = pos if slot == 0 else 1 - pos
                cands.links.append(
                    CandidateLink(u, v, group, pos, s.perm_key, implied, swb=si, slot=slot)
                )
            group += 1
        cands.structural_bits[s.bypass_keys[0]] = s.bypass_gate_side[0]
        cands.structural_bits[s.bypass_keys[1]] = s.bypass_gate_side[1]
    key_indices = {l.key_index for l in cands.links} | set(cands.structural_bits)
    cands.total_key_bits = (max(key_indices) + 1) if key_indices else 0
    return graph, cands


def candidate_truth(design: LockedDesign, cands: CandidateSet) -> list[bool]:
    """Per-link ground truth, for evaluation and attacker-owned library locks
    only (requires the held-out key)."""
    key = design.correct_key.bits
    return [key[l.key_index] == l.key_value for l in cands.links]


# -- node labeling -------------------------------------------------------------


def drnl_label_from_distances(du: float, dv: float) -> int:
    """Distance hash of a node given its masked distances to both targets."""
    if np.isinf(du) or np.isinf(dv):
        return 0
    d = int(du) + int(dv)
    half, rem = divmod(d, 2)
    return 1 + min(int(du), int(dv)) + half * (half + rem - 1)


def drnl_labels(adj: sp.csr_matrix, cap: int = DEFAULT_LABEL_CAP) -> np.ndarray:
    """Labels for a subgraph whose targets sit at rows 0 and 1.

    Distance to each target is computed with the opposite target removed
    from the graph; nodes unreachable from either target get label 0, as
    does anything past ``cap``.
    """
    n = adj.shape[0]
    labels = np.zeros(n, dtype=np.int64)
    labels[0] = 1
    if n == 1:
        return labels
    labels[1] = 1
    if n == 2:
        return labels
    keep_u = np.r_[0, np.arange(2, n)]
    keep_v = np.arange(1, n)
    du = np.full(n, np.inf)
    dv = np.full(n, np.inf)
    du[keep_u] = shortest_path(
        adj[keep_u][:, keep_u], method="D", directed=False, unweighted=True, indices=0
    )
    dv[keep_v] = shortest_path(
        adj[keep_v][:, keep_v], method="D", directed=False, unweighted=True, indices=0
    )
    rest = np.arange(2, n)
    dru, drv = du[rest], dv[rest]
    with np.errstate(invalid="ignore"):
        d = dru + drv
        half = np.floor(d / 2)
        lab = 1 + np.minimum(dru, drv) + half * (half + np.mod(d, 2) - 1)
    lab[np.isinf(dru) | np.isinf(drv)] = 0
    lab[lab > cap] = 0
    labels[rest] = lab.astype(np.int64)
    return labels


@dataclass
class EnclosingSubgraph:
    nodes: np.ndarray  # global node indices, targets first
    adj: sp.csr_matrix
    features: np.ndarray  # graph features + one-hot labels
    label: Optional[int] = None

    @property
    def n(self) -> int:
        return len(self.nodes)


def subgraph_feature_width(cap: int = DEFAULT_LABEL_CAP) -> int:
    return FEATURE_WIDTH + cap + 1


def extract_enclosing_subgraph(
    graph: AttackGraph,
    s: tuple[int, int],
    h: int,
    cap: int = DEFAULT_LABEL_CAP,
    label: Optional[int] = None,
) -> EnclosingSubgraph:
    """Induced subgraph over every node within ``h`` hops of either target;
    the target link itself is always absent."""
    u, v = s
    if u == v:
        raise GraphPrepError("target nodes must differ")
    reach: set[int] = set()
    for root in (u, v):
        dist = {root: 0}
        dq = deque([root])
        while dq:
            x = dq.popleft()
            if dist[x] == h:
                continue
            for y in graph.neighbors[x]:
                if y not in dist:
                    dist[y] = dist[x] + 1
                    dq.append(y)
        reach.update(dist)
    others = sorted(reach - {u, v})
    nodes = np.array([u, v] + others, dtype=np.int64)
    local = {g: i for i, g in enumerate(nodes)}
    rows, cols = [], []
    for g in nodes:
        gi = local[g]
        for y in graph.neighbors[g]:
            yi = local.get(y)
            if yi is not None and yi > gi:
                rows += [gi, yi]
                cols += [yi, gi]
    adj = sp.csr_matrix(
        (np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(len(nodes), len(nodes))
    )
    if adj[0, 1]:
        adj = adj.tolil()
        adj[0, 1] = 0
        adj[1, 0] = 0
        adj = adj.tocsr()
        adj.eliminate_zeros()
    labels = drnl_labels(adj, cap)
    onehot = np.zeros((len(nodes), cap + 1), dtype=np.float64)
    onehot[np.arange(len(nodes)), labels] = 1.0
    features = np.hstack([graph.features[nodes], onehot])
    return EnclosingSubgraph(nodes=nodes, adj=adj, features=features, label=label)


# -- datasets ------------------------------------------------------------------


@dataclass
class Dataset:
    scenario: str
    h: int
    label_cap: int
    train: list[EnclosingSubgraph] = field(default_factory=list)
    val: list[EnclosingSubgraph] = field(default_factory=list)
    test: list[EnclosingSubgraph] = field(default_factory=list)

    @property
    def feature_width(self) -> int:
        return subgraph_feature_width(self.label_cap)


def sample_negative_links(
    graph: AttackGraph,
    count: int,
    rng: random.Random,
    excluded: set[tuple[int, int]],
) -> list[tuple[int, int]]:
    """Uniform nonexistent links, rejecting edges, candidates, duplicates."""
    out: list[tuple[int, int]] = []
    seen: set[tuple[int, int]] = set(excluded)
    n = graph.n
    limit = count * 200 + 1000
    tries = 0
    while len(out) < count:
        tries += 1
        if tries > limit:
            raise GraphPrepError("could not sample enough nonexistent links")
        u = rng.randrange(n)
        v = rng.randrange(n)
        if u == v:
            continue
        pair = (min(u, v), max(u, v))
        if pair in seen or graph.has_edge(u, v):
            continue
        seen.add(pair)
        out.append(pair)
    return out


def _design_samples(
    graph: AttackGraph,
    cands: CandidateSet,
    rng: random.Random,
    h: int,
    cap: int,
    truth: Optional[list[bool]] = None,
) -> list[EnclosingSubgraph]:
    """Positive (observable edges [+ true obfuscated]) and negative (sampled
    non-edges [+ false obfuscated]) subgraphs for one design."""
    coo = sp.triu(graph.adjacency, k=1).tocoo()
    edges = list(zip(coo.row.tolist(), coo.col.tolist()))
    if not edges:
        raise GraphPrepError("design has no observable edges")
    samples = [
        extract_enclosing_subgraph(graph, e, h, cap, label=1) for e in edges
    ]
    negatives = sample_negative_links(graph, len(edges), rng, cands.pairs())
    samples += [
        extract_enclosing_subgraph(graph, e, h, cap, label=0) for e in negatives
    ]
    if truth is not None:
        for link, is_true in zip(cands.links, truth):
            samples.append(
                extract_enclosing_subgraph(
                    graph, (link.u, link.v), h, cap, label=1 if is_true else 0
                )
            )
    return samples


def build_dataset(
    target: tuple[AttackGraph, CandidateSet],
    scenario: str,
    h: int,
    seed: int,
    library: Optional[list[tuple[AttackGraph, CandidateSet, list[bool]]]] = None,
    val_fraction: float = 0.1,
    label_cap: int = DEFAULT_LABEL_CAP,
) -> Dataset:
    """Assemble training data per scenario.

    ``self``: mine the target's own observable links (1:1 positives to
    sampled non-links).  ``library``: mine other designs locked the same
    way, including their (attacker-known) true/false obfuscated links; the
    target contributes nothing to training.  Either way the test set is the
    target's candidate links.
    """
    rng = random.Random(seed)
    graph, cands = target
    ds = Dataset(scenario=scenario, h=h, label_cap=label_cap)
    if scenario == "self":
        pool = _design_samples(graph, cands, rng, h, label_cap)
    elif scenario == "library":
        if not library:
            raise GraphPrepError("library scenario requires a non-empty library")
        pool = []
        for lib_graph, lib_cands, lib_truth in library:
            pool += _design_samples(lib_graph, lib_cands, rng, h, label_cap, lib_truth)
    else:
        raise GraphPrepError(f"unknown scenario '{scenario}'")

    positives = [s for s in pool if s.label == 1]
    negatives = [s for s in pool if s.label == 0]
    rng.shuffle(positives)
    rng.shuffle(negatives)
    n_val_pos = max(1, int(round(val_fraction * len(positives))))
    n_val_neg = max(1, int(round(val_fraction * len(negatives))))
    ds.val = positives[:n_val_pos] + negatives[:n_val_neg]
    ds.train = positives[n_val_pos:] + negatives[n_val_neg:]
    rng.shuffle(ds.train)
    rng.shuffle(ds.val)
    ds.test = [
        extract_enclosing_subgraph(graph, (l.u, l.v), h, label_cap) for l in cands.links
    ]
    return ds


# -- serialization -------------------------------------------------------------


def write_dataset(ds: Dataset) -> str:
    lines = [
        "#relink-dataset 1",
        "#meta "
        + json.dumps(
            {"scenario": ds.scenario, "h": ds.h, "label_cap": ds.label_cap}
        ),
    ]
    for split in ("train", "val", "test"):
        for g in getattr(ds, split):
            coo = sp.triu(g.adj, k=1).tocoo()
            lines.append(
                f"S {split} {'?' if g.label is None else g.label} {g.n} {coo.nnz}"
            )
            feats = g.features
            for i in range(g.n):
                func = int(np.argmax(feats[i, :8])) if feats[i, :8].any() else -1
                drnl = int(np.argmax(feats[i, FEATURE_WIDTH:]))
                lines.append(
                    f"N {func} {int(feats[i, 8])} {int(feats[i, 9])} {drnl}"
                )
            for u, v in zip(coo.row.tolist(), coo.col.tolist()):
                lines.append(f"E {u} {v}")
    return "\n".join(lines) + "\n"


def read_dataset(text: str) -> Dataset:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#relink-dataset 1"):
        raise GraphPrepError("not a dataset file")
    meta = json.loads(lines[1].split(" ", 1)[1])
    ds = Dataset(scenario=meta["scenario"], h=meta["h"], label_cap=meta["label_cap"])
    cap = ds.label_cap
    i = 2
    while i < len(lines):
        parts = lines[i].split()
        if parts[0] != "S":
            raise GraphPrepError(f"bad dataset line {i + 1}")
        split, lab, n, m = parts[1], parts[2], int(parts[3]), int(parts[4])
        label = None if lab == "?" else int(lab)
        feats = np.zeros((n, subgraph_feature_width(cap)), dtype=np.float64)
        for k in range(n):
            _, func, pi, po, drnl = lines[i + 1 + k].split()
            if int(func) >= 0:
                feats[k, int(func)] = 1.0
            feats[k, 8] = float(pi)
            feats[k, 9] = float(po)
            feats[k, FEATURE_WIDTH + int(drnl)] = 1.0
        rows, cols = [], []
        base = i + 1 + n
        for k in range(m):
            _, u, v = lines[base + k].split()
            rows += [int(u), int(v)]
            cols += [int(v), int(u)]
        adj = sp.csr_matrix(
            (np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n)
        )
        sub = EnclosingSubgraph(
            nodes=np.arange(n, dtype=np.int64), adj=adj, features=feats, label=label
        )
        getattr(ds, split).append(sub)
        i = base + m
    return ds


def write_graph_file(graph: AttackGraph, cands: CandidateSet) -> str:
    lines = [
        "#relink-graph 1",
        "#meta " + json.dumps({"n": graph.n, "total_key_bits": cands.total_key_bits}),
    ]
    for i, gid in enumerate(graph.node_ids):
        f = graph.features[i]
        func = int(np.argmax(f[:8])) if f[:8].any() else -1
        lines.append(f"node {gid} {func} {int(f[8])} {int(f[9])}")
    coo = sp.triu(graph.adjacency, k=1).tocoo()
    for u, v in zip(coo.row.tolist(), coo.col.tolist()):
        lines.append(f"edge {u} {v}")
    for l in cands.links:
        lines.append(
            f"cand {l.u} {l.v} {l.group} {l.role} {l.key_index} {l.key_value} {l.swb} {l.slot}"
        )
    for idx, bit in sorted(cands.structural_bits.items()):
        lines.append(f"skey {idx} {bit}")
    return "\n".join(lines) + "\n"


def read_graph_file(text: str) -> tuple[AttackGraph, CandidateSet]:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#relink-graph 1"):
        raise GraphPrepError("not a graph file")
    meta = json.loads(lines[1].split(" ", 1)[1])
    node_ids: list[str] = []
    feats: list[list[float]] = []
    rows: list[int] = []
    cols: list[int] = []
    cands = CandidateSet(total_key_bits=meta["total_key_bits"])
    group_seen: dict[int, int] = {}
    for line in lines[2:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "node":
            node_ids.append(parts[1])
            row = [0.0] * FEATURE_WIDTH
            if int(parts[2]) >= 0:
                row[int(parts[2])] = 1.0
            row[8], row[9] = float(parts[3]), float(parts[4])
            feats.append(row)
        elif parts[0] == "edge":
            u, v = int(parts[1]), int(parts[2])
            rows += [u, v]
            cols += [v, u]
        elif parts[0] == "cand":
            u, v, group, role, ki, kv, swb, slot = (int(x) for x in parts[1:])
            cands.links.append(CandidateLink(u, v, group, role, ki, kv, swb, slot))
            group_seen[group] = group_seen.get(group, 0) + 1
        elif parts[0] == "skey":
            cands.structural_bits[int(parts[1])] = int(parts[2])
        else:
            raise GraphPrepError(f"bad graph line: {line!r}")
    n = len(node_ids)
    adj = sp.csr_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n))
    neighbors = [adj.indices[adj.indptr[i] : adj.indptr[i + 1]].tolist() for i in range(n)]
    graph = AttackGraph(
        node_ids, {g: i for i, g in enumerate(node_ids)}, adj,
        np.array(feats, dtype=np.float64), neighbors,
    )
    if any(c != 2 for c in group_seen.values()):
        raise GraphPrepError("every candidate group needs exactly two links")
    return graph, cands
