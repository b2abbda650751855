import random
from collections import deque

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from relink import synth
from relink.graphprep import (
    CandidateSet,
    Dataset,
    GraphPrepError,
    build_attack_graph,
    build_dataset,
    candidate_truth,
    drnl_label_from_distances,
    drnl_labels,
    extract_enclosing_subgraph,
    read_dataset,
    read_graph_file,
    sample_negative_links,
    write_dataset,
    write_graph_file,
)
from relink.locking import lock_interlock, lock_random_mux
from relink.netlist import parse_bench


# -- independent oracles -------------------------------------------------------


def bfs_distances(neigh, src, banned=None):
    dist = {src: 0}
    dq = deque([src])
    while dq:
        x = dq.popleft()
        for y in neigh[x]:
            if y != banned and y not in dist:
                dist[y] = dist[x] + 1
                dq.append(y)
    return dist


def drnl_oracle(neigh, n, cap):
    """Brute-force node labeling: BFS with the opposite target removed."""
    labels = [0] * n
    labels[0] = labels[1] = 1
    du = bfs_distances(neigh, 0, banned=1)
    dv = bfs_distances(neigh, 1, banned=0)
    for i in range(2, n):
        if i not in du or i not in dv:
            continue
        a, b = du[i], dv[i]
        d = a + b
        lab = 1 + min(a, b) + (d // 2) * ((d // 2) + (d % 2) - 1)
        labels[i] = 0 if lab > cap else lab
    return labels


def random_graph(rng, n, p):
    neigh = [[] for _ in range(n)]
    rows, cols = [], []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.random() < p:
                neigh[i].append(j)
                neigh[j].append(i)
                rows += [i, j]
                cols += [j, i]
    adj = sp.csr_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(n, n))
    return neigh, adj


# -- DRNL ------------------------------------------------------------------


def test_drnl_formula_examples():
    assert drnl_label_from_distances(1, 1) == 2
    assert drnl_label_from_distances(1, 2) == 3
    assert drnl_label_from_distances(np.inf, 1) == 0


def test_drnl_targets_and_isolated():
    # path graph a-u-v-b with targets u,v at indices 0,1 (edge 0-1 absent)
    neigh = {0: [2], 1: [3], 2: [0], 3: [1]}
    rows = [0, 2, 1, 3]
    cols = [2, 0, 3, 1]
    adj = sp.csr_matrix((np.ones(4, dtype=np.int8), (rows, cols)), shape=(4, 4))
    labels = drnl_labels(adj)
    assert labels[0] == labels[1] == 1
    # a is 1 hop from u but unreachable from v once u is masked
    assert labels[2] == 0 and labels[3] == 0


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10_000))
def test_drnl_matches_bruteforce(seed):
    rng = random.Random(seed)
    n = rng.randint(3, 50)
    neigh, adj = random_graph(rng, n, rng.uniform(0.05, 0.3))
    cap = rng.choice([5, 20, 50])
    got = drnl_labels(adj, cap)
    want = drnl_oracle(neigh, n, cap)
    assert got.tolist() == want


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_drnl_permutation_invariant(seed):
    rng = random.Random(seed)
    n = rng.randint(4, 30)
    neigh, adj = random_graph(rng, n, 0.2)
    base = sorted(drnl_labels(adj).tolist())
    perm = [0, 1] + rng.sample(range(2, n), n - 2)
    p = np.zeros((n, n), dtype=np.int8)
    p[np.arange(n), perm] = 1
    padj = sp.csr_matrix(p.T @ adj.toarray() @ p)
    assert sorted(drnl_labels(padj).tolist()) == base


# -- subgraph extraction -----------------------------------------------------


def _toy_graph():
    net = synth.toy_lockable_netlist(7, n_inputs=8)
    locked = lock_random_mux(net, key_size=6, seed=1)
    return build_attack_graph(locked.netlist, locked.meta()), locked


def test_extraction_path_graph():
    text = "INPUT(p)\nOUTPUT(b)\na = NOT(p)\nu = NOT(a)\nv = NOT(u)\nb = NOT(v)\n"
    net = parse_bench(text)
    from relink.locking import LockedDesign, Scheme

    graph, _ = build_attack_graph(net, LockedDesign(net, Scheme.RANDOM_MUX).meta())
    u, v = graph.index["u"], graph.index["v"]
    sub = extract_enclosing_subgraph(graph, (u, v), h=1)
    assert sub.n == 4
    # target edge removed even though u-v is a real wire
    assert sub.adj[0, 1] == 0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 5_000))
def test_extraction_matches_bfs_union_oracle(seed):
    (graph, cands), _ = _toy_graph()
    rng = random.Random(seed)
    u = rng.randrange(graph.n)
    v = rng.randrange(graph.n)
    if u == v:
        v = (v + 1) % graph.n
    h = rng.choice([1, 2, 3])
    sub = extract_enclosing_subgraph(graph, (u, v), h)
    want = set()
    for root in (u, v):
        d = bfs_distances(graph.neighbors, root)
        want |= {x for x, dist in d.items() if dist <= h}
    assert set(sub.nodes.tolist()) == want


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 5_000))
def test_subgraph_monotone_in_h(seed):
    (graph, _), _ = _toy_graph()
    rng = random.Random(seed)
    u, v = rng.sample(range(graph.n), 2)
    n2 = set(extract_enclosing_subgraph(graph, (u, v), 2).nodes.tolist())
    n3 = set(extract_enclosing_subgraph(graph, (u, v), 3).nodes.tolist())
    assert n2 <= n3


def test_extraction_rejects_equal_targets():
    (graph, _), _ = _toy_graph()
    with pytest.raises(GraphPrepError):
        extract_enclosing_subgraph(graph, (3, 3), 2)


# -- attack graph --------------------------------------------------------------


def test_attack_graph_symmetry_and_features():
    (graph, cands), locked = _toy_graph()
    a = graph.adjacency.toarray()
    assert (a == a.T).all()
    assert np.diag(a).sum() == 0
    assert graph.features.shape[1] == 10
    # every node one-hots exactly one function
    assert (graph.features[:, :8].sum(axis=1) == 1).all()


def test_attack_graph_unlocked_has_no_candidates():
    net = synth.toy_lockable_netlist(9)
    from relink.locking import LockedDesign, Scheme

    graph, cands = build_attack_graph(net, LockedDesign(net, Scheme.RANDOM_MUX).meta())
    assert len(cands) == 0
    # symmetrized wire relation: every gate-to-gate fanin pair is an edge
    expect = set()
    for gid, gate in net.gates.items():
        for src in gate.fanin:
            if src in net.gates:
                expect.add((min(graph.index[src], graph.index[gid]), max(graph.index[src], graph.index[gid])))
    coo = sp.triu(graph.adjacency, k=1).tocoo()
    assert set(zip(coo.row.tolist(), coo.col.tolist())) == expect


def test_mux_candidates_grouped_in_pairs():
    (graph, cands), locked = _toy_graph()
    groups = cands.groups()
    assert len(groups) == 6
    truth = candidate_truth(locked, cands)
    by_group = {}
    for link, t in zip(cands.links, truth):
        by_group.setdefault(link.group, []).append((link, t))
    for pair in by_group.values():
        assert len(pair) == 2
        assert pair[0][0].v == pair[1][0].v  # shared consumer
        assert sum(t for _, t in pair) == 1  # exactly one true link


def test_interlock_candidate_arithmetic():
    net = synth.tiled_template_netlist(14, 2)
    locked = lock_interlock(net, 1, 8, seed=5)
    graph, cands = build_attack_graph(locked.netlist, locked.meta())
    # 16 switch boxes x 2 gates x 2 candidates
    assert len(cands) == 64
    assert len(cands.groups()) == 32
    # 2 bypass bits per switch box are structurally fixed
    assert len(cands.structural_bits) == 32
    assert cands.total_key_bits == 48
    truth = candidate_truth(locked, cands)
    assert sum(truth) == 32
    # hidden edge fraction: locked graph misses exactly the 32 path links
    orig_graph, _ = build_attack_graph(
        net, __import__("relink.locking", fromlist=["LockedDesign"]).LockedDesign(
            net, locked.scheme
        ).meta()
    )
    assert orig_graph.n_edges - graph.n_edges == 32


def test_interlock_candidates_are_absent_edges():
    net = synth.tiled_template_netlist(12, 8)
    locked = lock_interlock(net, 1, 8, seed=11)
    graph, cands = build_attack_graph(locked.netlist, locked.meta())
    for link in cands.links:
        assert not graph.has_edge(link.u, link.v)


def test_negative_sampler_rejections():
    (graph, cands), _ = _toy_graph()
    rng = random.Random(0)
    negs = sample_negative_links(graph, 50, rng, cands.pairs())
    assert len(negs) == len(set(negs)) == 50
    for u, v in negs:
        assert not graph.has_edge(u, v)
        assert (u, v) not in cands.pairs()


def test_build_dataset_self_counts():
    (graph, cands), _ = _toy_graph()
    ds = build_dataset((graph, cands), "self", h=2, seed=0)
    n_edges = graph.n_edges
    assert len(ds.train) + len(ds.val) == 2 * n_edges
    labels = [s.label for s in ds.train + ds.val]
    assert labels.count(1) == labels.count(0) == n_edges
    assert len(ds.test) == len(cands)
    # training positives never contain their own target link
    for s in ds.train[:40]:
        assert s.adj[0, 1] == 0


def test_build_dataset_library_counts():
    lib_designs = []
    for seed in (1, 2, 3):
        net = synth.tiled_template_netlist(12, seed)
        locked = lock_interlock(net, 1, 8, seed=seed)
        g, c = build_attack_graph(locked.netlist, locked.meta())
        lib_designs.append((g, c, candidate_truth(locked, c)))
    tnet = synth.tiled_template_netlist(12, 9)
    tlocked = lock_interlock(tnet, 1, 8, seed=9)
    tg, tc = build_attack_graph(tlocked.netlist, tlocked.meta())
    ds = build_dataset((tg, tc), "library", h=2, seed=0, library=lib_designs)
    total = len(ds.train) + len(ds.val)
    lib_edges = sum(g.n_edges for g, _, _ in lib_designs)
    # per design: E positives + E negatives, plus 32 true + 32 false links
    assert total == 2 * lib_edges + 3 * 64
    labels = [s.label for s in ds.train + ds.val]
    assert labels.count(1) == lib_edges + 96
    assert labels.count(0) == lib_edges + 96


def test_build_dataset_library_requires_library():
    (graph, cands), _ = _toy_graph()
    with pytest.raises(GraphPrepError):
        build_dataset((graph, cands), "library", h=2, seed=0, library=[])


def test_dataset_roundtrip():
    (graph, cands), _ = _toy_graph()
    ds = build_dataset((graph, cands), "self", h=2, seed=3)
    again = read_dataset(write_dataset(ds))
    assert len(again.train) == len(ds.train)
    assert len(again.test) == len(ds.test)
    for a, b in zip(ds.train[:20], again.train[:20]):
        assert a.label == b.label
        assert np.array_equal(a.features, b.features)
        assert (a.adj != b.adj).nnz == 0


def test_graph_file_roundtrip():
    (graph, cands), _ = _toy_graph()
    g2, c2 = read_graph_file(write_graph_file(graph, cands))
    assert g2.node_ids == graph.node_ids
    assert (g2.adjacency != graph.adjacency).nnz == 0
    assert np.array_equal(g2.features, graph.features)
    assert c2.links == cands.links
    assert c2.structural_bits == cands.structural_bits
    assert c2.total_key_bits == cands.total_key_bits
