import pytest

from relink import synth
from relink.locking import (
    KeyAssignment,
    LockMeta,
    LockingError,
    PathSelectionError,
    Scheme,
    lock_interlock,
    lock_random_mux,
    select_timing_paths,
)
from relink.netlist import GateFunction, parse_bench


def check_paths(netlist, paths, length):
    """Independent validity check over returned paths (prepended entry)."""
    seen = set()
    entries = set()
    for p in paths:
        entry, gates = p[0], p[1:]
        assert len(gates) == length
        assert entry in netlist.gates, "entry wire must be gate-driven"
        assert entry not in entries
        entries.add(entry)
        assert entry in netlist.gates[gates[0]].fanin
        for g in gates:
            assert g not in seen, "paths must be vertex-disjoint"
            seen.add(g)
            assert len(netlist.gates[g].fanin) == 2
            assert netlist.gates[g].function is not GateFunction.MUX2
        for a, b in zip(gates, gates[1:]):
            assert a in netlist.gates[b].fanin


def test_select_timing_paths_disjoint():
    net = synth.toy_lockable_netlist(11)
    paths = select_timing_paths(net, 8, 4, seed=0)
    check_paths(net, paths, 4)


def test_select_single_trivial_path():
    net = synth.toy_lockable_netlist(2)
    paths = select_timing_paths(net, 1, 1, seed=5)
    check_paths(net, paths, 1)


def test_select_paths_infeasible_on_shallow_circuit():
    net = parse_bench(
        "INPUT(a)\nINPUT(b)\nOUTPUT(y)\nx = AND(a,b)\ny = OR(x,a)"
    )
    with pytest.raises(PathSelectionError) as err:
        select_timing_paths(net, 1, 4, seed=1)
    assert err.value.best_count == 0


def test_random_mux_counts_and_equivalence(equiv):
    net = synth.toy_lockable_netlist(21, n_inputs=8)
    locked = lock_random_mux(net, key_size=16, seed=3)
    assert len(locked.mux_gates) == 16
    assert locked.correct_key.size == 16
    assert equiv(net, locked.netlist, locked.correct_key.bits)


def test_random_mux_zero_key_is_identity():
    net = synth.toy_lockable_netlist(4)
    locked = lock_random_mux(net, key_size=0, seed=0)
    assert locked.netlist.gates == net.gates
    assert locked.correct_key.size == 0


def test_random_mux_rejects_oversized_key():
    net = parse_bench("INPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = AND(a,b)")
    with pytest.raises(LockingError):
        lock_random_mux(net, key_size=5, seed=0)


def test_random_mux_bit_balance():
    # over >=1000 key gates the correct bits must carry no structural signal
    net = synth.benchmark_class_netlist("c3540")
    locked = lock_random_mux(net, key_size=1200, seed=7)
    ones = sum(m.correct_bit for m in locked.mux_gates)
    assert 0.45 <= ones / 1200 <= 0.55


def test_random_mux_true_wire_is_original_driver():
    net = synth.toy_lockable_netlist(31)
    locked = lock_random_mux(net, key_size=12, seed=9)
    for m in locked.mux_gates:
        assert m.true_wire != m.false_wire
        assert net.gates[m.consumer].fanin[m.port] == m.true_wire
        in0, in1 = m.data_inputs
        assert (in1 if m.correct_bit else in0) == m.true_wire
        mux_gate = locked.netlist.gates[m.mux_node]
        assert mux_gate.function is GateFunction.MUX2
        assert mux_gate.fanin[1:] == (in0, in1)


def test_keyrb_key_count_formula():
    net = synth.tiled_template_netlist(14, 1)
    locked = lock_interlock(net, n_keyrbs=1, size_n=8, seed=2)
    rb = locked.keyrbs[0]
    assert rb.n_stages == 4
    assert len(rb.swbs) == 4 and all(len(row) == 4 for row in rb.swbs)
    assert rb.key_bits == 48
    assert locked.correct_key.size == 48
    # 2 hidden true links per switch box
    assert sum(2 for row in rb.swbs for _ in row) == 32


@pytest.mark.parametrize(
    "n_keyrbs,size_n,expect",
    [(1, 8, 48), (1, 16, 144), (3, 16, 432), (2, 8, 96)],
)
def test_keyrb_key_totals(n_keyrbs, size_n, expect):
    net = synth.benchmark_class_netlist("c3540", seed=n_keyrbs)
    locked = lock_interlock(net, n_keyrbs=n_keyrbs, size_n=size_n, seed=4)
    assert locked.correct_key.size == expect
    assert sum(rb.key_bits for rb in locked.keyrbs) == expect


def test_interlock_equivalence_exhaustive(equiv):
    net = synth.toy_lockable_netlist(41, n_inputs=8)
    locked = lock_interlock(net, n_keyrbs=1, size_n=8, seed=6)
    assert equiv(net, locked.netlist, locked.correct_key.bits)


def test_interlock_rejects_bad_size():
    net = synth.toy_lockable_netlist(1)
    with pytest.raises(LockingError):
        lock_interlock(net, 1, 12, seed=0)
    with pytest.raises(LockingError):
        lock_interlock(net, 1, 2, seed=0)


def test_interlock_embeds_selected_paths():
    net = synth.tiled_template_netlist(12, 5)
    locked = lock_interlock(net, 1, 8, seed=8)
    rb = locked.keyrbs[0]
    hidden = {g for p in rb.embedded_paths for g in p}
    for row in rb.swbs:
        for swb in row:
            # the two gates come from the embedded paths and keep their type
            assert swb.f1_name in hidden and swb.f2_name in hidden
            g = locked.netlist.gates[swb.f1]
            assert g.function == net.gates[swb.f1_name].function
            # routed port reads the input-select mux
            assert swb.in_muxes[0] in g.fanin
            # bypass mux exposes the original name
            bp = locked.netlist.gates[swb.f1_name]
            assert bp.function is GateFunction.MUX2
            assert swb.f1 in bp.fanin


def test_key_assignment_text_roundtrip():
    key = KeyAssignment({0: 1, 1: 0, 2: None})
    again = KeyAssignment.from_text(key.to_text())
    assert again.bits == key.bits
    assert "k2=X" in key.to_text()


def test_meta_json_roundtrip_mux():
    net = synth.toy_lockable_netlist(51)
    locked = lock_random_mux(net, key_size=6, seed=1)
    meta = locked.meta()
    again = LockMeta.from_json(meta.to_json())
    assert again.scheme is Scheme.RANDOM_MUX
    assert [m.__dict__ for m in again.mux_entries] == [m.__dict__ for m in meta.mux_entries]


def test_meta_json_roundtrip_interlock():
    net = synth.tiled_template_netlist(12, 9)
    locked = lock_interlock(net, 1, 8, seed=3)
    meta = locked.meta()
    again = LockMeta.from_json(meta.to_json())
    assert [s.__dict__ for s in again.swb_entries] == [s.__dict__ for s in meta.swb_entries]
    assert len(again.swb_entries) == 16
    # meta must never leak key values
    assert "correct" not in meta.to_json()


def test_locking_is_seed_deterministic():
    net = synth.toy_lockable_netlist(61)
    a = lock_random_mux(net, 10, seed=42)
    b = lock_random_mux(net, 10, seed=42)
    assert a.netlist.gates == b.netlist.gates
    assert a.correct_key.bits == b.correct_key.bits
