import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from relink import synth
from relink.netlist import (
    BenchFormatError,
    CombinationalCycleError,
    GateFunction,
    Netlist,
    Gate,
    all_pattern_columns,
    check_acyclic,
    parse_bench,
    simulate,
    simulate_packed,
    write_bench,
)


def naive_eval(net, assignment):
    """Independent reference simulator: per-pattern recursive evaluation."""
    memo = dict(assignment)

    def val(sig):
        if sig in memo:
            return memo[sig]
        func, fanin = net.gates[sig]
        args = [val(s) for s in fanin]
        if func is GateFunction.AND:
            r = int(all(args))
        elif func is GateFunction.NAND:
            r = int(not all(args))
        elif func is GateFunction.OR:
            r = int(any(args))
        elif func is GateFunction.NOR:
            r = int(not any(args))
        elif func is GateFunction.XOR:
            r = sum(args) % 2
        elif func is GateFunction.XNOR:
            r = 1 - sum(args) % 2
        elif func is GateFunction.NOT:
            r = 1 - args[0]
        elif func is GateFunction.BUF:
            r = args[0]
        elif func is GateFunction.MUX2:
            r = args[2] if args[0] else args[1]
        memo[sig] = r
        return r

    return tuple(val(o) for o in net.outputs)


def test_parse_minimal():
    net = parse_bench("INPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = AND(a,b)")
    assert net.inputs == ["a", "b"]
    assert net.outputs == ["y"]
    assert net.gates["y"] == Gate(GateFunction.AND, ("a", "b"))


def test_parse_arity_mismatch():
    with pytest.raises(BenchFormatError):
        parse_bench("INPUT(a)\nOUTPUT(y)\ny = AND(a)")


def test_parse_errors_carry_line_numbers():
    try:
        parse_bench("INPUT(a)\nbogus line here\n")
    except BenchFormatError as exc:
        assert exc.line == 2
    else:
        pytest.fail("expected BenchFormatError")


def test_parse_undeclared_signal():
    with pytest.raises(BenchFormatError):
        parse_bench("INPUT(a)\nOUTPUT(y)\ny = AND(a,ghost)")


def test_parse_duplicate_definition():
    with pytest.raises(BenchFormatError):
        parse_bench("INPUT(a)\nOUTPUT(y)\ny = NOT(a)\ny = BUF(a)")


def test_parse_case_insensitive_and_comments():
    net = parse_bench("# hi\nINPUT(a)\nOUTPUT(y)  # trailing\ny = nand(a,a)")
    assert net.gates["y"].function is GateFunction.NAND


def test_write_one_and_netlist_line_count():
    net = parse_bench("INPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = AND(a,b)")
    text = write_bench(net)
    non_comment = [l for l in text.splitlines() if l.strip() and not l.startswith("#")]
    assert len(non_comment) == 4


def test_write_mux_extension():
    net = Netlist(inputs=["s", "a", "b"], outputs=["y"])
    net.gates["y"] = Gate(GateFunction.MUX2, ("s", "a", "b"))
    net.validate()
    assert "y = MUX(s,a,b)" in write_bench(net)
    again = parse_bench(write_bench(net))
    assert again.gates["y"].function is GateFunction.MUX2


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_roundtrip_random_netlists(seed):
    net = synth.random_netlist(seed)
    again = parse_bench(write_bench(net), name=net.name)
    assert again.inputs == net.inputs
    assert again.outputs == net.outputs
    assert again.gates == net.gates


def test_simulate_and_gate():
    net = parse_bench("INPUT(a)\nINPUT(b)\nOUTPUT(y)\ny = AND(a,b)")
    assert simulate(net, (0, 1)) == (0,)
    assert simulate(net, (1, 1)) == (1,)


def test_simulate_xor_chain_parity():
    net = parse_bench(
        "INPUT(a)\nINPUT(b)\nINPUT(c)\nOUTPUT(y)\nx = XOR(a,b)\ny = XOR(x,c)"
    )
    assert simulate(net, (1, 1, 1)) == (1,)
    assert simulate(net, (1, 1, 0)) == (0,)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 2**32 - 1))
def test_packed_simulation_matches_naive_oracle(seed, pat_seed):
    import random

    net = synth.random_netlist(seed)
    rng = random.Random(pat_seed)
    n_pat = 8
    cols = {pi: rng.getrandbits(n_pat) for pi in net.inputs}
    packed = simulate_packed(net, cols, n_pat)
    for p in range(n_pat):
        assignment = {pi: (cols[pi] >> p) & 1 for pi in net.inputs}
        expect = naive_eval(net, assignment)
        got = tuple((packed[o] >> p) & 1 for o in net.outputs)
        assert got == expect


def test_simulation_deterministic():
    net = synth.toy_lockable_netlist(3)
    vec = tuple(i % 2 for i in range(len(net.data_inputs)))
    assert simulate(net, vec) == simulate(net, vec)


def test_all_pattern_columns_enumerates_every_vector():
    pis = ["a", "b", "c"]
    cols, total = all_pattern_columns(pis)
    assert total == 8
    seen = set()
    for p in range(total):
        seen.add(tuple((cols[pi] >> p) & 1 for pi in pis))
    assert len(seen) == 8


def test_check_acyclic_clean_netlist():
    net = synth.toy_lockable_netlist(5)
    ok, witness = check_acyclic(net)
    assert ok and witness is None


def test_check_acyclic_mutual_mux_cycle():
    net = Netlist(inputs=["s", "a"], outputs=["m1"])
    net.gates["m1"] = Gate(GateFunction.MUX2, ("s", "a", "m2"))
    net.gates["m2"] = Gate(GateFunction.MUX2, ("s", "a", "m1"))
    net.validate()
    ok, witness = check_acyclic(net)
    assert not ok
    assert set(witness) >= {"m1", "m2"}


def test_key_substitution_breaks_false_cycle():
    # m1 and m2 form a cycle through their in1 ports; with both keys at 0
    # each mux reads only `a`, so the keyed circuit is acyclic
    text = (
        "INPUT(a)\nINPUT(keyinput0)\nINPUT(keyinput1)\nOUTPUT(m1)\n"
        "m1 = MUX(keyinput0,a,m2)\n"
        "m2 = MUX(keyinput1,a,m1)\n"
    )
    net = parse_bench(text)
    assert simulate(net, (1,), key={0: 0, 1: 0}) == (1,)
    with pytest.raises(CombinationalCycleError):
        simulate(net, (1,), key={0: 1, 1: 1})


def test_unresolved_key_bit_is_an_error():
    text = "INPUT(a)\nINPUT(keyinput0)\nOUTPUT(y)\ny = MUX(keyinput0,a,a)\n"
    net = parse_bench(text)
    with pytest.raises(Exception):
        simulate(net, (1,), key={0: None})


def test_benchmark_class_scales():
    net = synth.benchmark_class_netlist("c3540")
    assert len(net.inputs) == 50 and len(net.outputs) == 22
    assert 1500 <= len(net.gates) <= 1900
    assert check_acyclic(net)[0]
