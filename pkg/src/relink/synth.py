"""Seeded netlist generators for experiments and tests.

Three families:

* :func:`random_netlist` -- small arbitrary DAGs for round-trip and property
  tests.
* :func:`toy_lockable_netlist` -- layered, mostly-2-input circuits with few
  primary inputs, deep enough to host a size-8 routing block.
* :func:`tiled_template_netlist` / :func:`benchmark_class_netlist` --
  repetitive designs built from small bit-slice templates (full adders, mux
  slices, comparators...), mimicking the module reuse found in real
  datapath benchmarks.  ``benchmark_class_netlist`` matches the PI/PO/gate
  counts of the classic c3540/c5315/c7552 circuits.
"""

from __future__ import annotations

import random

from .netlist import Gate, GateFunction, Netlist

_TWO_IN = (
    GateFunction.AND,
    GateFunction.NAND,
    GateFunction.OR,
    GateFunction.NOR,
    GateFunction.XOR,
    GateFunction.XNOR,
)


def random_netlist(
    seed: int,
    n_inputs: int | None = None,
    n_gates: int | None = None,
    n_outputs: int | None = None,
) -> Netlist:
    """An arbitrary small acyclic netlist; every signal is reachable."""
    rng = random.Random(seed)
    n_inputs = n_inputs or rng.randint(2, 8)
    n_gates = n_gates or rng.randint(1, 40)
    net = Netlist(name=f"rand{seed}")
    net.inputs = [f"in{i}" for i in range(n_inputs)]
    pool = list(net.inputs)
    for g in range(n_gates):
        r = rng.random()
        if r < 0.15:
            func = rng.choice((GateFunction.NOT, GateFunction.BUF))
            fanin = (rng.choice(pool),)
        elif r < 0.9 or len(pool) < 3:
            func = rng.choice(_TWO_IN)
            fanin = tuple(rng.sample(pool, 2))
        else:
            func = rng.choice((GateFunction.AND, GateFunction.OR, GateFunction.NAND))
            fanin = tuple(rng.sample(pool, 3))
        gid = f"g{g}"
        net.gates[gid] = Gate(func, fanin)
        pool.append(gid)
    n_outputs = n_outputs or rng.randint(1, max(1, min(6, len(net.gates))))
    gate_ids = list(net.gates)
    net.outputs = rng.sample(gate_ids, min(n_outputs, len(gate_ids)))
    return net.validate()


def toy_lockable_netlist(seed: int, n_inputs: int = 10, n_layers: int = 8, width: int = 20) -> Netlist:
    """Layered DAG of mostly 2-input gates, |PI| small enough for exhaustive
    simulation and deep enough to embed 8 disjoint 4-gate timing paths."""
    rng = random.Random(seed)
    net = Netlist(name=f"toy{seed}")
    net.inputs = [f"in{i}" for i in range(n_inputs)]
    prev = list(net.inputs)
    counter = 0
    layers: list[list[str]] = []
    for layer in range(n_layers):
        cur: list[str] = []
        for _ in range(width):
            gid = f"g{counter}"
            counter += 1
            if rng.random() < 0.1 and layer > 0:
                func = GateFunction.NOT
                fanin = (rng.choice(prev),)
            else:
                func = rng.choice(_TWO_IN)
                a = rng.choice(prev)
                # second operand from any earlier layer keeps reconvergence
                b_pool = prev if rng.random() < 0.6 or not layers else rng.choice(layers)
                b = rng.choice(b_pool)
                if b == a:
                    b = rng.choice(prev)
                fanin = (a, b) if a != b else (a, rng.choice(net.inputs))
            net.gates[gid] = Gate(func, fanin)
            cur.append(gid)
        layers.append(cur)
        prev = cur
    net.outputs = rng.sample(layers[-1], min(6, len(layers[-1])))
    return net.validate()


# -- bit-slice templates -----------------------------------------------------

_SLICES = {}


def _slice(name):
    def deco(fn):
        _SLICES[name] = fn
        return fn

    return deco


@_slice("adder")
def _full_adder(emit, a, b, cin):
    """sum/carry out of a ripple full adder; 5 gates."""
    x1 = emit(GateFunction.XOR, a, b)
    s = emit(GateFunction.XOR, x1, cin)
    c1 = emit(GateFunction.AND, a, b)
    c2 = emit(GateFunction.AND, x1, cin)
    cout = emit(GateFunction.OR, c1, c2)
    return s, cout


@_slice("mux")
def _mux_slice(emit, a, b, sel):
    n = emit(GateFunction.NOT, sel)
    t0 = emit(GateFunction.AND, a, n)
    t1 = emit(GateFunction.AND, b, sel)
    y = emit(GateFunction.OR, t0, t1)
    return y, sel


@_slice("compare")
def _compare_slice(emit, a, b, chain):
    e = emit(GateFunction.XNOR, a, b)
    y = emit(GateFunction.AND, e, chain)
    return y, y


@_slice("parity")
def _parity_slice(emit, a, b, chain):
    x = emit(GateFunction.XOR, a, b)
    y = emit(GateFunction.XOR, x, chain)
    return y, y


@_slice("aoi")
def _aoi_slice(emit, a, b, chain):
    t = emit(GateFunction.AND, a, b)
    u = emit(GateFunction.NOR, t, chain)
    v = emit(GateFunction.NAND, u, a)
    return v, u


def _emit_array(net: Netlist, counter: list[int], kind: str, xs, ys, chain0):
    """Instantiate one slice per (x, y) pair with a chained third operand."""
    fn = _SLICES[kind]

    def emit(func, *fanin):
        gid = f"u{counter[0]}"
        counter[0] += 1
        net.gates[gid] = Gate(func, tuple(fanin))
        return gid

    outs = []
    chain = chain0
    for x, y in zip(xs, ys):
        out, chain = fn(emit, x, y, chain)
        outs.append(out)
    return outs, chain


# the 30-gate tile: four rows of 2-input gates with fixed, internally
# non-repeating types and skewed operand offsets.  Every position has a
# distinctive local context, while the same position repeats across tiles,
# which is what makes hidden links learnable without aliasing.
_TILE_ROWS = (
    (("XOR", 1), ("AND", 1), ("OR", 1), ("NAND", 1), ("NOR", 1), ("XNOR", 1), ("XOR", 2), ("NAND", 3)),
    (("NOR", 3), ("XOR", 3), ("NAND", 3), ("OR", 3), ("XNOR", 3), ("AND", 3), ("NOR", 5), ("OR", 5)),
    (("AND", 5), ("XNOR", 5), ("NOR", 5), ("XOR", 5), ("OR", 5), ("NAND", 5), ("XNOR", 7), ("AND", 7)),
    (("OR", 2), ("NAND", 2), ("XOR", 2), ("NOR", 2), ("AND", 2), ("XNOR", 2)),
)


def tiled_template_netlist(n_tiles: int, seed: int = 0) -> Netlist:
    """Chain ``n_tiles`` copies of a fixed 30-gate mixing tile.

    Tile t consumes tile t-1's 8-signal output bus (tile 0 consumes the
    primary inputs); ``seed`` only rotates the bus between tiles.
    """
    net = Netlist(name=f"tiled{n_tiles}s{seed}")
    net.inputs = [f"in{i}" for i in range(8)]
    rng = random.Random(seed)
    counter = [0]
    bus = list(net.inputs)
    for _ in range(n_tiles):
        rows = [list(bus)]
        for row_spec in _TILE_ROWS:
            prev = rows[-1]
            row = []
            for i, (func, off) in enumerate(row_spec):
                gid = f"u{counter[0]}"
                counter[0] += 1
                net.gates[gid] = Gate(
                    GateFunction[func], (prev[i], prev[(i + off) % len(prev)])
                )
                row.append(gid)
            rows.append(row)
        bus = rows[4] + rows[3][6:]  # 6 last-row gates + 2 pass-downs
        rot = rng.randrange(len(bus))
        bus = bus[rot:] + bus[:rot]
    net.outputs = bus[:4]
    return net.validate()


_BENCH_CLASSES = {
    # name: (primary inputs, primary outputs, target gate count)
    "c3540": (50, 22, 1670),
    "c5315": (178, 123, 2310),
    "c7552": (207, 108, 3510),
}


def benchmark_class_netlist(klass: str, seed: int = 0) -> Netlist:
    """A datapath circuit matching the scale of a classic benchmark.

    Built from repeated bit-slice arrays (adders, muxes, comparators) with
    seeded bus routing, so the design has the module repetition real
    netlists show at this size.
    """
    if klass not in _BENCH_CLASSES:
        raise ValueError(f"unknown benchmark class '{klass}'")
    n_pi, n_po, target = _BENCH_CLASSES[klass]
    rng = random.Random(f"{klass}/{seed}")
    net = Netlist(name=f"{klass}x{seed}")
    net.inputs = [f"N{i}" for i in range(n_pi)]
    counter = [0]

    width = 17 if klass == "c3540" else 34
    buses = [net.inputs[i : i + width] for i in range(0, n_pi, width)]
    kinds = list(_SLICES)
    while len(net.gates) < target:
        kind = rng.choice(kinds)
        xs_bus = rng.choice(buses[-6:])
        ys_bus = rng.choice(buses[-6:])
        w = min(len(xs_bus), len(ys_bus), width)
        off_x = rng.randrange(max(1, len(xs_bus) - w + 1))
        off_y = rng.randrange(max(1, len(ys_bus) - w + 1))
        chain = rng.choice(xs_bus)
        outs, _ = _emit_array(
            net,
            counter,
            kind,
            xs_bus[off_x : off_x + w],
            ys_bus[off_y : off_y + w],
            chain,
        )
        buses.append(outs)
    # primary outputs from the most recent buses
    po_pool: list[str] = []
    for b in reversed(buses):
        for sig in b:
            if sig in net.gates:
                po_pool.append(sig)
        if len(po_pool) >= n_po:
            break
    net.outputs = po_pool[:n_po]
    return net.validate()
