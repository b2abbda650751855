"""Gate-level netlists in BENCH format: parsing, writing, simulation.

The BENCH dialect accepted here is the classic ISCAS/ITC one (INPUT/OUTPUT
declarations, one gate assignment per line, ``#`` comments) plus a 3-ary
``MUX(sel, in0, in1)`` extension so locked designs stay in a single file
format.  Gate names are case-insensitive on input and upper-case on output.

Key inputs follow the ``keyinput<i>`` naming convention used by locked
benchmark distributions; :func:`simulate` substitutes key bits as constants
before checking for combinational cycles, because a cycle through the
unselected branch of a MUX vanishes once the select is a constant.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence


class GateFunction(Enum):
    AND = "AND"
    BUF = "BUF"
    NAND = "NAND"
    NOR = "NOR"
    NOT = "NOT"
    OR = "OR"
    XNOR = "XNOR"
    XOR = "XOR"
    MUX2 = "MUX"

    @property
    def min_arity(self) -> int:
        if self in (GateFunction.NOT, GateFunction.BUF):
            return 1
        if self is GateFunction.MUX2:
            return 3
        return 2

    @property
    def max_arity(self) -> Optional[int]:
        if self in (GateFunction.NOT, GateFunction.BUF):
            return 1
        if self is GateFunction.MUX2:
            return 3
        return None


#: the eight plain Boolean functions, alphabetical; MUX2 never appears in
#: attack-graph features (key-gates are removed from the graph).
BASE_FUNCTIONS = (
    GateFunction.AND,
    GateFunction.BUF,
    GateFunction.NAND,
    GateFunction.NOR,
    GateFunction.NOT,
    GateFunction.OR,
    GateFunction.XNOR,
    GateFunction.XOR,
)

_KEY_INPUT_RE = re.compile(r"^keyinput(\d+)$", re.IGNORECASE)


class NetlistError(ValueError):
    pass


class BenchFormatError(NetlistError):
    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class CombinationalCycleError(NetlistError):
    def __init__(self, cycle: Sequence[str]):
        self.cycle = list(cycle)
        super().__init__("combinational cycle: " + " -> ".join(self.cycle))


class SimulationError(NetlistError):
    pass


class Gate(NamedTuple):
    function: GateFunction
    fanin: tuple[str, ...]


@dataclass
class Netlist:
    """A combinational gate-level circuit.

    ``gates`` preserves declaration order; treat instances as immutable after
    construction (locking transforms build new netlists instead of mutating).
    """

    name: str = "top"
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    gates: dict[str, Gate] = field(default_factory=dict)

    # -- structure ---------------------------------------------------------

    def validate(self) -> "Netlist":
        declared = set(self.inputs)
        if len(declared) != len(self.inputs):
            raise NetlistError(f"{self.name}: duplicate primary input")
        for gid, gate in self.gates.items():
            if gid in declared:
                raise NetlistError(f"{self.name}: '{gid}' defined as both input and gate")
            lo, hi = gate.function.min_arity, gate.function.max_arity
            if len(gate.fanin) < lo or (hi is not None and len(gate.fanin) > hi):
                raise NetlistError(
                    f"{self.name}: {gate.function.value} gate '{gid}' has "
                    f"{len(gate.fanin)} inputs"
                )
        known = declared | set(self.gates)
        for gid, gate in self.gates.items():
            for src in gate.fanin:
                if src not in known:
                    raise NetlistError(f"{self.name}: '{gid}' reads undeclared signal '{src}'")
        for out in self.outputs:
            if out not in known:
                raise NetlistError(f"{self.name}: output '{out}' is never driven")
        return self

    def copy(self) -> "Netlist":
        return Netlist(self.name, list(self.inputs), list(self.outputs), dict(self.gates))

    @property
    def data_inputs(self) -> list[str]:
        """Primary inputs excluding key inputs."""
        return [i for i in self.inputs if not _KEY_INPUT_RE.match(i)]

    @property
    def key_inputs(self) -> dict[int, str]:
        """Map key index -> key-input signal name."""
        out = {}
        for i in self.inputs:
            m = _KEY_INPUT_RE.match(i)
            if m:
                out[int(m.group(1))] = i
        return out

    def fanout_map(self) -> dict[str, list[tuple[str, int]]]:
        """signal -> list of (consumer gate id, fanin position)."""
        fo: dict[str, list[tuple[str, int]]] = {}
        for gid, gate in self.gates.items():
            for pos, src in enumerate(gate.fanin):
                fo.setdefault(src, []).append((gid, pos))
        return fo

    def topological_order(self) -> list[str]:
        order, cycle = _toposort(self.gates, {gid: gate.fanin for gid, gate in self.gates.items()})
        if cycle is not None:
            raise CombinationalCycleError(cycle)
        return order


def check_acyclic(netlist: Netlist) -> tuple[bool, Optional[list[str]]]:
    """True iff the raw gate graph (all MUX data inputs included) is acyclic.

    Returns a witness cycle (as a node list) otherwise.
    """
    _, cycle = _toposort(netlist.gates, {g: gate.fanin for g, gate in netlist.gates.items()})
    return (cycle is None), cycle


def _toposort(
    gates: Mapping[str, Gate], deps: Mapping[str, Iterable[str]]
) -> tuple[list[str], Optional[list[str]]]:
    """Kahn's algorithm over gate-to-gate dependencies; on failure returns a
    witness cycle found by walking unresolved nodes."""
    indeg = {g: 0 for g in gates}
    consumers: dict[str, list[str]] = {g: [] for g in gates}
    for gid in gates:
        for src in deps[gid]:
            if src in gates:
                indeg[gid] += 1
                consumers[src].append(gid)
    ready = [g for g, d in indeg.items() if d == 0]
    order: list[str] = []
    while ready:
        nxt: list[str] = []
        for g in ready:
            order.append(g)
            for c in consumers[g]:
                indeg[c] -= 1
                if indeg[c] == 0:
                    nxt.append(c)
        ready = nxt
    if len(order) == len(gates):
        return order, None
    # walk the residual subgraph until a node repeats
    stuck = {g for g, d in indeg.items() if d > 0}
    start = next(iter(stuck))
    seen: dict[str, int] = {}
    path: list[str] = []
    node = start
    while node not in seen:
        seen[node] = len(path)
        path.append(node)
        node = next(s for s in deps[node] if s in stuck)
    return order, path[seen[node] :] + [node]


# -- parsing / writing ------------------------------------------------------

_INPUT_RE = re.compile(r"^INPUT\s*\(\s*([^\s()]+)\s*\)$", re.IGNORECASE)
_OUTPUT_RE = re.compile(r"^OUTPUT\s*\(\s*([^\s()]+)\s*\)$", re.IGNORECASE)
_GATE_RE = re.compile(r"^([^\s=()]+)\s*=\s*([A-Za-z0-9_]+)\s*\(\s*([^()]*?)\s*\)$")

_NAME_TO_FUNCTION = {f.value: f for f in GateFunction}
_NAME_TO_FUNCTION["BUFF"] = GateFunction.BUF  # ITC-99 files spell it both ways
_NAME_TO_FUNCTION["MUX2"] = GateFunction.MUX2


def parse_bench(text: str, name: str = "top") -> Netlist:
    """Parse BENCH text into a validated :class:`Netlist`.

    Declaration order of inputs, outputs, and gates is preserved.  Raises
    :class:`BenchFormatError` with a line number on malformed input.
    """
    net = Netlist(name=name)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        m = _INPUT_RE.match(line)
        if m:
            sig = m.group(1)
            if sig in net.inputs:
                raise BenchFormatError(f"duplicate INPUT({sig})", lineno)
            net.inputs.append(sig)
            continue
        m = _OUTPUT_RE.match(line)
        if m:
            net.outputs.append(m.group(1))
            continue
        m = _GATE_RE.match(line)
        if m:
            gid, fname, args = m.group(1), m.group(2).upper(), m.group(3)
            func = _NAME_TO_FUNCTION.get(fname)
            if func is None:
                raise BenchFormatError(f"unknown gate function '{m.group(2)}'", lineno)
            fanin = tuple(a.strip() for a in args.split(",")) if args.strip() else ()
            if any(not a for a in fanin):
                raise BenchFormatError("empty operand in gate argument list", lineno)
            lo, hi = func.min_arity, func.max_arity
            if len(fanin) < lo or (hi is not None and len(fanin) > hi):
                raise BenchFormatError(
                    f"{fname} expects {'exactly ' + str(lo) if hi == lo else 'at least ' + str(lo)}"
                    f" inputs, got {len(fanin)}",
                    lineno,
                )
            if gid in net.gates or gid in net.inputs:
                raise BenchFormatError(f"duplicate definition of '{gid}'", lineno)
            net.gates[gid] = Gate(func, fanin)
            continue
        raise BenchFormatError(f"unrecognized line: {raw.strip()!r}", lineno)
    try:
        return net.validate()
    except NetlistError as exc:
        raise BenchFormatError(str(exc)) from exc


def write_bench(netlist: Netlist) -> str:
    """Serialize to BENCH text; re-parsing yields an isomorphic netlist."""
    lines = [f"# {netlist.name}"]
    lines += [f"INPUT({i})" for i in netlist.inputs]
    lines += [f"OUTPUT({o})" for o in netlist.outputs]
    for gid, gate in netlist.gates.items():
        lines.append(f"{gid} = {gate.function.value}({','.join(gate.fanin)})")
    return "\n".join(lines) + "\n"


# -- simulation --------------------------------------------------------------

KeyBits = Mapping[int, Optional[int]]


def simulate(
    netlist: Netlist,
    input_bits: Sequence[int],
    key: Optional[KeyBits] = None,
) -> tuple[int, ...]:
    """Evaluate one input vector (aligned to :attr:`Netlist.data_inputs`).

    ``key`` maps key index -> 0/1 (None marks an unresolved bit and is an
    error if that key input is actually consumed).  Deterministic.
    """
    cols = {pi: bit for pi, bit in zip(netlist.data_inputs, input_bits)}
    out = simulate_packed(netlist, cols, 1, key)
    return tuple(out[o] & 1 for o in netlist.outputs)


def simulate_packed(
    netlist: Netlist,
    input_columns: Mapping[str, int],
    n_patterns: int,
    key: Optional[KeyBits] = None,
) -> dict[str, int]:
    """Bit-parallel simulation: each signal is an ``n_patterns``-wide integer
    column (pattern p lives in bit p).  Returns columns for every signal.

    Keys are substituted as constants first, each MUX with a constant select
    collapses to its chosen data input, and only then is the effective
    circuit checked for cycles and evaluated in topological order.
    """
    if len(input_columns) != len(netlist.data_inputs):
        raise SimulationError(
            f"expected {len(netlist.data_inputs)} input columns, got {len(input_columns)}"
        )
    mask = (1 << n_patterns) - 1
    values: dict[str, int] = {}
    for pi in netlist.data_inputs:
        values[pi] = input_columns[pi] & mask

    key = key or {}
    key_consts: dict[str, int] = {}
    for idx, sig in netlist.key_inputs.items():
        bit = key.get(idx)
        if bit is not None:
            key_consts[sig] = mask if bit else 0

    # effective dependencies: a MUX whose select is a key constant depends
    # only on the selected data input
    chosen: dict[str, str] = {}
    deps: dict[str, tuple[str, ...]] = {}
    for gid, gate in netlist.gates.items():
        if gate.function is GateFunction.MUX2 and gate.fanin[0] in key_consts:
            sel = key_consts[gate.fanin[0]]
            src = gate.fanin[2] if sel else gate.fanin[1]
            chosen[gid] = src
            deps[gid] = (src,)
        else:
            deps[gid] = gate.fanin
    order, cycle = _toposort(netlist.gates, deps)
    if cycle is not None:
        raise CombinationalCycleError(cycle)

    def fetch(sig: str) -> int:
        if sig in values:
            return values[sig]
        if sig in key_consts:
            return key_consts[sig]
        if sig in netlist.key_inputs.values():
            raise SimulationError(f"unresolved key bit feeds '{sig}'")
        raise SimulationError(f"signal '{sig}' has no value")

    for gid in order:
        if gid in chosen:
            values[gid] = fetch(chosen[gid])
            continue
        gate = netlist.gates[gid]
        args = [fetch(s) for s in gate.fanin]
        values[gid] = _eval_gate(gate.function, args, mask)
    # expose key constants so callers can read any output signal
    values.update(key_consts)
    return values


def _eval_gate(func: GateFunction, args: list[int], mask: int) -> int:
    if func is GateFunction.AND or func is GateFunction.NAND:
        v = mask
        for a in args:
            v &= a
        return v if func is GateFunction.AND else v ^ mask
    if func is GateFunction.OR or func is GateFunction.NOR:
        v = 0
        for a in args:
            v |= a
        return v if func is GateFunction.OR else v ^ mask
    if func is GateFunction.XOR or func is GateFunction.XNOR:
        v = 0
        for a in args:
            v ^= a
        return v if func is GateFunction.XOR else v ^ mask
    if func is GateFunction.NOT:
        return args[0] ^ mask
    if func is GateFunction.BUF:
        return args[0]
    if func is GateFunction.MUX2:
        sel, in0, in1 = args
        return ((sel ^ mask) & in0) | (sel & in1)
    raise AssertionError(func)


def outputs_packed(
    netlist: Netlist,
    input_columns: Mapping[str, int],
    n_patterns: int,
    key: Optional[KeyBits] = None,
) -> list[int]:
    values = simulate_packed(netlist, input_columns, n_patterns, key)
    return [values[o] for o in netlist.outputs]


def all_pattern_columns(pis: Sequence[str]) -> tuple[dict[str, int], int]:
    """Columns enumerating all 2^len(pis) patterns (pattern p = binary p)."""
    n = len(pis)
    total = 1 << n
    cols = {}
    for bit, pi in enumerate(pis):
        # bit `bit` of pattern p is (p >> bit) & 1: blocks of 2^bit zeros
        # then 2^bit ones, repeated
        period = 1 << bit
        block = ((1 << period) - 1) << period
        col = 0
        for start in range(0, total, period * 2):
            col |= block << start
        cols[pi] = col & ((1 << total) - 1)
    return cols, total


def random_pattern_columns(
    pis: Sequence[str], n_patterns: int, rng
) -> dict[str, int]:
    """Independent uniform random columns for each primary input."""
    return {pi: rng.getrandbits(n_patterns) for pi in pis}
