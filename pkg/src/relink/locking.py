"""MUX-based locking transforms: random key-gate insertion and
key-controlled routing blocks with embedded timing paths.

Both schemes keep the locked design in plain BENCH (key inputs are
``keyinput<i>`` primary inputs, key gates are 3-ary MUX extensions).  A
locked gate keeps its original output name: the gate itself is renamed to
``<name>__q`` and a MUX taking over ``<name>`` drives the old consumers, so
every reference elsewhere in the file stays valid.

Routing blocks of size N have ``2*log2(N) - 2`` stages of ``N/2`` switch
boxes.  Each switch box holds two 2-input gates lifted from consecutive
positions of two embedded timing paths and carries three key bits: one
shared select that routes the two stage inputs to the two gates either
straight or crossed, and one bypass select per output.  At full path
utilization the bypass selects must pass the gate side, which is why an
attacker can fix them structurally; only the routing select is secret.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

from .netlist import (
    BASE_FUNCTIONS,
    Gate,
    GateFunction,
    Netlist,
    NetlistError,
    check_acyclic,
)


class Scheme(str, Enum):
    RANDOM_MUX = "mux"
    INTERLOCK = "interlock"


class LockingError(NetlistError):
    pass


class PathSelectionError(LockingError):
    def __init__(self, message: str, best_count: int):
        self.best_count = best_count
        super().__init__(f"{message} (best partial: {best_count} paths)")


@dataclass
class KeyAssignment:
    """Key bits by index; ``None`` marks an unresolved bit."""

    bits: dict[int, Optional[int]] = field(default_factory=dict)

    def __post_init__(self):
        idx = sorted(self.bits)
        if idx and idx != list(range(len(idx))):
            raise LockingError("key indices must be contiguous from 0")

    @property
    def size(self) -> int:
        return len(self.bits)

    @property
    def resolved(self) -> int:
        return sum(1 for b in self.bits.values() if b is not None)

    def to_text(self) -> str:
        def fmt(b):
            return "X" if b is None else str(b)

        return "".join(f"k{i}={fmt(self.bits[i])}\n" for i in sorted(self.bits))

    @classmethod
    def from_text(cls, text: str) -> "KeyAssignment":
        bits: dict[int, Optional[int]] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line or not line.startswith("k"):
                raise LockingError(f"key file line {lineno}: expected k<i>=<0|1|X>")
            lhs, rhs = line.split("=", 1)
            idx = int(lhs[1:])
            rhs = rhs.strip().upper()
            bits[idx] = None if rhs == "X" else int(rhs)
            if bits[idx] not in (None, 0, 1):
                raise LockingError(f"key file line {lineno}: bad bit {rhs!r}")
        return cls(bits)


@dataclass
class MuxKeyGate:
    mux_node: str
    key_index: int
    true_wire: str
    false_wire: str
    correct_bit: int
    consumer: str
    port: int

    @property
    def data_inputs(self) -> tuple[str, str]:
        """MUX data inputs in port order (in0, in1)."""
        return (self.false_wire, self.true_wire) if self.correct_bit else (self.true_wire, self.false_wire)


@dataclass
class SwB:
    stage: int
    position: int
    f1: str  # renamed gate nodes (<orig>__q)
    f2: str
    f1_name: str  # original output names == bypass mux nodes
    f2_name: str
    stage_inputs: tuple[str, str]  # presented (I_i, I_j) signal names
    ex_inputs: tuple[str, str]
    in_muxes: tuple[str, str]
    out_muxes: tuple[str, str]
    perm_key: int
    bypass_keys: tuple[int, int]
    bypass_gate_side: tuple[int, int]  # MUX data port carrying the gate
    correct_perm: int  # 0: f1 takes stage_inputs[0]; 1: crossed
    correct_bypass: tuple[int, int]

    @property
    def key_inputs(self) -> tuple[int, int, int]:
        return (self.perm_key, self.bypass_keys[0], self.bypass_keys[1])

    @property
    def muxes(self) -> tuple[str, str, str, str]:
        return self.in_muxes + self.out_muxes


@dataclass
class KeyRB:
    size_n: int
    swbs: list[list[SwB]]  # [stage][position]
    embedded_paths: list[list[str]]  # original gate names, entry to exit
    entry_wires: list[str]

    @property
    def n_stages(self) -> int:
        return 2 * int(math.log2(self.size_n)) - 2

    @property
    def key_bits(self) -> int:
        return 3 * self.n_stages * (self.size_n // 2)


@dataclass
class LockedDesign:
    netlist: Netlist
    scheme: Scheme
    mux_gates: list[MuxKeyGate] = field(default_factory=list)
    keyrbs: list[KeyRB] = field(default_factory=list)
    correct_key: KeyAssignment = field(default_factory=KeyAssignment)

    def meta(self) -> "LockMeta":
        """The public, key-free view an attacker reconstructs by tracing
        key inputs (MUX/SwB groupings, candidate wires, bypass structure)."""
        return LockMeta(
            scheme=self.scheme,
            mux_entries=[
                MuxMetaEntry(
                    mux_node=m.mux_node,
                    key_index=m.key_index,
                    consumer=m.consumer,
                    port=m.port,
                    data_inputs=m.data_inputs,
                )
                for m in self.mux_gates
            ],
            swb_entries=[
                SwbMetaEntry(
                    keyrb=ri,
                    stage=s.stage,
                    position=s.position,
                    f1=s.f1,
                    f2=s.f2,
                    f1_name=s.f1_name,
                    f2_name=s.f2_name,
                    stage_inputs=s.stage_inputs,
                    ex_inputs=s.ex_inputs,
                    in_muxes=s.in_muxes,
                    out_muxes=s.out_muxes,
                    perm_key=s.perm_key,
                    bypass_keys=s.bypass_keys,
                    bypass_gate_side=s.bypass_gate_side,
                )
                for ri, rb in enumerate(self.keyrbs)
                for row in rb.swbs
                for s in row
            ],
        )


@dataclass
class MuxMetaEntry:
    mux_node: str
    key_index: int
    consumer: str
    port: int
    data_inputs: tuple[str, str]


@dataclass
class SwbMetaEntry:
    keyrb: int
    stage: int
    position: int
    f1: str
    f2: str
    f1_name: str
    f2_name: str
    stage_inputs: tuple[str, str]
    ex_inputs: tuple[str, str]
    in_muxes: tuple[str, str]
    out_muxes: tuple[str, str]
    perm_key: int
    bypass_keys: tuple[int, int]
    bypass_gate_side: tuple[int, int]


@dataclass
class LockMeta:
    """Key-gate groupings without any correct-key information."""

    scheme: Scheme
    mux_entries: list[MuxMetaEntry] = field(default_factory=list)
    swb_entries: list[SwbMetaEntry] = field(default_factory=list)

    def mux_node_ids(self) -> set[str]:
        ids = {m.mux_node for m in self.mux_entries}
        for s in self.swb_entries:
            ids.update(s.in_muxes)
            ids.update(s.out_muxes)
        return ids

    def to_json(self) -> str:
        def entry(obj):
            d = dict(obj.__dict__)
            for k, v in d.items():
                if isinstance(v, tuple):
                    d[k] = list(v)
            return d

        return json.dumps(
            {
                "version": 1,
                "scheme": self.scheme.value,
                "mux_gates": [entry(m) for m in self.mux_entries],
                "swbs": [entry(s) for s in self.swb_entries],
            },
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "LockMeta":
        doc = json.loads(text)
        if doc.get("version") != 1:
            raise LockingError("unsupported meta version")
        meta = cls(scheme=Scheme(doc["scheme"]))
        for m in doc.get("mux_gates", []):
            meta.mux_entries.append(
                MuxMetaEntry(
                    mux_node=m["mux_node"],
                    key_index=m["key_index"],
                    consumer=m["consumer"],
                    port=m["port"],
                    data_inputs=tuple(m["data_inputs"]),
                )
            )
        for s in doc.get("swbs", []):
            meta.swb_entries.append(
                SwbMetaEntry(
                    keyrb=s["keyrb"],
                    stage=s["stage"],
                    position=s["position"],
                    f1=s["f1"],
                    f2=s["f2"],
                    f1_name=s["f1_name"],
                    f2_name=s["f2_name"],
                    stage_inputs=tuple(s["stage_inputs"]),
                    ex_inputs=tuple(s["ex_inputs"]),
                    in_muxes=tuple(s["in_muxes"]),
                    out_muxes=tuple(s["out_muxes"]),
                    perm_key=s["perm_key"],
                    bypass_keys=tuple(s["bypass_keys"]),
                    bypass_gate_side=tuple(s["bypass_gate_side"]),
                )
            )
        return meta


def _key_wire(index: int) -> str:
    return f"keyinput{index}"


# -- random MUX insertion -----------------------------------------------------


def lock_random_mux(netlist: Netlist, key_size: int, seed: int) -> LockedDesign:
    """Insert ``key_size`` MUX key-gates at random gate-to-gate wires.

    True wire = the cut point's original driver; false wires are sampled
    uniformly from other gate outputs (transitive fanout included, so the
    locked design may contain cycles).  The correct bit of every gate is
    uniform, carrying no structural signal.
    """
    rng = random.Random(seed)
    locked = netlist.copy()
    locked.name = f"{netlist.name}_mux{key_size}"

    cut_points = [
        (src, gid, port)
        for gid, gate in netlist.gates.items()
        for port, src in enumerate(gate.fanin)
        if src in netlist.gates
    ]
    if key_size > len(cut_points):
        raise LockingError(
            f"key size {key_size} exceeds {len(cut_points)} lockable wires"
        )
    gate_ids = list(netlist.gates)
    if key_size > 0 and len(gate_ids) < 2:
        raise LockingError("no distinct false wire exists")

    chosen = rng.sample(cut_points, key_size)
    mux_gates: list[MuxKeyGate] = []
    key_bits: dict[int, Optional[int]] = {}
    for idx, (true_wire, consumer, port) in enumerate(chosen):
        # exclude the consumer itself (a 2-cycle is not a usable decoy) but
        # keep transitive fanout, so longer false cycles stay possible
        if len(gate_ids) < 3:
            raise LockingError("no distinct false wire exists")
        false_wire = true_wire
        while false_wire in (true_wire, consumer):
            false_wire = rng.choice(gate_ids)
        bit = rng.randrange(2)
        mux = MuxKeyGate(
            mux_node=f"keymux{idx}",
            key_index=idx,
            true_wire=true_wire,
            false_wire=false_wire,
            correct_bit=bit,
            consumer=consumer,
            port=port,
        )
        mux_gates.append(mux)
        key_bits[idx] = bit

    for m in mux_gates:
        locked.inputs.append(_key_wire(m.key_index))
        in0, in1 = m.data_inputs
        locked.gates[m.mux_node] = Gate(GateFunction.MUX2, (_key_wire(m.key_index), in0, in1))
        gate = locked.gates[m.consumer]
        fanin = list(gate.fanin)
        fanin[m.port] = m.mux_node
        locked.gates[m.consumer] = Gate(gate.function, tuple(fanin))

    locked.validate()
    return LockedDesign(
        netlist=locked,
        scheme=Scheme.RANDOM_MUX,
        mux_gates=mux_gates,
        correct_key=KeyAssignment(key_bits),
    )


# -- timing-path selection ----------------------------------------------------

_RETRY_BUDGET = 10_000


def select_timing_paths(
    netlist: Netlist,
    n_paths: int,
    length: int,
    seed: int,
    forbidden: frozenset[str] = frozenset(),
) -> list[list[str]]:
    """Find ``n_paths`` vertex-disjoint directed paths of exactly ``length``
    2-input gates via randomized walks.

    Every path head must have a gate-driven fanin to serve as the routing
    block's entry wire, and entry wires are pairwise distinct.  Raises
    :class:`PathSelectionError` with the best partial count when the netlist
    cannot host the request within the retry budget.
    """
    ok, _ = check_acyclic(netlist)
    if not ok:
        raise LockingError("timing-path selection requires an acyclic netlist")
    rng = random.Random(seed)

    def eligible(gid: str) -> bool:
        gate = netlist.gates[gid]
        return (
            gid not in forbidden
            and gate.function in BASE_FUNCTIONS
            and len(gate.fanin) == 2
            and gate.fanin[0] != gate.fanin[1]
        )

    nodes = [g for g in netlist.gates if eligible(g)]
    succ: dict[str, list[str]] = {g: [] for g in nodes}
    for gid in nodes:
        for src in netlist.gates[gid].fanin:
            if src in succ:
                succ[src].append(gid)

    def entry_options(head: str) -> list[str]:
        return [s for s in netlist.gates[head].fanin if s in netlist.gates]

    heads = [g for g in nodes if entry_options(g)]

    best: list[list[str]] = []
    trials = 0
    while trials < _RETRY_BUDGET:
        rng.shuffle(heads)
        used: set[str] = set()
        entries: set[str] = set()
        paths: list[list[str]] = []
        path_entries: list[str] = []
        for head in heads:
            if len(paths) == n_paths:
                break
            if head in used or head in entries:
                continue
            # entries stay disjoint from the block's own gates, otherwise a
            # stage input could coincide with the gate it feeds
            opts = [e for e in entry_options(head) if e not in entries and e not in used]
            if not opts:
                continue
            trials += 1
            path = _random_walk(head, length, used | entries, succ, rng)
            if path is None:
                continue
            opts = [e for e in opts if e not in path]
            if not opts:
                continue
            entry = rng.choice(opts)
            used.update(path)
            entries.add(entry)
            paths.append(path)
            path_entries.append(entry)
        if len(paths) == n_paths:
            return [[e] + p for e, p in zip(path_entries, paths)]
        if len(paths) > len(best):
            best = paths
        if not heads:
            break
    raise PathSelectionError(
        f"could not embed {n_paths} disjoint {length}-gate paths", len(best)
    )


def _random_walk(head, length, used, succ, rng, tries=4):
    for _ in range(tries):
        path = [head]
        cur = head
        while len(path) < length:
            cands = [s for s in succ[cur] if s not in used and s not in path]
            if not cands:
                break
            cur = rng.choice(cands)
            path.append(cur)
        if len(path) == length:
            return path
    return None


# -- routing-block locking ----------------------------------------------------


def lock_interlock(netlist: Netlist, n_keyrbs: int, size_n: int, seed: int) -> LockedDesign:
    """Embed ``n_keyrbs`` routing blocks of size ``size_n``.

    Each block hides ``size_n`` vertex-disjoint timing paths at full
    utilization: the two gates of every switch box must be used, so only the
    shared input-routing bit of each box is secret.
    """
    if size_n < 4 or size_n & (size_n - 1):
        raise LockingError("routing block size must be a power of two, at least 4")
    n_stages = 2 * int(math.log2(size_n)) - 2

    locked = netlist.copy()
    locked.name = f"{netlist.name}_rb{n_keyrbs}x{size_n}"
    rng = random.Random(seed)
    key_bits: dict[int, Optional[int]] = {}
    key_counter = 0
    keyrbs: list[KeyRB] = []
    forbidden: set[str] = set()

    for rb_index in range(n_keyrbs):
        paths_with_entry = select_timing_paths(
            netlist, size_n, n_stages, rng.randrange(2**32), frozenset(forbidden)
        )
        entries = [p[0] for p in paths_with_entry]
        paths = [p[1:] for p in paths_with_entry]
        for p in paths:
            forbidden.update(p)

        # previous-position wire per path and stage (entry wire at stage 0);
        # original names stay valid because bypass MUXes take them over
        def prev_wire(p: int, stage: int) -> str:
            return entries[p] if stage == 0 else paths[p][stage - 1]

        swb_grid: list[list[SwB]] = []
        for stage in range(n_stages):
            pairing = _clean_pairing(netlist, paths, stage, prev_wire, size_n, rng)
            row: list[SwB] = []
            for pos in range(size_n // 2):
                p, q = pairing[2 * pos], pairing[2 * pos + 1]
                row.append(
                    _emit_swb(
                        locked,
                        netlist,
                        stage,
                        pos,
                        paths[p][stage],
                        paths[q][stage],
                        prev_wire(p, stage),
                        prev_wire(q, stage),
                        key_counter,
                        rng,
                        key_bits,
                    )
                )
                key_counter += 3
            swb_grid.append(row)
        keyrbs.append(
            KeyRB(size_n=size_n, swbs=swb_grid, embedded_paths=paths, entry_wires=entries)
        )

    locked.validate()
    return LockedDesign(
        netlist=locked,
        scheme=Scheme.INTERLOCK,
        keyrbs=keyrbs,
        correct_key=KeyAssignment(key_bits),
    )


def _clean_pairing(
    original: Netlist, paths, stage: int, prev_wire, size_n: int, rng: random.Random
) -> list[int]:
    """Random perfect matching of paths into switch boxes, rejecting pairs
    whose false stage input would coincide with a gate's observable second
    fanin (such a candidate would duplicate an existing wire)."""
    idx = list(range(size_n))
    for _ in range(200):
        rng.shuffle(idx)
        ok = True
        for pos in range(size_n // 2):
            p, q = idx[2 * pos], idx[2 * pos + 1]
            gp, gq = paths[p][stage], paths[q][stage]
            if (
                prev_wire(q, stage) in original.gates[gp].fanin
                or prev_wire(p, stage) in original.gates[gq].fanin
            ):
                ok = False
                break
        if ok:
            return idx
    raise LockingError(
        "could not pair timing paths without overlapping stage inputs"
    )


def _emit_swb(
    locked: Netlist,
    original: Netlist,
    stage: int,
    pos: int,
    g1: str,
    g2: str,
    prev1: str,
    prev2: str,
    key_base: int,
    rng: random.Random,
    key_bits: dict[int, Optional[int]],
) -> SwB:
    """Rewrite two path gates into one switch box.

    ``g1``/``g2`` are the original gate names; ``prev1``/``prev2`` the wires
    their routed ports must receive under the correct key.
    """
    perm_key, kb1, kb2 = key_base, key_base + 1, key_base + 2

    # presentation order of the stage inputs is random so the shared routing
    # bit carries no structural signal
    crossed = rng.randrange(2)
    stage_inputs = (prev2, prev1) if crossed else (prev1, prev2)

    ex = []
    for g, prev in ((g1, prev1), (g2, prev2)):
        fanin = original.gates[g].fanin
        ex.append(fanin[1] if fanin[0] == prev else fanin[0])

    kp_wire = _key_wire(perm_key)
    locked.inputs.extend([kp_wire, _key_wire(kb1), _key_wire(kb2)])
    in_muxes = (f"{g1}__m", f"{g2}__m")
    locked.gates[in_muxes[0]] = Gate(GateFunction.MUX2, (kp_wire, stage_inputs[0], stage_inputs[1]))
    locked.gates[in_muxes[1]] = Gate(GateFunction.MUX2, (kp_wire, stage_inputs[1], stage_inputs[0]))

    gate_nodes = (f"{g1}__q", f"{g2}__q")
    bypass_side = []
    correct_bypass = []
    for gi, (g, mux_in, kb) in enumerate(
        ((g1, in_muxes[0], kb1), (g2, in_muxes[1], kb2))
    ):
        gate = original.gates[g]
        routed_port = 0 if gate.fanin[0] == (prev1 if gi == 0 else prev2) else 1
        fanin = list(locked.gates[g].fanin)
        fanin[routed_port] = mux_in
        node = gate_nodes[gi]
        del locked.gates[g]
        locked.gates[node] = Gate(gate.function, tuple(fanin))
        side = rng.randrange(2)
        data = (mux_in, node) if side else (node, mux_in)
        locked.gates[g] = Gate(GateFunction.MUX2, (_key_wire(kb), data[0], data[1]))
        bypass_side.append(side)
        correct_bypass.append(side)
        key_bits[kb] = side

    key_bits[perm_key] = crossed
    return SwB(
        stage=stage,
        position=pos,
        f1=gate_nodes[0],
        f2=gate_nodes[1],
        f1_name=g1,
        f2_name=g2,
        stage_inputs=stage_inputs,
        ex_inputs=(ex[0], ex[1]),
        in_muxes=in_muxes,
        out_muxes=(g1, g2),
        perm_key=perm_key,
        bypass_keys=(kb1, kb2),
        bypass_gate_side=(bypass_side[0], bypass_side[1]),
        correct_perm=crossed,
        correct_bypass=(correct_bypass[0], correct_bypass[1]),
    )
