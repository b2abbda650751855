"""Oracle-less key recovery from attack graphs and a trained link scorer.

This module never sees ground truth: it consumes the public attack graph,
candidate links, and a model, and emits a key assignment plus a run report.
Wrong-decision counts are filled in later by the evaluation side.

Routing-block recovery completes the network iteratively: score every open
candidate, accept only pairs where one link clears the upper limit and the
margin clears the threshold, propagate each decision to the sibling gate of
the switch box, add accepted links as real edges, and rescore.  Conflicts
(two decisions implying different values for one key bit) first tighten the
threshold, then enable an average ensemble over hop sizes {2,3}, then stop.
Independent MUX key-gates need a single scoring pass instead.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .gnn import GnnModel, predict_batch
from .graphprep import (
    FEATURE_WIDTH,
    AttackGraph,
    CandidateLink,
    CandidateSet,
    extract_enclosing_subgraph,
)
from .locking import KeyAssignment
from .netlist import Gate, GateFunction, Netlist, NetlistError

_EPS = 1e-9
TIE_EPSILON = 1e-6
ITERATION_CAP = 1000


class AttackError(ValueError):
    pass


@dataclass
class IterationRecord:
    iteration: int
    th: float
    up: float
    h: int
    ensemble: bool
    accepted: int
    links_recovered: int
    links_left: int
    event: str = ""  # accept | decay | conflict-stop | done
    wrong: Optional[int] = None  # evaluation side fills these in
    precision: Optional[float] = None


@dataclass
class AttackReport:
    scheme: str
    iterations: list[IterationRecord] = field(default_factory=list)
    accepted_links: list[CandidateLink] = field(default_factory=list)
    solved_bits: int = 0
    total_bits: int = 0
    undecided_groups: int = 0
    runtime_seconds: float = 0.0


def _label_cap(model: GnnModel) -> int:
    cap = model.feature_width - FEATURE_WIDTH - 1
    if cap < 1:
        raise AttackError("model feature width is too small for graph features")
    return cap


def _score_links(
    graph: AttackGraph,
    links: Sequence[CandidateLink],
    model: GnnModel,
    hops: Sequence[int],
    cap: int,
) -> dict[tuple[int, int], float]:
    """Mean probability over the requested hop sizes, keyed by (group, role)."""
    totals = [0.0] * len(links)
    for h in hops:
        subs = [extract_enclosing_subgraph(graph, (l.u, l.v), h, cap) for l in links]
        for i, s in enumerate(predict_batch(model, subs)):
            totals[i] += s
    return {(l.group, l.role): t / len(hops) for l, t in zip(links, totals)}


def _group_table(cands: CandidateSet) -> dict[int, tuple[CandidateLink, CandidateLink]]:
    table: dict[int, list[CandidateLink]] = {}
    for link in cands.links:
        table.setdefault(link.group, []).append(link)
    out = {}
    for gid, links in table.items():
        if len(links) != 2:
            raise AttackError(f"candidate group {gid} does not have exactly 2 links")
        links.sort(key=lambda l: l.role)
        out[gid] = (links[0], links[1])
    return out


def _siblings(groups) -> dict[int, Optional[int]]:
    by_swb: dict[tuple[int, int], list[int]] = {}
    for gid, (la, _) in groups.items():
        if la.swb >= 0:
            by_swb.setdefault((la.swb, 0), []).append(gid)
    sib: dict[int, Optional[int]] = {gid: None for gid in groups}
    for gids in by_swb.values():
        if len(gids) == 2:
            sib[gids[0]], sib[gids[1]] = gids[1], gids[0]
    return sib


def _final_key(
    cands: CandidateSet, decided_bits: dict[int, int]
) -> KeyAssignment:
    bits: dict[int, Optional[int]] = {
        i: decided_bits.get(i) for i in range(cands.total_key_bits)
    }
    return KeyAssignment(bits)


def attack_interlock(
    graph: AttackGraph, cands: CandidateSet, model: GnnModel
) -> tuple[KeyAssignment, AttackReport]:
    """Iterative completion per the post-processing loop; see module docs."""
    t0 = time.perf_counter()
    cap = _label_cap(model)
    groups = _group_table(cands)
    sibling = _siblings(groups)
    undecided = set(groups)
    decided_bits: dict[int, int] = dict(cands.structural_bits)
    accepted: list[CandidateLink] = []
    report = AttackReport(scheme="interlock", total_bits=cands.total_key_bits)

    work = graph
    th10, up10 = 0, 10
    h = 2
    ensemble = False
    done = False
    iteration = 0
    # threshold states where a conflict already forced a bump; a conflict
    # recurring at such a state (tie pathologies make the bump/decay walk
    # cycle) escalates instead of bumping again
    conflict_marks: set[tuple[int, int, int, bool]] = set()
    while not done and undecided:
        iteration += 1
        if iteration > ITERATION_CAP:
            raise AttackError("iteration cap exceeded; threshold walk did not terminate")
        links = [l for gid in sorted(undecided) for l in groups[gid]]
        scores = _score_links(work, links, model, (2, 3) if ensemble else (h,), cap)

        # filter pass; restarts with a tighter threshold on conflict
        while True:
            up = up10 / 10.0
            th = th10 / 10.0
            # each gate's own decision first, so contradictory claims on one
            # switch box are visible before propagation fills in siblings
            decisions: dict[int, CandidateLink] = {}
            for gid in sorted(undecided):
                la, lb = groups[gid]
                sa, sb = scores[(gid, 0)], scores[(gid, 1)]
                if not (sa >= up - _EPS or sb >= up - _EPS):
                    continue
                if abs(sa - sb) < th - _EPS:
                    continue
                decisions[gid] = la if sa >= sb else lb

            chosen_links: list[CandidateLink] = []
            decided_groups: set[int] = set()
            skipped: set[int] = set()
            restart = False
            for gid in sorted(decisions):
                if gid in decided_groups or gid in skipped:
                    continue
                chosen = decisions[gid]
                sib = sibling[gid]
                if sib is not None and sib in decisions and sib not in decided_groups:
                    sib_chosen = decisions[sib]
                    if sib_chosen.key_value != chosen.key_value:
                        # both gates claim the same stage input
                        state = (th10, up10, h, ensemble)
                        if h == 2 and th10 != up10 and state not in conflict_marks:
                            conflict_marks.add(state)
                            th10 += 1
                            restart = True
                            break
                        if ensemble:
                            # final pass: keep clean decisions, leave this
                            # box unresolved
                            done = True
                            skipped.update((gid, sib))
                            continue
                        ensemble = True
                        th10 = up10 = 10
                        chosen_links = None  # rescore with the ensemble
                        break
                    chosen_links += [chosen, sib_chosen]
                    decided_groups.update((gid, sib))
                    continue
                chosen_links.append(chosen)
                decided_groups.add(gid)
                if sib is not None and sib in undecided:
                    sa_, sb_ = groups[sib]
                    implied = sa_ if sa_.key_value == chosen.key_value else sb_
                    chosen_links.append(implied)
                    decided_groups.add(sib)
            if restart:
                continue
            break

        if chosen_links is None:
            report.iterations.append(
                IterationRecord(
                    iteration, th10 / 10.0, up10 / 10.0, h, True, 0,
                    len(accepted), len(undecided), event="conflict-rescore",
                )
            )
            continue

        if chosen_links:
            if h == 2:
                h = 3
                th_after = 10
            else:
                th_after = th10
            accepted.extend(chosen_links)
            for link in chosen_links:
                decided_bits[link.key_index] = link.key_value
            work = work.with_edges([(l.u, l.v) for l in chosen_links])
            undecided -= decided_groups
            conflict_marks.clear()
            report.iterations.append(
                IterationRecord(
                    iteration, th10 / 10.0, up10 / 10.0, h, ensemble,
                    len(chosen_links), len(accepted), len(undecided),
                    event="conflict-stop" if done else "accept",
                )
            )
            th10 = th_after
        else:
            event = "conflict-stop" if done else "decay"
            if not done:
                if 2 * th10 >= up10:
                    th10 -= 1
                else:
                    up10 -= 1
                    th10 = up10
            if th10 < 0 or up10 < 0:
                raise AttackError("threshold walk left the [0,1] grid")
            report.iterations.append(
                IterationRecord(
                    iteration, th10 / 10.0, up10 / 10.0, h, ensemble, 0,
                    len(accepted), len(undecided), event=event,
                )
            )
        if not undecided:
            done = True

    key = _final_key(cands, decided_bits)
    report.accepted_links = accepted
    report.solved_bits = key.resolved
    report.undecided_groups = len(undecided)
    report.runtime_seconds = time.perf_counter() - t0
    return key, report


def attack_random_mux(
    graph: AttackGraph, cands: CandidateSet, model: GnnModel
) -> tuple[KeyAssignment, AttackReport]:
    """One scoring pass; per key-gate the higher-scored wire wins, exact ties
    stay undeciphered."""
    t0 = time.perf_counter()
    cap = _label_cap(model)
    groups = _group_table(cands)
    links = [l for gid in sorted(groups) for l in groups[gid]]
    scores = _score_links(graph, links, model, (2,), cap)
    decided_bits: dict[int, int] = dict(cands.structural_bits)
    accepted: list[CandidateLink] = []
    unresolved = 0
    for gid in sorted(groups):
        la, lb = groups[gid]
        sa, sb = scores[(gid, 0)], scores[(gid, 1)]
        if abs(sa - sb) <= TIE_EPSILON:
            unresolved += 1
            continue
        chosen = la if sa > sb else lb
        decided_bits[chosen.key_index] = chosen.key_value
        accepted.append(chosen)
    key = _final_key(cands, decided_bits)
    report = AttackReport(
        scheme="mux",
        iterations=[
            IterationRecord(
                1, 0.0, 0.0, 2, False, len(accepted), len(accepted),
                unresolved, event="accept",
            )
        ],
        accepted_links=accepted,
        solved_bits=key.resolved,
        total_bits=cands.total_key_bits,
        undecided_groups=unresolved,
        runtime_seconds=time.perf_counter() - t0,
    )
    return key, report


# -- reconstruction ------------------------------------------------------------


def reconstruct_design(locked: Netlist, key: KeyAssignment) -> Netlist:
    """Collapse every key MUX whose bit is resolved to its selected wire;
    unresolved MUXes (and their key inputs) stay for downstream sweeps.

    A collapsed routing-block gate gets its original name back, so a fully
    and correctly resolved key reproduces the original netlist exactly.
    """
    key_sigs = locked.key_inputs
    sig_to_idx = {sig: idx for idx, sig in key_sigs.items()}

    resolved_mux: dict[str, str] = {}  # mux node -> chosen data input (one step)
    for gid, gate in locked.gates.items():
        if gate.function is not GateFunction.MUX2:
            continue
        idx = sig_to_idx.get(gate.fanin[0])
        if idx is None:
            continue
        bit = key.bits.get(idx)
        if bit is not None:
            resolved_mux[gid] = gate.fanin[2] if bit else gate.fanin[1]

    def resolve(sig: str, trail: tuple[str, ...] = ()) -> str:
        while sig in resolved_mux:
            if sig in trail:
                raise AttackError(f"inconsistent key: resolution cycle at '{sig}'")
            trail += (sig,)
            sig = resolved_mux[sig]
        return sig

    # rename collapsed routing-block gates back to the mux's (original) name
    rename: dict[str, str] = {}
    for mux, _ in resolved_mux.items():
        target = resolve(mux)
        if target == f"{mux}__q" and target in locked.gates:
            rename[target] = mux

    out = Netlist(name=locked.name + "_rec")
    used_keys: set[str] = set()
    for gid, gate in locked.gates.items():
        if gid in resolved_mux:
            continue
        fanin = tuple(rename.get(resolve(s), resolve(s)) for s in gate.fanin)
        out.gates[rename.get(gid, gid)] = Gate(gate.function, fanin)
        if gate.function is GateFunction.MUX2 and gate.fanin[0] in sig_to_idx:
            used_keys.add(gate.fanin[0])
    out.inputs = [
        i for i in locked.inputs if i not in sig_to_idx or i in used_keys
    ]
    out.outputs = list(locked.outputs)
    try:
        return out.validate()
    except NetlistError as exc:
        raise AttackError(f"inconsistent link set: {exc}") from exc
