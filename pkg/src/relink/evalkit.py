"""Judging attack output against held-out ground truth.

Everything here may read the correct key; nothing here is reachable from
the attack path.  Key precision follows the reporting convention of the
results this reproduces: undeciphered bits count against accuracy but not
against precision, i.e. precision = (K - wrong) / K.  The plain
correct/(correct+wrong) ratio is kept alongside as ``decision_precision``.
"""

from __future__ import annotations

import itertools
import json
import random
from dataclasses import dataclass, field
from typing import Optional, Sequence

from .attack import AttackReport
from .graphprep import CandidateSet, candidate_truth
from .locking import KeyAssignment, LockedDesign
from .netlist import (
    CombinationalCycleError,
    Netlist,
    all_pattern_columns,
    outputs_packed,
    random_pattern_columns,
)


class EvalError(ValueError):
    pass


@dataclass
class KeyMetrics:
    correct: int
    wrong: int
    undeciphered: int

    @property
    def total(self) -> int:
        return self.correct + self.wrong + self.undeciphered

    @property
    def precision(self) -> float:
        """Fraction of key bits not recovered wrongly (undeciphered bits do
        not count against it); 100% when nothing was decided, flagged via
        :attr:`precision_defined`."""
        if self.total == 0:
            return 100.0
        return 100.0 * (self.total - self.wrong) / self.total

    @property
    def precision_defined(self) -> bool:
        return (self.correct + self.wrong) > 0

    @property
    def decision_precision(self) -> float:
        """correct / (correct + wrong), over decided bits only."""
        if self.correct + self.wrong == 0:
            return 100.0
        return 100.0 * self.correct / (self.correct + self.wrong)

    @property
    def accuracy(self) -> float:
        if self.total == 0:
            return 100.0
        return 100.0 * self.correct / self.total


def score_key(recovered: KeyAssignment, truth: KeyAssignment) -> KeyMetrics:
    if set(recovered.bits) != set(truth.bits):
        raise EvalError("recovered and true keys cover different index spaces")
    correct = wrong = undeciphered = 0
    for idx, bit in recovered.bits.items():
        if bit is None:
            undeciphered += 1
        elif bit == truth.bits[idx]:
            correct += 1
        else:
            wrong += 1
    return KeyMetrics(correct, wrong, undeciphered)


def annotate_report(
    report: AttackReport, design: LockedDesign, cands: CandidateSet
) -> int:
    """Fill per-iteration wrong counts and link precision from ground truth;
    returns the total number of wrong link acceptances."""
    truth = {
        (l.group, l.role): t for l, t in zip(cands.links, candidate_truth(design, cands))
    }
    pos = 0
    total_wrong = 0
    for rec in report.iterations:
        batch = report.accepted_links[pos : pos + rec.accepted]
        pos += rec.accepted
        wrong = sum(1 for l in batch if not truth[(l.group, l.role)])
        total_wrong += wrong
        rec.wrong = wrong
        rec.precision = (
            100.0 * (rec.accepted - wrong) / rec.accepted if rec.accepted else None
        )
    return total_wrong


# -- hamming distance ----------------------------------------------------------


@dataclass
class HdResult:
    hd_percent: float
    num_keys_sampled: int
    num_patterns: int
    num_incomparable: int = 0
    exhaustive_patterns: bool = False
    exhaustive_keys: bool = False


EXHAUSTIVE_PI_LIMIT = 16
DESK_KEYS, DESK_PATTERNS = 20, 2000
PAPER_KEYS, PAPER_PATTERNS = 100, 10_000


def hamming_distance(
    original: Netlist,
    recovered: Netlist,
    unresolved_policy: str = "random",
    num_keys: int = DESK_KEYS,
    num_patterns: int = DESK_PATTERNS,
    seed: int = 0,
    paper_scale: bool = False,
    truth: Optional[KeyAssignment] = None,
    force_random_patterns: bool = False,
) -> HdResult:
    """Mean differing-output-bit fraction between the designs.

    Unresolved key bits of the recovered design are completed per policy
    (``random`` samples completions, enumerating all of them when there are
    few enough; ``pessimistic`` flips every unresolved bit against ``truth``).
    The pattern sweep is exhaustive when the input space is small enough.
    Completions that make the recovered design cyclic are excluded from the
    mean and counted separately.
    """
    if paper_scale:
        num_keys, num_patterns = PAPER_KEYS, PAPER_PATTERNS
    if original.data_inputs != recovered.data_inputs or original.outputs != recovered.outputs:
        raise EvalError("designs must share the PI/PO interface")
    rng = random.Random(seed)
    pis = original.data_inputs

    exhaustive_patterns = len(pis) <= EXHAUSTIVE_PI_LIMIT and not force_random_patterns
    if exhaustive_patterns:
        columns, n_pat = all_pattern_columns(pis)
    else:
        n_pat = num_patterns
        columns = random_pattern_columns(pis, n_pat, rng)

    open_bits = sorted(recovered.key_inputs)
    completions: list[dict[int, int]]
    exhaustive_keys = False
    if not open_bits:
        completions = [{}]
        exhaustive_keys = True
    elif unresolved_policy == "pessimistic":
        if truth is None:
            raise EvalError("pessimistic completion requires the true key")
        completions = [{i: 1 - truth.bits[i] for i in open_bits}]
    elif unresolved_policy == "random":
        if 2 ** len(open_bits) <= num_keys:
            completions = [
                dict(zip(open_bits, vals))
                for vals in itertools.product((0, 1), repeat=len(open_bits))
            ]
            exhaustive_keys = True
        else:
            completions = [
                {i: rng.randrange(2) for i in open_bits} for _ in range(num_keys)
            ]
    else:
        raise EvalError(f"unknown unresolved policy '{unresolved_policy}'")

    ref = outputs_packed(original, columns, n_pat)
    total_bits = n_pat * len(original.outputs)
    fractions: list[float] = []
    incomparable = 0
    for completion in completions:
        try:
            got = outputs_packed(recovered, columns, n_pat, key=completion)
        except CombinationalCycleError:
            incomparable += 1
            continue
        differing = sum((a ^ b).bit_count() for a, b in zip(ref, got))
        fractions.append(differing / total_bits)
    if not fractions:
        raise EvalError("every key completion produced a cyclic design")
    return HdResult(
        hd_percent=100.0 * sum(fractions) / len(fractions),
        num_keys_sampled=len(fractions),
        num_patterns=n_pat,
        num_incomparable=incomparable,
        exhaustive_patterns=exhaustive_patterns,
        exhaustive_keys=exhaustive_keys,
    )


# -- report emission -----------------------------------------------------------

CSV_COLUMNS = [
    "benchmark", "scheme", "iteration", "th", "up", "h", "ensemble",
    "C", "W", "precision", "links_recovered", "links_left",
    "solved_bits", "total_bits",
]


def report_rows(benchmark: str, report: AttackReport) -> list[dict]:
    rows = []
    for rec in report.iterations:
        correct = None if rec.wrong is None else rec.accepted - rec.wrong
        rows.append(
            {
                "benchmark": benchmark,
                "scheme": report.scheme,
                "iteration": rec.iteration,
                "th": rec.th,
                "up": rec.up,
                "h": rec.h,
                "ensemble": int(rec.ensemble),
                "C": correct if correct is not None else rec.accepted,
                "W": rec.wrong,
                "precision": rec.precision,
                "links_recovered": rec.links_recovered,
                "links_left": rec.links_left,
                "solved_bits": report.solved_bits,
                "total_bits": report.total_bits,
            }
        )
    return rows


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:g}"
    return str(value)


def rows_to_csv(rows: Sequence[dict]) -> str:
    out = [",".join(CSV_COLUMNS)]
    for row in rows:
        out.append(",".join(_fmt(row.get(col)) for col in CSV_COLUMNS))
    return "\n".join(out) + "\n"


def csv_to_rows(text: str) -> list[dict]:
    lines = [l for l in text.splitlines() if l.strip()]
    header = lines[0].split(",")
    rows = []
    for line in lines[1:]:
        row: dict = {}
        for col, cell in zip(header, line.split(",")):
            if cell == "":
                row[col] = None
            else:
                try:
                    row[col] = int(cell)
                except ValueError:
                    try:
                        row[col] = float(cell)
                    except ValueError:
                        row[col] = cell
        rows.append(row)
    return rows


def rows_to_table(rows: Sequence[dict]) -> str:
    cols = CSV_COLUMNS
    cells = [[_fmt(r.get(c)) for c in cols] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) if cells else len(c) for i, c in enumerate(cols)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
    for row in cells:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


@dataclass
class EvalSummary:
    benchmark: str
    scheme: str
    key_metrics: Optional[KeyMetrics] = None
    hd: Optional[HdResult] = None
    rows: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        doc = {
            "benchmark": self.benchmark,
            "scheme": self.scheme,
            "iterations": self.rows,
        }
        if self.key_metrics:
            m = self.key_metrics
            doc["key"] = {
                "correct": m.correct,
                "wrong": m.wrong,
                "undeciphered": m.undeciphered,
                "precision_percent": m.precision,
                "precision_defined": m.precision_defined,
                "decision_precision_percent": m.decision_precision,
                "accuracy_percent": m.accuracy,
            }
        if self.hd:
            doc["hamming_distance"] = {
                "hd_percent": self.hd.hd_percent,
                "num_keys_sampled": self.hd.num_keys_sampled,
                "num_patterns": self.hd.num_patterns,
                "num_incomparable": self.hd.num_incomparable,
                "exhaustive_patterns": self.hd.exhaustive_patterns,
                "exhaustive_keys": self.hd.exhaustive_keys,
            }
        return json.dumps(doc, indent=1)
