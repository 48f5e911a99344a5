"""Edit-distance error rates, accent accuracy and per-unit error attribution."""
from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Optional, Sequence, Tuple

import numpy as np

from . import kernels
from .errors import ShapeError


@dataclass(frozen=True)
class ErrorCounts:
    rate: float
    substitutions: int
    deletions: int
    insertions: int
    ref_len: int
    degenerate: bool = False

    @property
    def errors(self) -> int:
        return self.substitutions + self.deletions + self.insertions


def _to_ids(ref: Sequence[Hashable], hyp: Sequence[Hashable]):
    table: Dict[Hashable, int] = {}
    r = [table.setdefault(t, len(table)) for t in ref]
    h = [table.setdefault(t, len(table)) for t in hyp]
    return np.asarray(r, dtype=np.int64), np.asarray(h, dtype=np.int64)


def align(ref: Sequence[Hashable], hyp: Sequence[Hashable]) -> np.ndarray:
    """Levenshtein alignment as rows (op, ref_idx, hyp_idx); fewest indels among minimum-edit paths."""
    r, h = _to_ids(ref, hyp)
    return kernels.edit_align(r, h)


def edit_error_rate(ref: Sequence[Hashable], hyp: Sequence[Hashable]) -> ErrorCounts:
    """(S + D + I) / |ref|.

    An empty reference gives rate 0 against an empty hypothesis and
    ``|hyp|`` otherwise; the latter is flagged ``degenerate``.
    """
    ops = align(ref, hyp)[:, 0] if len(ref) or len(hyp) else np.zeros(0, dtype=np.int64)
    s = int(np.sum(ops == kernels.OP_SUB))
    d = int(np.sum(ops == kernels.OP_DEL))
    i = int(np.sum(ops == kernels.OP_INS))
    if not ref:
        return ErrorCounts(float(len(hyp)), s, d, i, 0, degenerate=bool(hyp))
    return ErrorCounts((s + d + i) / len(ref), s, d, i, len(ref))


def corpus_error_rate(refs: Sequence[Sequence], hyps: Sequence[Sequence]) -> float:
    """Total edits over total reference length."""
    if len(refs) != len(hyps):
        raise ShapeError(f"{len(refs)} references vs {len(hyps)} hypotheses")
    errs = n = 0
    for r, h in zip(refs, hyps):
        c = edit_error_rate(r, h)
        errs += c.errors
        n += len(r)
    return errs / n if n else 0.0


@dataclass
class AccentAccuracy:
    accuracy: float
    recall: Dict[int, float]
    support: Dict[int, int]


def accent_accuracy(preds: Sequence[int], labels: Sequence[int]) -> AccentAccuracy:
    if len(preds) != len(labels):
        raise ShapeError(f"{len(preds)} predictions vs {len(labels)} labels")
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    acc = float(np.mean(preds == labels)) if labels.size else 0.0
    recall, support = {}, {}
    for a in np.unique(labels):
        sel = labels == a
        support[int(a)] = int(sel.sum())
        recall[int(a)] = float(np.mean(preds[sel] == a))
    return AccentAccuracy(acc, recall, support)


def write_accent_csv(path, result: AccentAccuracy):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["accent", "support", "recall"])
        for a in sorted(result.support):
            w.writerow([a, result.support[a], f"{result.recall[a]:.6f}"])
        w.writerow(["all", sum(result.support.values()), f"{result.accuracy:.6f}"])


def attribute_errors(ref: Sequence[Hashable], hyp: Sequence[Hashable]) -> List[int]:
    """Edit count charged to each reference position.

    Substitutions and deletions charge their own slot; an insertion charges
    the next reference token, or the last one when it trails the reference.
    """
    charge = [0] * len(ref)
    if not ref:
        return charge
    pending = 0
    for op, i, _ in align(ref, hyp):
        if op == kernels.OP_INS:
            pending += 1
            continue
        charge[i] += pending + (op != kernels.OP_MATCH)
        pending = 0
    charge[-1] += pending
    return charge


@dataclass
class PhonemeRow:
    accent: int
    token: int
    occurrences: int
    errors: int

    @property
    def per(self) -> float:
        return self.errors / self.occurrences if self.occurrences else 0.0


@dataclass
class PhonemeReport:
    rows: List[PhonemeRow]
    top: Dict[int, List[int]]
    # accent -> (error rate on coarse tokens containing a top unit, overall coarse error rate)
    word_rates: Dict[int, Tuple[float, float]] = field(default_factory=dict)


def per_phoneme_report(refs_f: Sequence[Sequence[int]], hyps_f: Sequence[Sequence[int]],
                       accents: Sequence[int], top_k: int = 5,
                       refs_c: Optional[Sequence[Sequence[int]]] = None,
                       hyps_c: Optional[Sequence[Sequence[int]]] = None,
                       expansions: Optional[Dict[int, Sequence[int]]] = None) -> PhonemeReport:
    """Per-accent, per-fine-unit error rates and the top-k worst units.

    With coarse references, hypotheses and the coarse -> fine ``expansions``
    table, also reports how often coarse tokens containing a top unit are
    misrecognized compared with all coarse tokens.
    """
    if not len(refs_f) == len(hyps_f) == len(accents):
        raise ShapeError("refs, hyps and accents must have equal length")
    occ = defaultdict(int)
    err = defaultdict(int)
    for ref, hyp, a in zip(refs_f, hyps_f, accents):
        for tok, c in zip(ref, attribute_errors(list(ref), list(hyp))):
            occ[(int(a), int(tok))] += 1
            err[(int(a), int(tok))] += c
    rows = [PhonemeRow(a, t, occ[(a, t)], err[(a, t)]) for a, t in sorted(occ)]
    top: Dict[int, List[int]] = {}
    for a in sorted({r.accent for r in rows}):
        ranked = sorted((r for r in rows if r.accent == a and r.errors > 0),
                        key=lambda r: (-r.per, r.token))
        top[a] = [r.token for r in ranked[:top_k]]
    report = PhonemeReport(rows, top)
    if refs_c is not None and hyps_c is not None and expansions is not None:
        for a, units in top.items():
            units = set(units)
            hit_err = hit_n = all_err = all_n = 0
            for ref, hyp, acc in zip(refs_c, hyps_c, accents):
                if int(acc) != a:
                    continue
                for tok, c in zip(ref, attribute_errors(list(ref), list(hyp))):
                    all_err += c
                    all_n += 1
                    if units & set(expansions.get(int(tok), ())):
                        hit_err += c
                        hit_n += 1
            report.word_rates[a] = (hit_err / hit_n if hit_n else 0.0,
                                    all_err / all_n if all_n else 0.0)
    return report


def write_phoneme_csv(path, report: PhonemeReport, names: Optional[Sequence[str]] = None):
    """Columns: accent, token, occurrences, errors, per, rank (blank outside the top-k)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["accent", "token", "occurrences", "errors", "per", "rank"])
        for r in report.rows:
            top = report.top.get(r.accent, [])
            rank = top.index(r.token) + 1 if r.token in top else ""
            name = names[r.token] if names is not None else r.token
            w.writerow([r.accent, name, r.occurrences, r.errors, f"{r.per:.6f}", rank])
