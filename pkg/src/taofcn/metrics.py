"""String-level correct rate (CR) and accuracy rate (AR)."""
from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class EditCounts:
    n: int
    sub: int = 0
    dele: int = 0
    ins: int = 0

    def __add__(self, other: "EditCounts") -> "EditCounts":
        return EditCounts(self.n + other.n, self.sub + other.sub, self.dele + other.dele, self.ins + other.ins)

    @property
    def cost(self) -> int:
        return self.sub + self.dele + self.ins


def edit_counts(truth, pred) -> EditCounts:
    """Unit-cost alignment; among minimum-cost alignments the one with most substitutions."""
    n, m = len(truth), len(pred)
    # cell: (cost, -sub, sub, del, ins)
    prev = [(j, 0, 0, 0, j) for j in range(m + 1)]
    for i in range(1, n + 1):
        cur = [(i, 0, 0, i, 0)]
        for j in range(1, m + 1):
            d = prev[j]
            d = (d[0] + 1, d[1], d[2], d[3] + 1, d[4])
            a = cur[j - 1]
            a = (a[0] + 1, a[1], a[2], a[3], a[4] + 1)
            s = prev[j - 1]
            if truth[i - 1] != pred[j - 1]:
                s = (s[0] + 1, s[1] - 1, s[2] + 1, s[3], s[4])
            cur.append(min(s, d, a))
        prev = cur
    _, _, sub, dele, ins = prev[m]
    return EditCounts(n, sub, dele, ins)


def rates(counts: EditCounts) -> tuple[float, float]:
    """``(CR, AR)`` as fractions. With no reference characters CR is 1 and
    AR is ``-ins`` (the denominator is clamped to 1)."""
    if counts.n == 0:
        return 1.0, float(-counts.ins) if counts.ins else 1.0
    cr = (counts.n - counts.sub - counts.dele) / counts.n
    ar = (counts.n - counts.sub - counts.dele - counts.ins) / counts.n
    return cr, ar


def cr_ar(ground_truth: str, prediction: str) -> tuple[float, float, EditCounts]:
    counts = edit_counts(ground_truth, prediction)
    cr, ar = rates(counts)
    return cr, ar, counts


def corpus_cr_ar(pairs) -> tuple[float, float, EditCounts]:
    """Pooled counts over ``(truth, prediction)`` pairs, then one CR/AR."""
    total = EditCounts(0)
    for truth, pred in pairs:
        total = total + edit_counts(truth, pred)
    cr, ar = rates(total)
    return cr, ar, total
