"""Word error rate, normalized WER and relative change."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from .exceptions import InvalidArgumentError, UndefinedBaselineError


@dataclass(frozen=True)
class WerReport:
    substitutions: int
    insertions: int
    deletions: int
    reference_words: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def wer(self) -> float:
        return self.errors / self.reference_words

    def __add__(self, other: "WerReport") -> "WerReport":
        return WerReport(self.substitutions + other.substitutions, self.insertions + other.insertions,
                         self.deletions + other.deletions, self.reference_words + other.reference_words)


def _words(x) -> list:
    return x.split() if isinstance(x, str) else list(x)


def edit_distance(ref: Sequence, hyp: Sequence) -> list[list[int]]:
    n, m = len(ref), len(hyp)
    d = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        d[i][0] = i
    for j in range(m + 1):
        d[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1])
            d[i][j] = min(sub, d[i][j - 1] + 1, d[i - 1][j] + 1)
    return d


def wer(reference, hypothesis) -> WerReport:
    """Unit-cost Levenshtein alignment of word sequences (or strings).

    When several alignments are optimal the backtrace prefers substitution,
    then insertion, then deletion; only the S/I/D split depends on this.
    """
    ref, hyp = _words(reference), _words(hypothesis)
    if not ref:
        raise InvalidArgumentError("reference must contain at least one word")
    d = edit_distance(ref, hyp)
    i, j = len(ref), len(hyp)
    s = ins = dels = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0 and d[i][j] == d[i - 1][j - 1] + (ref[i - 1] != hyp[j - 1]):
            s += ref[i - 1] != hyp[j - 1]
            i, j = i - 1, j - 1
        elif j > 0 and d[i][j] == d[i][j - 1] + 1:
            ins += 1
            j -= 1
        else:
            dels += 1
            i -= 1
    return WerReport(s, ins, dels, len(ref))


def corpus_wer(reports: Iterable[WerReport]) -> WerReport:
    total = WerReport(0, 0, 0, 0)
    for r in reports:
        total = total + r
    if total.reference_words == 0:
        raise InvalidArgumentError("no reference words")
    return total


def nwer(wer_value: float, baseline_wer: float) -> float:
    """WER as a percentage of a baseline model's WER on the same set."""
    if baseline_wer <= 0:
        raise UndefinedBaselineError(f"baseline WER must be > 0, got {baseline_wer}")
    return 100.0 * wer_value / baseline_wer


def relative_change(a: float, b: float) -> float:
    """``(a - b) / b``; positive means ``a`` is larger."""
    if b <= 0:
        raise InvalidArgumentError(f"relative change needs a positive reference, got {b}")
    return (a - b) / b
