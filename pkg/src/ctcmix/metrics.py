"""Character error rate from Levenshtein distances."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

from .errors import LengthMismatch


def levenshtein(a: Sequence, b: Sequence) -> int:
    """Unit-cost edit distance (insertions, deletions, substitutions)."""
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        cur = [i]
        for j, cb in enumerate(b, start=1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


@dataclass
class LineRecord:
    reference: str
    prediction: str
    edits: int


@dataclass
class EvalReport:
    ref_chars: int
    edits: int
    cer: float
    lines: List[LineRecord] = field(default_factory=list)
    loss: Optional[float] = None
    # set when every reference is empty and ``cer`` holds the raw edit count
    degenerate: bool = False

    def summary(self) -> str:
        return f"cer={self.cer:.6f} lines={len(self.lines)} edits={self.edits}"

    def to_tsv(self) -> str:
        out = ["reference\tprediction\tedits\n"]
        out.extend(f"{r.reference}\t{r.prediction}\t{r.edits}\n" for r in self.lines)
        return "".join(out)


def cer(predictions: Sequence[str], references: Sequence[str], loss: Optional[float] = None) -> EvalReport:
    """Micro-averaged CER: total edits over total reference characters."""
    if len(predictions) != len(references):
        raise LengthMismatch(f"{len(predictions)} predictions for {len(references)} references")
    records = [LineRecord(r, p, levenshtein(p, r)) for p, r in zip(predictions, references)]
    edits = sum(r.edits for r in records)
    chars = sum(len(r) for r in references)
    if chars == 0:
        return EvalReport(0, edits, float(edits), records, loss, degenerate=True)
    return EvalReport(chars, edits, edits / chars, records, loss)
