"""recall@K / hit@K, their macro averages, and the predictions/report file formats."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._binio import read_file, write_file
from .errors import EvalError, FormatError

HIT_KS = (5, 10, 20, 30)
RECALL_KS = (50, 100, 200, 300)

CSV_HEADER = ("query_id", "rank", "candidate_id", "score")


@dataclass(frozen=True)
class RankingResult:
    query: str
    ranked: tuple[tuple[str, float], ...]

    def __post_init__(self) -> None:
        ranked = tuple((str(c), float(s)) for c, s in self.ranked)
        ids = [c for c, _ in ranked]
        if len(set(ids)) != len(ids):
            raise EvalError(f"ranking for {self.query!r} has duplicate candidates")
        if self.query in ids:
            raise EvalError(f"ranking for {self.query!r} contains the query itself")
        object.__setattr__(self, "ranked", ranked)

    @property
    def ids(self) -> list[str]:
        return [c for c, _ in self.ranked]

    def top(self, k: int) -> "RankingResult":
        return RankingResult(self.query, self.ranked[:k])


def rank_by_score(query: str, candidates: Sequence[str], scores, ascending: bool, k: int | None = None) -> RankingResult:
    """Sort candidates by score (ties by id) and keep the first ``k``."""
    scores = np.asarray(scores, dtype=np.float64)
    key = scores if ascending else -scores
    order = sorted(range(len(candidates)), key=lambda i: (key[i], candidates[i]))
    if k is not None:
        order = order[:k]
    return RankingResult(query, tuple((candidates[i], float(scores[i])) for i in order))


def _as_ids(pred) -> list[str]:
    return pred.ids if isinstance(pred, RankingResult) else list(pred)


def recall_at_k(pred, truth: Sequence[str], k: int) -> float:
    """|top-k(pred) ∩ truth| / |truth|; the denominator is the full list length."""
    if k < 1:
        raise EvalError(f"K must be >= 1, got {k}")
    truth = set(truth)
    if not truth:
        raise EvalError("empty relevance list")
    return len(set(_as_ids(pred)[:k]) & truth) / len(truth)


def hit_at_k(pred, truth: Sequence[str], k: int) -> int:
    return int(recall_at_k(pred, truth, k) > 0)


@dataclass(frozen=True)
class MetricReport:
    hit_at: Mapping[int, float]
    recall_at: Mapping[int, float]
    n_queries: int

    def rows(self) -> list[tuple[str, int, float]]:
        return ([("hit", k, v) for k, v in self.hit_at.items()]
                + [("recall", k, v) for k, v in self.recall_at.items()])

    def to_csv(self) -> str:
        return "metric,k,value\n" + "".join(f"{m},{k},{v:.6f}\n" for m, k, v in self.rows())

    def to_table(self) -> str:
        heads = [f"hit@{k}" for k in self.hit_at] + [f"recall@{k}" for k in self.recall_at]
        vals = [f"{v:.3f}" for v in self.hit_at.values()] + [f"{v:.3f}" for v in self.recall_at.values()]
        widths = [max(len(h), len(v)) for h, v in zip(heads, vals)]
        line1 = "  ".join(h.rjust(w) for h, w in zip(heads, widths))
        line2 = "  ".join(v.rjust(w) for v, w in zip(vals, widths))
        return f"queries: {self.n_queries}\n{line1}\n{line2}\n"


def evaluate(preds: Iterable[RankingResult], rel, hit_ks: Sequence[int] = HIT_KS,
             recall_ks: Sequence[int] = RECALL_KS, strict: bool = True) -> MetricReport:
    """Unweighted means over queries.

    ``rel`` maps query -> relevance list (a RelevanceTable works). In strict
    mode every query of ``rel`` must have a prediction.
    """
    rows = rel.rows if hasattr(rel, "rows") else rel
    by_query: dict[str, RankingResult] = {}
    for p in preds:
        if p.query in by_query:
            raise EvalError(f"duplicate predictions for query {p.query!r}")
        if p.query not in rows:
            raise EvalError(f"prediction for unknown query {p.query!r}")
        if not rows[p.query]:
            raise EvalError(f"query {p.query!r} has an empty relevance list")
        by_query[p.query] = p
    if strict:
        missing = [q for q in rows if q not in by_query]
        if missing:
            raise EvalError(f"{len(missing)} queries lack predictions, e.g. {missing[:3]}")
    if not by_query:
        raise EvalError("no predictions to evaluate")
    n = len(by_query)
    hit = {k: sum(hit_at_k(p, rows[q], k) for q, p in by_query.items()) / n for k in hit_ks}
    rec = {k: sum(recall_at_k(p, rows[q], k) for q, p in by_query.items()) / n for k in recall_ks}
    return MetricReport(hit, rec, n)


def random_ranker_recall(n_candidates: int, k: int) -> float:
    """Expected recall@k of a uniformly random ranking (hypergeometric mean / list length)."""
    return min(k, n_candidates) / n_candidates


# --- files --------------------------------------------------------------------

def dump_predictions(preds: Iterable[RankingResult]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for p in preds:
        for rank, (cand, score) in enumerate(p.ranked, 1):
            w.writerow((p.query, rank, cand, repr(score)))
    return buf.getvalue()


def parse_predictions(text: str) -> list[RankingResult]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or tuple(header) != CSV_HEADER:
        raise FormatError(f"line 1: expected header {','.join(CSV_HEADER)}")
    blocks: dict[str, list[tuple[str, float]]] = {}
    for row in reader:
        lineno = reader.line_num
        if not row:
            continue
        if len(row) != 4:
            raise FormatError(f"line {lineno}: expected 4 fields, got {len(row)}")
        q, rank_s, cand, score_s = row
        try:
            rank = int(rank_s)
            score = float(score_s)
        except ValueError:
            raise FormatError(f"line {lineno}: bad rank or score") from None
        block = blocks.setdefault(q, [])
        if rank != len(block) + 1:
            raise FormatError(f"line {lineno}: rank {rank} breaks the contiguous 1-based sequence for {q!r}")
        block.append((cand, score))
    out = []
    for q, ranked in blocks.items():
        try:
            out.append(RankingResult(q, tuple(ranked)))
        except EvalError as exc:
            raise FormatError(str(exc)) from None
    return out


def save_predictions(preds: Iterable[RankingResult], path) -> None:
    write_file(path, dump_predictions(preds).encode("utf-8"))


def load_predictions(path) -> list[RankingResult]:
    return parse_predictions(read_file(path).decode("utf-8"))


def save_report(report: MetricReport, path) -> None:
    write_file(path, report.to_csv().encode("utf-8"))
