"""Batch evaluation (filtered MRR per query type) and the scaling benchmark.

The evaluation protocol: each record brings a formula plus easy answers
(reachable over the observed graph) and hard answers (requiring missing
edges). A hard answer is ranked against all entities except the easy answers
and the other hard answers, with ties counted pessimistically; the reported
figure is the mean reciprocal rank over hard answers, averaged per query
type.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field

import numpy as np

from nsmp.engine import EngineConfig, QueryEngine
from nsmp.formulas import build_graph, parse, to_dnf


class EvalError(RuntimeError):
    """Raised when an evaluation run cannot produce a trustworthy report."""


@dataclass
class QueryRecord:
    formula: str
    type: str
    easy_answers: list[int]
    hard_answers: list[int]

    def to_json(self) -> str:
        return json.dumps(
            {
                "formula": self.formula,
                "type": self.type,
                "easy_answers": sorted(self.easy_answers),
                "hard_answers": sorted(self.hard_answers),
            },
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, line: str) -> "QueryRecord":
        obj = json.loads(line)
        record = cls(
            formula=obj["formula"],
            type=obj["type"],
            easy_answers=[int(i) for i in obj["easy_answers"]],
            hard_answers=[int(i) for i in obj["hard_answers"]],
        )
        if set(record.easy_answers) & set(record.hard_answers):
            raise ValueError("easy and hard answer sets overlap")
        return record


def write_queries(records: list[QueryRecord], path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.to_json() + "\n")


def mrr(scores: np.ndarray, easy: set[int], hard: set[int]) -> float:
    """Filtered mean reciprocal rank of the hard answers.

    For each hard answer a, the competitors are all entities minus the easy
    answers minus the other hard answers; rank(a) = 1 + |{competitors c != a
    with score(c) >= score(a)}| (ties count against a). Returns the mean of
    1/rank over the hard answers.
    """
    scores = np.asarray(scores, dtype=np.float64)
    easy, hard = set(easy), set(hard)
    if easy & hard:
        raise ValueError("easy and hard answer sets overlap")
    if not hard:
        raise ValueError("mrr is undefined for an empty hard answer set")
    for a in easy | hard:
        if not 0 <= a < scores.size:
            raise ValueError(f"answer id {a} out of range")
    competitors = np.ones(scores.size, dtype=bool)
    competitors[list(easy)] = False
    competitors[list(hard)] = False
    competitor_scores = scores[competitors]
    reciprocal = [
        1.0 / (1 + int(np.count_nonzero(competitor_scores >= scores[a]))) for a in sorted(hard)
    ]
    return float(np.mean(reciprocal))


@dataclass
class TemplateSummary:
    count: int = 0
    mrr_sum: float = 0.0
    latency_ms_sum: float = 0.0

    @property
    def mean_mrr(self) -> float:
        return self.mrr_sum / self.count if self.count else 0.0

    @property
    def mean_latency_ms(self) -> float:
        return self.latency_ms_sum / self.count if self.count else 0.0


@dataclass
class EvalReport:
    per_template: dict[str, TemplateSummary]
    evaluated: int
    skipped: list[tuple[int, str]]
    config: dict
    check_only: bool = False

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "check_only": self.check_only,
            "evaluated": self.evaluated,
            "skipped": [{"line": line, "reason": reason} for line, reason in self.skipped],
            "per_template": {
                name: {
                    "count": row.count,
                    "mrr": row.mean_mrr,
                    "latency_ms": row.mean_latency_ms,
                }
                for name, row in sorted(self.per_template.items())
            },
        }


def run_eval(queries_path: str, engine: QueryEngine, check_only: bool = False) -> EvalReport:
    """Evaluate every record in a query JSONL file.

    Unreadable or invalid records are reported and skipped; more than 10%
    skipped (or an empty file) fails the run. With check_only the formulas
    are parsed and their branch graphs built, but no inference runs — a fast
    well-formedness pass for converted datasets.
    """
    per_template: dict[str, TemplateSummary] = {}
    skipped: list[tuple[int, str]] = []
    evaluated = 0
    total = 0
    with open(queries_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            total += 1
            try:
                record = QueryRecord.from_json(line)
                formula = parse(record.formula, engine.store)
                for branch in to_dnf(formula):
                    build_graph(branch)
            except (ValueError, KeyError) as exc:
                skipped.append((lineno, str(exc)))
                continue
            row = per_template.setdefault(record.type, TemplateSummary())
            if check_only:
                row.count += 1
                evaluated += 1
                continue
            if not record.hard_answers:
                skipped.append((lineno, "record has no hard answers; mrr undefined"))
                continue
            start = time.perf_counter()
            result = engine.answer(formula)
            elapsed_ms = (time.perf_counter() - start) * 1e3
            row.count += 1
            row.mrr_sum += mrr(result.scores, set(record.easy_answers), set(record.hard_answers))
            row.latency_ms_sum += elapsed_ms
            evaluated += 1
    if total == 0:
        raise EvalError(f"{queries_path}: no query records")
    if len(skipped) > 0.10 * total:
        raise EvalError(
            f"{queries_path}: {len(skipped)}/{total} records skipped (over the 10% budget); "
            f"first: line {skipped[0][0]}: {skipped[0][1]}"
        )
    config = engine.config.__dict__.copy()
    return EvalReport(per_template, evaluated, skipped, config, check_only)


@dataclass
class BenchRow:
    template: str
    n_entities: int
    n_edges: int
    queries: int
    median_ms: float
    mean_ms: float


@dataclass
class BenchReport:
    rows: list[BenchRow]
    exponents: dict[str, dict[str, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "rows": [row.__dict__ for row in self.rows],
            "exponents": self.exponents,
        }


def bench_scaling(
    sizes: list[tuple[int, int]],
    templates: list[str],
    seed: int = 0,
    neural: bool = False,
    count: int = 20,
    n_relations: int = 4,
    rank: int = 32,
) -> BenchReport:
    """Median per-query latency of each template on synthetic graphs of the
    given (entities, edges) sizes, plus fitted log-log growth exponents of the
    median latency against |V| and against the edge count (when at least two
    distinct values are present). Timing is sequential, batch size 1.
    """
    from nsmp.oracle import generate_queries, random_store
    from nsmp.predictor import ComplexEmbeddingTable

    if sorted(sizes) != list(sizes):
        raise ValueError("sizes must be ascending")
    rows: list[BenchRow] = []
    for idx, (n_entities, n_edges) in enumerate(sizes):
        store = random_store(n_entities, n_relations, n_edges=n_edges, seed=seed + idx)
        table = None
        if neural:
            rng = np.random.default_rng(seed + 1000 + idx)
            table = ComplexEmbeddingTable(
                *(
                    (rng.standard_normal(shape) * 0.1).astype(np.float32)
                    for shape in (
                        (n_entities, rank),
                        (n_entities, rank),
                        (n_relations, rank),
                        (n_relations, rank),
                    )
                )
            )
        config = EngineConfig(neural_enabled=neural, lam=0.3 if neural else 1.0)
        engine = QueryEngine(store, table, config)
        for template in templates:
            generated = generate_queries(store, template, count, seed + idx, require="none")
            formulas = [parse(g.formula, store) for g in generated]
            latencies = []
            for formula in formulas:
                start = time.perf_counter()
                engine.answer(formula)
                latencies.append((time.perf_counter() - start) * 1e3)
            rows.append(
                BenchRow(
                    template,
                    n_entities,
                    n_edges,
                    len(formulas),
                    float(np.median(latencies)),
                    float(np.mean(latencies)),
                )
            )
    report = BenchReport(rows)
    for template in templates:
        template_rows = [r for r in rows if r.template == template]
        fits = {}
        for key, attr in (("entities", "n_entities"), ("edges", "n_edges")):
            xs = np.array([getattr(r, attr) for r in template_rows], dtype=np.float64)
            ys = np.array([r.median_ms for r in template_rows], dtype=np.float64)
            if len(set(xs.tolist())) >= 2 and np.all(ys > 0):
                slope = np.polyfit(np.log(xs), np.log(ys), 1)[0]
                fits[key] = float(slope)
        if fits:
            report.exponents[template] = fits
    return report
