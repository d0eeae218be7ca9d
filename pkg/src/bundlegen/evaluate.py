"""Bundle-generation metrics and the human-evaluation sample export.

Session-level precision and recall count hit bundles: a predicted bundle of
at least two items that equals or is a subset of some ground-truth bundle in
its session.  Bundle-level coverage measures, for each hit, how much of its
matched ground-truth bundle it recovers.  All aggregation is done in exact
rational arithmetic; the reported floats are derived from the fractions.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Mapping, Sequence

from .dataset import GroundTruth
from .infer import SessionResult


def jaccard(a: frozenset, b: frozenset) -> float:
    """|a & b| / |a | b|, with the both-empty case pinned to 0."""
    union = a | b
    if not union:
        return 0.0
    return len(a & b) / len(union)


def is_hit(
    pred_bundle: frozenset, gt_bundles: Sequence[frozenset]
) -> tuple[bool, int | None]:
    """A hit needs >= 2 items and a ground-truth superset.

    The matched bundle is the superset with the highest Jaccard similarity;
    ties go to the smaller bundle, then to annotation order.
    """
    if len(pred_bundle) < 2:
        return False, None
    candidates = [
        (-jaccard(pred_bundle, g), len(g), gi)
        for gi, g in enumerate(gt_bundles)
        if pred_bundle <= g
    ]
    if not candidates:
        return False, None
    candidates.sort()
    return True, candidates[0][2]


def session_metrics(
    preds: Sequence[frozenset], gts: Sequence[frozenset]
) -> tuple[Fraction, Fraction | None]:
    """Per-session (precision, recall) as exact fractions.

    Zero predictions give precision 0; recall is None for sessions without
    ground truth, which the run-level average then skips.
    """
    hits = sum(1 for p in preds if is_hit(p, gts)[0])
    precision = Fraction(hits, len(preds)) if preds else Fraction(0)
    recall = Fraction(hits, len(gts)) if gts else None
    return precision, recall


def bundle_coverage(hit_pred: frozenset, matched_gt: frozenset) -> Fraction:
    """|hit| / |matched ground truth|; the hit must be a subset."""
    if not hit_pred <= matched_gt:
        raise ValueError("coverage is only defined for a hit and its matched bundle")
    return Fraction(len(hit_pred), len(matched_gt))


@dataclass(frozen=True)
class HitRecord:
    session_id: str
    pred_index: int
    gt_index: int
    coverage: Fraction


@dataclass
class SessionBreakdown:
    session_id: str
    precision: Fraction
    recall: Fraction | None
    hits: int
    predicted: int
    ground_truth: int


@dataclass
class EvalReport:
    precision: Fraction
    recall: Fraction
    coverage: Fraction
    sessions: dict[str, SessionBreakdown] = field(default_factory=dict)
    hit_bundles: list[HitRecord] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "precision": float(self.precision),
            "recall": float(self.recall),
            "coverage": float(self.coverage),
            "precision_exact": str(self.precision),
            "recall_exact": str(self.recall),
            "coverage_exact": str(self.coverage),
            "hit_bundle_count": len(self.hit_bundles),
            "sessions": {
                sid: {
                    "precision": float(b.precision),
                    "recall": None if b.recall is None else float(b.recall),
                    "hits": b.hits,
                    "predicted": b.predicted,
                    "ground_truth": b.ground_truth,
                }
                for sid, b in self.sessions.items()
            },
        }

    def table(self) -> str:
        lines = [
            f"{'metric':<12}{'value':>10}",
            f"{'precision':<12}{float(self.precision):>10.4f}",
            f"{'recall':<12}{float(self.recall):>10.4f}",
            f"{'coverage':<12}{float(self.coverage):>10.4f}",
            f"{'sessions':<12}{len(self.sessions):>10d}",
            f"{'hit bundles':<12}{len(self.hit_bundles):>10d}",
        ]
        return "\n".join(lines)


def evaluate(
    results: Sequence[SessionResult],
    ground_truth: Mapping[str, GroundTruth],
    *,
    dedup_hits: bool = False,
) -> EvalReport:
    """Aggregate metrics over a run.

    Precision and recall average per-session values (recall only over
    sessions that have ground truth); coverage averages over the pooled hit
    bundles.  ``dedup_hits`` switches the numerator to at-most-one hit per
    ground-truth bundle; the default counts every hitting prediction, the
    literal reading of the formulas.
    """
    sessions: dict[str, SessionBreakdown] = {}
    hit_records: list[HitRecord] = []

    for result in results:
        gt = ground_truth.get(result.session_id)
        gt_sets = [b.items for b in gt.bundles] if gt else []
        preds = result.bundle_sets()

        hits = 0
        credited: set[int] = set()
        for pi, pred in enumerate(preds):
            hit, gi = is_hit(pred, gt_sets)
            if not hit:
                continue
            if dedup_hits:
                if gi in credited:
                    continue
                credited.add(gi)
            hits += 1
            hit_records.append(
                HitRecord(
                    session_id=result.session_id,
                    pred_index=pi,
                    gt_index=gi,
                    coverage=bundle_coverage(pred, gt_sets[gi]),
                )
            )
        precision = Fraction(hits, len(preds)) if preds else Fraction(0)
        recall = Fraction(hits, len(gt_sets)) if gt_sets else None
        sessions[result.session_id] = SessionBreakdown(
            session_id=result.session_id,
            precision=precision,
            recall=recall,
            hits=hits,
            predicted=len(preds),
            ground_truth=len(gt_sets),
        )

    n = len(sessions)
    precision_avg = (
        sum((b.precision for b in sessions.values()), Fraction(0)) / n if n else Fraction(0)
    )
    with_gt = [b.recall for b in sessions.values() if b.recall is not None]
    recall_avg = sum(with_gt, Fraction(0)) / len(with_gt) if with_gt else Fraction(0)
    coverage_avg = (
        sum((h.coverage for h in hit_records), Fraction(0)) / len(hit_records)
        if hit_records
        else Fraction(0)
    )
    return EvalReport(
        precision=precision_avg,
        recall=recall_avg,
        coverage=coverage_avg,
        sessions=sessions,
        hit_bundles=hit_records,
    )


@dataclass(frozen=True)
class HumanEvalCandidate:
    """One correctly generated bundle and the competing intent texts for it,
    keyed by their (hidden) source system."""

    bundle_titles: tuple[str, ...]
    intents: Mapping[str, str]


def export_human_eval(
    domain_candidates: Mapping[str, Sequence[HumanEvalCandidate]],
    n_per_domain: int,
    out_dir: str | Path,
    *,
    seed: int = 0,
    n_raters: int = 1,
) -> list[Path]:
    """Sample hit bundles per domain and write blinded rating sheets.

    Each rater sheet lists the bundle's products and the candidate intents in
    a shuffled order with their sources hidden; ``answer_key.tsv`` records
    which option came from which system.  Raises ValueError naming the
    deficit when a domain has fewer candidates than requested.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = random.Random(seed)

    sheet_rows: list[str] = []
    key_rows: list[str] = []
    for domain in sorted(domain_candidates):
        candidates = list(domain_candidates[domain])
        if len(candidates) < n_per_domain:
            raise ValueError(
                f"domain {domain!r}: requested {n_per_domain} samples "
                f"but only {len(candidates)} hit bundles are available"
            )
        chosen = rng.sample(range(len(candidates)), n_per_domain)
        for seq, index in enumerate(chosen, start=1):
            candidate = candidates[index]
            record_id = f"{domain}-{seq:03d}"
            sources = sorted(candidate.intents)
            rng.shuffle(sources)
            options = []
            for letter, source in zip("ABCDEFGH", sources):
                options.append(f"{letter}: {candidate.intents[source]}")
                key_rows.append(f"{record_id}\t{letter}\t{source}")
            sheet_rows.append(
                record_id + "\t" + "; ".join(candidate.bundle_titles) + "\t" + "\t".join(options)
            )

    written: list[Path] = []
    header = "record_id\tbundle\toptions\n"
    for rater in range(1, n_raters + 1):
        sheet = out_dir / f"rater_{rater:02d}.tsv"
        sheet.write_text(header + "\n".join(sheet_rows) + "\n", "utf-8")
        written.append(sheet)
    key = out_dir / "answer_key.tsv"
    key.write_text("record_id\toption\tsource\n" + "\n".join(key_rows) + "\n", "utf-8")
    written.append(key)
    return written
