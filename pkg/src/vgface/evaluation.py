"""Leave-one-out retrieval protocol and the ARP/ARR/F-score/ANMRR metrics.

Every record becomes the probe once, with all remaining records as the
gallery.  Relevant items are the other images of the probe's subject; the
probe itself is excluded both from the gallery and from the relevant count.

Precision and recall average in two levels: first the mean over each
subject's queries (MP/MR), then the unweighted mean of those per-subject
means (ARP/ARR).  On unbalanced datasets this differs from a flat mean
over queries, deliberately.

ANMRR follows the MPEG-7 definition.  For a query with NG relevant items
and K = min(4*NG, 2*GTM):

    Rank(k) = rank of the k-th relevant item, if within the horizon,
              else 1.25 * K
    AVR  = mean of Rank over the NG items
    MRR  = AVR - 0.5 - NG / 2
    NMRR = MRR / (1.25 * K - 0.5 - 0.5 * NG)

and ANMRR is the mean NMRR over queries.  The horizon is K, optionally
tightened by a retrieved-window W (items ranked beyond W take the penalty
rank even when inside K).  0 is perfect, 1 is a total miss.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .descriptor import Descriptor
from .errors import FormatError, ShapeError
from .similarity import DistanceKind, gallery_distances


@dataclass(frozen=True)
class FaceRecord:
    """One database entry: a subject label plus an image path or matrix row."""

    subject: str
    path: str | None = None
    row: int | None = None


def load_manifest_records(path) -> list[FaceRecord]:
    """Parse a JSON array of {"path"|"descriptor", "subject"} objects."""
    try:
        entries = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: not valid JSON: {e}") from None
    if not isinstance(entries, list):
        raise FormatError(f"{path}: manifest must be a JSON array")
    records = []
    for pos, entry in enumerate(entries):
        if not isinstance(entry, dict) or "subject" not in entry:
            raise FormatError(f"{path}: entry {pos} needs a 'subject' field")
        subject = str(entry["subject"])
        if "path" in entry:
            records.append(FaceRecord(subject=subject, path=str(entry["path"])))
        elif "descriptor" in entry:
            records.append(FaceRecord(subject=subject, row=int(entry["descriptor"])))
        else:
            raise FormatError(f"{path}: entry {pos} needs either 'path' or 'descriptor'")
    return records


class DatasetManifest:
    """Ordered list of face records driving the leave-one-out protocol."""

    def __init__(self, records: Iterable[FaceRecord]):
        self.records = tuple(records)
        if len(self.records) < 2:
            raise ValueError("a manifest needs at least 2 records")

    def __len__(self) -> int:
        return len(self.records)

    def subjects(self) -> list[str]:
        return [r.subject for r in self.records]

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        try:
            return cls(load_manifest_records(path))
        except ValueError as e:
            raise FormatError(f"{path}: {e}") from None


def precision_recall(retrieved: Sequence[int], relevant: set, m: int) -> tuple[float, float]:
    """Precision and recall of the top-m retrieved ids against a relevant set."""
    if m < 1:
        raise ValueError(f"cutoff must be >= 1, got {m}")
    if not relevant:
        raise ValueError("relevant set is empty: query must be skipped")
    hits = sum(1 for r in retrieved[:m] if r in relevant)
    return hits / m, hits / len(relevant)


def aggregate(per_subject: Mapping[str, Sequence[tuple[float, float]]]) -> tuple[float, float]:
    """Two-level average: per-subject means first, then across subjects."""
    if not per_subject:
        raise ValueError("no subjects to aggregate")
    mps = []
    mrs = []
    for pairs in per_subject.values():
        if not pairs:
            raise ValueError("every subject must contribute at least one query")
        mps.append(sum(p for p, _ in pairs) / len(pairs))
        mrs.append(sum(r for _, r in pairs) / len(pairs))
    return sum(mps) / len(mps), sum(mrs) / len(mrs)


def f_score(arp: float, arr: float) -> float:
    """Harmonic mean of ARP and ARR; 0 when both are 0."""
    if arp == 0.0 and arr == 0.0:
        return 0.0
    return 2.0 * arp * arr / (arp + arr)


@dataclass(frozen=True)
class AnmrrParams:
    """Per-query rank-penalty parameters of the MPEG-7 metric."""

    ng: int
    gtm: int
    window: int | None = None

    def __post_init__(self):
        if self.ng < 1:
            raise ValueError(f"NG must be >= 1, got {self.ng}")
        if self.gtm < self.ng:
            raise ValueError(f"GTM {self.gtm} cannot be below NG {self.ng}")

    @property
    def k(self) -> int:
        return min(4 * self.ng, 2 * self.gtm)

    @property
    def penalty_rank(self) -> float:
        return 1.25 * self.k

    @property
    def horizon(self) -> int:
        return self.k if self.window is None else min(self.k, self.window)


def _nmrr(ranks: Sequence[int], params: AnmrrParams) -> float:
    ng = params.ng
    total = 0.0
    for rank in ranks:
        total += rank if rank <= params.horizon else params.penalty_rank
    avr = total / ng
    mrr = avr - 0.5 - ng / 2.0
    denom = params.penalty_rank - 0.5 - 0.5 * ng
    if denom <= 0:
        raise ArithmeticError(f"degenerate NMRR denominator for NG={ng}")
    return mrr / denom


def anmrr(relevant_ranks_per_query: Sequence[Sequence[int]],
          window: int | None = None) -> float:
    """Average NMRR over queries, given each query's relevant-item ranks.

    `relevant_ranks_per_query[q]` lists the 1-based ranks of all NG(q)
    relevant items of query q in its full gallery ranking.
    """
    if not relevant_ranks_per_query:
        raise ValueError("no queries")
    gtm = max(len(r) for r in relevant_ranks_per_query)
    total = 0.0
    for ranks in relevant_ranks_per_query:
        params = AnmrrParams(ng=len(ranks), gtm=gtm, window=window)
        total += _nmrr(ranks, params)
    return total / len(relevant_ranks_per_query)


@dataclass
class MetricsReport:
    """Per-cutoff metrics (fractions in [0, 1]) with the run configuration."""

    variant: str
    distance: str
    cutoffs: tuple[int, ...]
    arp: dict[int, float]
    arr: dict[int, float]
    f: dict[int, float]
    anmrr: dict[int, float]
    per_subject: dict[int, dict[str, tuple[float, float]]]
    num_queries: int
    num_subjects: int
    skipped_queries: int
    ties_detected: bool
    anmrr_window: str

    def to_json_dict(self) -> dict:
        """Percentage-valued summary matching the CSV output convention."""
        return {
            "variant": self.variant,
            "distance": self.distance,
            "cutoffs": list(self.cutoffs),
            "arp_pct": {str(m): 100.0 * v for m, v in self.arp.items()},
            "arr_pct": {str(m): 100.0 * v for m, v in self.arr.items()},
            "f_score_pct": {str(m): 100.0 * v for m, v in self.f.items()},
            "anmrr_pct": {str(m): 100.0 * v for m, v in self.anmrr.items()},
            "num_queries": self.num_queries,
            "num_subjects": self.num_subjects,
            "skipped_queries": self.skipped_queries,
            "ties_detected": self.ties_detected,
            "anmrr_window": self.anmrr_window,
            "per_subject": {
                str(m): {s: {"mp": mp, "mr": mr} for s, (mp, mr) in by_subject.items()}
                for m, by_subject in self.per_subject.items()
            },
        }


@dataclass(frozen=True)
class _ProbeResult:
    subject: str
    hits: tuple[int, ...]          # relevant hits within each cutoff
    ng: int
    relevant_ranks: tuple[int, ...]
    ties: bool


def _evaluate_probe(matrix: np.ndarray, subjects: np.ndarray, i: int,
                    kind: DistanceKind, cutoffs: Sequence[int]) -> _ProbeResult | None:
    dists = gallery_distances(kind, matrix[i], matrix)
    dists[i] = np.inf  # probe never ranks in its own gallery
    order = np.argsort(dists, kind="stable")
    order = order[order != i]
    rel_mask = subjects[order] == subjects[i]
    ng = int(rel_mask.sum())
    if ng == 0:
        return None
    gallery_dists = dists[order]
    ties = bool(np.unique(gallery_dists).size < gallery_dists.size)
    hits = tuple(int(rel_mask[:m].sum()) for m in cutoffs)
    relevant_ranks = tuple(int(r) for r in (np.nonzero(rel_mask)[0] + 1))
    return _ProbeResult(subject=str(subjects[i]), hits=hits, ng=ng,
                        relevant_ranks=relevant_ranks, ties=ties)


def _descriptor_matrix(descriptors) -> tuple[np.ndarray, str]:
    if isinstance(descriptors, np.ndarray):
        matrix = descriptors
        label = "precomputed"
    else:
        items = list(descriptors)
        if items and isinstance(items[0], Descriptor):
            label = items[0].variant
            matrix = np.stack([d.values.data for d in items])
        else:
            matrix = np.stack([np.asarray(d) for d in items])
            label = "precomputed"
    if matrix.ndim != 2:
        raise ShapeError(f"descriptor matrix must be 2-D, got shape {matrix.shape}")
    return matrix.astype(np.float64), label


def run_experiment(manifest: DatasetManifest, descriptors,
                   distance_kind: DistanceKind,
                   cutoffs: Sequence[int] = (1, 5, 10),
                   anmrr_window: int | str | None = "cutoff",
                   threads: int = 1,
                   variant_label: str | None = None) -> MetricsReport:
    """Leave-one-out retrieval over the manifest; metrics at every cutoff.

    `anmrr_window` is "cutoff" (window follows each cutoff m), None/"none"
    (unwindowed) or a fixed integer window.  Subjects with a single image
    cannot be probes and are skipped, counted in the report.  The result is
    identical for any `threads` value.
    """
    matrix, label = _descriptor_matrix(descriptors)
    if variant_label is not None:
        label = variant_label
    if matrix.shape[0] != len(manifest):
        raise ShapeError(
            f"{len(manifest)} manifest records but {matrix.shape[0]} descriptors"
        )
    cutoffs = tuple(int(m) for m in cutoffs)
    if not cutoffs or any(m < 1 for m in cutoffs):
        raise ValueError(f"cutoffs must be positive, got {cutoffs}")
    subjects = np.asarray(manifest.subjects(), dtype=object)

    indices = range(len(manifest))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(
                lambda i: _evaluate_probe(matrix, subjects, i, distance_kind, cutoffs),
                indices))
    else:
        results = [_evaluate_probe(matrix, subjects, i, distance_kind, cutoffs)
                   for i in indices]

    retained = [r for r in results if r is not None]
    skipped = len(results) - len(retained)
    if not retained:
        raise ValueError("no evaluable queries: every subject has a single image")

    per_subject_pairs: dict[int, dict[str, list[tuple[float, float]]]] = {
        m: {} for m in cutoffs
    }
    for r in retained:
        for m, hit in zip(cutoffs, r.hits):
            per_subject_pairs[m].setdefault(r.subject, []).append(
                (hit / m, hit / r.ng))

    arp: dict[int, float] = {}
    arr: dict[int, float] = {}
    f: dict[int, float] = {}
    anmrr_by_cutoff: dict[int, float] = {}
    per_subject: dict[int, dict[str, tuple[float, float]]] = {}
    ranks_per_query = [r.relevant_ranks for r in retained]
    for m in cutoffs:
        arp_m, arr_m = aggregate(per_subject_pairs[m])
        arp[m] = arp_m
        arr[m] = arr_m
        f[m] = f_score(arp_m, arr_m)
        if anmrr_window == "cutoff":
            window = m
        elif anmrr_window in (None, "none"):
            window = None
        else:
            window = int(anmrr_window)
        anmrr_by_cutoff[m] = anmrr(ranks_per_query, window=window)
        per_subject[m] = {
            s: (sum(p for p, _ in pairs) / len(pairs),
                sum(q for _, q in pairs) / len(pairs))
            for s, pairs in sorted(per_subject_pairs[m].items())
        }

    return MetricsReport(
        variant=label,
        distance=str(distance_kind),
        cutoffs=cutoffs,
        arp=arp,
        arr=arr,
        f=f,
        anmrr=anmrr_by_cutoff,
        per_subject=per_subject,
        num_queries=len(retained),
        num_subjects=len({r.subject for r in retained}),
        skipped_queries=skipped,
        ties_detected=any(r.ties for r in retained),
        anmrr_window=("cutoff" if anmrr_window == "cutoff"
                      else "none" if anmrr_window in (None, "none")
                      else str(int(anmrr_window))),
    )
