"""Evaluation kernels: multilabel classification scores, lexical and
embedding text similarity, and chance-corrected agreement coefficients.

Everything here is pure and deterministic.  The multilabel metrics binarize
each statement against the full vocabulary; "weighted" means weighted by
gold support per label, and labels that never occur in the gold carry zero
weight.
"""

from __future__ import annotations

import csv
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Protocol, Sequence


class MetricError(Exception):
    pass


class EmptyCorpus(MetricError):
    pass


class EmptyText(MetricError):
    pass


class ProviderFailure(MetricError):
    pass


class InsufficientData(MetricError):
    pass


class RaterCountMismatch(MetricError):
    pass


class DegenerateMarginals(MetricError):
    pass


class LengthMismatch(MetricError):
    pass


class ZeroVariance(MetricError):
    pass


@dataclass(frozen=True)
class LabelPrediction:
    label: str
    confidence: float
    rank: int


@dataclass(frozen=True)
class StatementPredictions:
    statement_id: str
    gold: frozenset[str]
    predicted: tuple[LabelPrediction, ...]

    def predicted_labels(self) -> frozenset[str]:
        return frozenset(p.label for p in self.predicted)

    def top_k_labels(self, k: int) -> list[str]:
        return [p.label for p in sorted(self.predicted, key=lambda p: p.rank)[:k]]


PredictionSet = Sequence[StatementPredictions]


# -- multilabel metrics ------------------------------------------------------

def _binarize(preds: PredictionSet, vocabulary: Sequence[str]):
    gold = [[1 if label in item.gold else 0 for label in vocabulary] for item in preds]
    pred = [[1 if label in item.predicted_labels() else 0 for label in vocabulary] for item in preds]
    return gold, pred


def _per_label_counts(preds: PredictionSet, label: str) -> tuple[int, int, int, int]:
    tp = fp = fn = tn = 0
    for item in preds:
        g = label in item.gold
        p = label in item.predicted_labels()
        if g and p:
            tp += 1
        elif not g and p:
            fp += 1
        elif g and not p:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def weighted_f1(preds: PredictionSet, vocabulary: Sequence[str]) -> float:
    """Support-weighted mean of one-vs-rest F1 over the vocabulary."""
    if not preds:
        raise EmptyCorpus("no statements")
    total_support = 0
    acc = 0.0
    for label in vocabulary:
        tp, fp, fn, _ = _per_label_counts(preds, label)
        support = tp + fn
        if support == 0:
            continue
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / support
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        acc += support * f1
        total_support += support
    return acc / total_support if total_support else 0.0


def weighted_accuracy(preds: PredictionSet, vocabulary: Sequence[str]) -> float:
    """Support-weighted mean of one-vs-rest accuracy over the vocabulary."""
    if not preds:
        raise EmptyCorpus("no statements")
    total_support = 0
    acc = 0.0
    for label in vocabulary:
        tp, fp, fn, tn = _per_label_counts(preds, label)
        support = tp + fn
        if support == 0:
            continue
        accuracy = (tp + tn) / len(preds)
        acc += support * accuracy
        total_support += support
    return acc / total_support if total_support else 0.0


def hamming_loss(preds: PredictionSet, vocabulary: Sequence[str]) -> float:
    """Fraction of (statement, label) cells assigned the wrong way."""
    if not preds:
        raise EmptyCorpus("no statements")
    if not vocabulary:
        raise EmptyCorpus("empty vocabulary")
    gold, pred = _binarize(preds, vocabulary)
    wrong = sum(
        1
        for row_g, row_p in zip(gold, pred)
        for g, p in zip(row_g, row_p)
        if g != p
    )
    return wrong / (len(preds) * len(vocabulary))


def top_k_accuracy(preds: PredictionSet, k: int) -> float:
    """Fraction of statements whose top-k ranked predictions hit the gold set."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not preds:
        raise EmptyCorpus("no statements")
    hits = sum(1 for item in preds if item.gold & frozenset(item.top_k_labels(k)))
    return hits / len(preds)


# -- text similarity ---------------------------------------------------------

def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    rows = len(a)
    cols = len(b)
    prev = [0] * (cols + 1)
    for i in range(1, rows + 1):
        cur = [0] * (cols + 1)
        for j in range(1, cols + 1):
            if a[i - 1] == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[cols]


def rouge_l_f1(candidate: str, reference: str) -> float:
    """LCS-based F1 over whitespace tokens."""
    cand = candidate.split()
    ref = reference.split()
    if not cand or not ref:
        raise EmptyText("both texts must tokenize to at least one token")
    lcs = _lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    precision = lcs / len(cand)
    recall = lcs / len(ref)
    return 2 * precision * recall / (precision + recall)


class EmbeddingProvider(Protocol):
    def embed(self, tokens: Sequence[str]) -> list[list[float]]:
        ...


class HashEmbeddingProvider:
    """Deterministic, model-free token embeddings derived from digests.

    Convenient for offline evaluation: identical tokens always map to the
    identical vector, components lie in [0, 1).
    """

    def __init__(self, dimension: int = 16):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        self.dimension = dimension

    def embed(self, tokens: Sequence[str]) -> list[list[float]]:
        out = []
        for token in tokens:
            vec = []
            counter = 0
            while len(vec) < self.dimension:
                digest = hashlib.sha256(f"{token}\x00{counter}".encode()).digest()
                vec.extend(b / 256.0 for b in digest)
                counter += 1
            out.append(vec[: self.dimension])
        return out


def _cosine(a: Sequence[float], b: Sequence[float]) -> float:
    dot = sum(x * y for x, y in zip(a, b))
    na = math.sqrt(sum(x * x for x in a))
    nb = math.sqrt(sum(y * y for y in b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return dot / (na * nb)


def embedding_score_f1(candidate: str, reference: str, provider: EmbeddingProvider) -> float:
    """Greedy token-matching similarity, harmonic mean of both directions."""
    cand = candidate.split()
    ref = reference.split()
    if not cand or not ref:
        raise EmptyText("both texts must tokenize to at least one token")
    try:
        cand_vecs = provider.embed(cand)
        ref_vecs = provider.embed(ref)
    except Exception as exc:  # provider boundary
        raise ProviderFailure(str(exc)) from exc
    if len(cand_vecs) != len(cand) or len(ref_vecs) != len(ref):
        raise ProviderFailure("provider returned the wrong number of vectors")
    recall = sum(max(_cosine(r, c) for c in cand_vecs) for r in ref_vecs) / len(ref_vecs)
    precision = sum(max(_cosine(c, r) for r in ref_vecs) for c in cand_vecs) / len(cand_vecs)
    if precision + recall == 0.0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


# -- rating matrices ---------------------------------------------------------

@dataclass
class RatingMatrix:
    """Items x raters grid of ordinal scores on a 1..scale_max scale.

    ``None`` marks a missing rating; only Krippendorff's alpha tolerates
    missing entries.
    """

    values: list[list[Optional[int]]]
    scale_max: int

    def __post_init__(self):
        widths = {len(row) for row in self.values}
        if len(widths) > 1:
            raise ValueError("ragged rating matrix")
        for row in self.values:
            for v in row:
                if v is not None and not 1 <= v <= self.scale_max:
                    raise ValueError(f"rating {v} outside scale 1..{self.scale_max}")

    @property
    def n_items(self) -> int:
        return len(self.values)

    @property
    def n_raters(self) -> int:
        return len(self.values[0]) if self.values else 0

    def column(self, rater: int) -> list[Optional[int]]:
        return [row[rater] for row in self.values]

    def complete_pair(self) -> tuple[list[int], list[int]]:
        if self.n_raters != 2:
            raise RaterCountMismatch(f"need exactly 2 raters, got {self.n_raters}")
        a, b = [], []
        for row in self.values:
            if row[0] is None or row[1] is None:
                raise RaterCountMismatch("missing entries are not allowed here")
            a.append(row[0])
            b.append(row[1])
        return a, b

    @classmethod
    def from_csv(cls, path: str | Path, scale_max: Optional[int] = None) -> "RatingMatrix":
        """Rows are items, columns are raters; empty cells mean missing.

        A non-numeric first row is treated as a header and skipped.
        """
        rows: list[list[Optional[int]]] = []
        with open(path, newline="", encoding="utf-8") as fh:
            for raw in csv.reader(fh):
                if not raw:
                    continue
                cells = [c.strip() for c in raw]
                if not rows and any(c and not _intish(c) for c in cells):
                    continue  # header row
                rows.append([int(c) if c else None for c in cells])
        observed = [v for row in rows for v in row if v is not None]
        if not observed:
            raise InsufficientData(f"{path}: no ratings")
        return cls(values=rows, scale_max=scale_max or max(observed))


def _intish(text: str) -> bool:
    try:
        int(text)
        return True
    except ValueError:
        return False


# -- Krippendorff's alpha ----------------------------------------------------

ALPHA_LEVELS = ("nominal", "ordinal", "interval")


def krippendorff_alpha(ratings: RatingMatrix, level: str = "ordinal") -> float:
    """Chance-corrected agreement from the coincidence matrix.

    Pairs only co-rated values within an item, so missing entries are fine.
    ``level`` picks the squared-difference function: nominal (0/1), ordinal
    (cumulative marginals), or interval (squared value difference).
    """
    if level not in ALPHA_LEVELS:
        raise ValueError(f"level must be one of {ALPHA_LEVELS}")

    units = [[v for v in row if v is not None] for row in ratings.values]
    units = [u for u in units if len(u) >= 2]
    if len(units) < 1:
        raise InsufficientData("need at least one item rated by two raters")

    categories = sorted({v for u in units for v in u})
    coincidence: dict[tuple[int, int], float] = {}
    for unit in units:
        m = len(unit)
        for i, a in enumerate(unit):
            for j, b in enumerate(unit):
                if i == j:
                    continue
                coincidence[(a, b)] = coincidence.get((a, b), 0.0) + 1.0 / (m - 1)
    marginals = {c: sum(coincidence.get((c, k), 0.0) for k in categories) for c in categories}
    n = sum(marginals.values())
    if n <= 1:
        raise InsufficientData("not enough pairable ratings")

    def delta2(c: int, k: int) -> float:
        if c == k:
            return 0.0
        if level == "nominal":
            return 1.0
        if level == "interval":
            return float((c - k) ** 2)
        lo, hi = min(c, k), max(c, k)
        between = sum(marginals[g] for g in categories if lo <= g <= hi)
        return (between - (marginals[c] + marginals[k]) / 2.0) ** 2

    d_observed = sum(
        coincidence.get((c, k), 0.0) * delta2(c, k)
        for c in categories
        for k in categories
        if c < k
    )
    d_expected = sum(
        marginals[c] * marginals[k] * delta2(c, k)
        for c in categories
        for k in categories
        if c < k
    )
    if d_expected == 0.0:
        raise InsufficientData("expected disagreement is zero")
    return 1.0 - (n - 1) * d_observed / d_expected


# -- Cohen's kappa -----------------------------------------------------------

KAPPA_WEIGHTINGS = ("unweighted", "linear", "quadratic")


def cohen_kappa(ratings: RatingMatrix, weighting: str = "unweighted") -> float:
    """Two-rater weighted kappa: 1 - sum(w*O) / sum(w*E).

    Weights on the 1..m scale: 0/1 disagreement, |i-j|/(m-1), or
    ((i-j)/(m-1))^2.  A rater who uses a single category makes the statistic
    collapse (it no longer depends on the data), reported as
    DegenerateMarginals.
    """
    if weighting not in KAPPA_WEIGHTINGS:
        raise ValueError(f"weighting must be one of {KAPPA_WEIGHTINGS}")
    a, b = ratings.complete_pair()
    n = len(a)
    if n < 1:
        raise InsufficientData("empty rating matrix")
    m = ratings.scale_max
    if len(set(a)) == 1 or len(set(b)) == 1:
        raise DegenerateMarginals("a rater used a single category for every item")

    observed = [[0.0] * m for _ in range(m)]
    for x, y in zip(a, b):
        observed[x - 1][y - 1] += 1.0 / n
    row = [sum(observed[i][j] for j in range(m)) for i in range(m)]
    col = [sum(observed[i][j] for i in range(m)) for j in range(m)]

    def weight(i: int, j: int) -> float:
        if weighting == "unweighted":
            return 0.0 if i == j else 1.0
        if m == 1:
            return 0.0
        scaled = abs(i - j) / (m - 1)
        return scaled if weighting == "linear" else scaled**2

    num = sum(weight(i, j) * observed[i][j] for i in range(m) for j in range(m))
    den = sum(weight(i, j) * row[i] * col[j] for i in range(m) for j in range(m))
    if den == 0.0:
        raise DegenerateMarginals("chance-expected disagreement is zero")
    return 1.0 - num / den


def cohen_kappa_pairwise_mean(ratings: RatingMatrix, weighting: str = "unweighted") -> float:
    """Mean kappa over all rater pairs, for matrices with more than 2 raters."""
    if ratings.n_raters < 2:
        raise RaterCountMismatch("need at least 2 raters")
    if ratings.n_raters == 2:
        return cohen_kappa(ratings, weighting)
    values = []
    for i in range(ratings.n_raters):
        for j in range(i + 1, ratings.n_raters):
            pair = RatingMatrix(
                values=[[row[i], row[j]] for row in ratings.values],
                scale_max=ratings.scale_max,
            )
            values.append(cohen_kappa(pair, weighting))
    return sum(values) / len(values)


# -- Spearman's rho ----------------------------------------------------------

def _average_ranks(values: Sequence[float]) -> list[float]:
    order = sorted(range(len(values)), key=lambda i: values[i])
    ranks = [0.0] * len(values)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and values[order[j + 1]] == values[order[i]]:
            j += 1
        mean_rank = (i + j) / 2 + 1
        for idx in order[i : j + 1]:
            ranks[idx] = mean_rank
        i = j + 1
    return ranks


def spearman_rho(x: Sequence[float], y: Sequence[float]) -> float:
    """Pearson correlation of average ranks; ties share their mean rank."""
    if len(x) != len(y):
        raise LengthMismatch(f"{len(x)} != {len(y)}")
    if len(x) < 2:
        raise LengthMismatch("need at least 2 observations")
    rx = _average_ranks(x)
    ry = _average_ranks(y)
    mean_x = sum(rx) / len(rx)
    mean_y = sum(ry) / len(ry)
    dx = [v - mean_x for v in rx]
    dy = [v - mean_y for v in ry]
    var_x = sum(v * v for v in dx)
    var_y = sum(v * v for v in dy)
    if var_x == 0.0 or var_y == 0.0:
        raise ZeroVariance("ranks have no variance")
    cov = sum(a * b for a, b in zip(dx, dy))
    return cov / math.sqrt(var_x * var_y)


# -- predictions file --------------------------------------------------------

def load_predictions(path: str | Path) -> list[StatementPredictions]:
    """Read a JSON-lines predictions file.

    Each line: ``{"statement_id", "gold": [], "predicted": [{"label",
    "confidence"}]}`` with predictions already ranked best-first.
    """
    import json

    items: list[StatementPredictions] = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line:
            continue
        obj = json.loads(line)
        predicted = tuple(
            LabelPrediction(label=p["label"], confidence=float(p["confidence"]), rank=rank)
            for rank, p in enumerate(obj.get("predicted", []), 1)
        )
        items.append(
            StatementPredictions(
                statement_id=str(obj["statement_id"]),
                gold=frozenset(obj.get("gold", [])),
                predicted=predicted,
            )
        )
    if not items:
        raise EmptyCorpus(f"{path}: no prediction records")
    return items
