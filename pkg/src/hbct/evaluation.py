"""Exact retrieval evaluation: CMC@k, mAP, compatibility metrics P_com / P_up,
and sequential-update compatibility matrices.

Lorentz embedding sets are ranked by geodesic distance, Euclidean sets by
cosine distance; mixing geometries between query and gallery is an error.
Galleries are scanned exactly (no ANN index); ties break toward the lower
gallery index so rankings are deterministic.
"""

from __future__ import annotations

import math
import struct
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateBaselineError, InvalidArgumentError
from .manifold import LorentzPoint

STORE_MAGIC = b"HBCT"
STORE_VERSION = 1
_GEOMETRIES = ("euclidean", "lorentz")


@dataclass
class EmbeddingSet:
    """Immutable gallery/query embeddings with labels and geometry metadata.

    For lorentz geometry, ``points`` rows are ambient coordinates
    [time, space...]; for euclidean they are plain d-vectors.
    """

    points: np.ndarray
    labels: np.ndarray
    geometry: str = "lorentz"
    curvature_K: float = 1.0
    generation_tag: int = 0

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.geometry not in _GEOMETRIES:
            raise InvalidArgumentError(f"unknown geometry {self.geometry!r}")
        if len(self.points) != len(self.labels):
            raise InvalidArgumentError("points and labels must have equal length")

    def __len__(self):
        return len(self.points)

    @classmethod
    def from_lorentz(cls, times, spaces, labels, curvature_K=1.0, generation_tag=0):
        pts = np.column_stack([np.asarray(times, dtype=np.float64),
                               np.asarray(spaces, dtype=np.float64)])
        return cls(pts, labels, "lorentz", curvature_K, generation_tag)


def _query_ambient(query, gallery: EmbeddingSet) -> np.ndarray:
    if isinstance(query, LorentzPoint):
        if gallery.geometry != "lorentz":
            raise InvalidArgumentError("Lorentz query against a Euclidean gallery")
        q = query.ambient
    else:
        q = np.asarray(query, dtype=np.float64)
    if q.shape != gallery.points.shape[1:]:
        raise InvalidArgumentError(
            f"query shape {q.shape} does not match gallery rows "
            f"{gallery.points.shape[1:]}")
    return q


def _distances_to_gallery(q: np.ndarray, gallery: EmbeddingSet) -> np.ndarray:
    if gallery.geometry == "lorentz":
        K = gallery.curvature_K
        inner = gallery.points[:, 1:] @ q[1:] - gallery.points[:, 0] * q[0]
        return np.arccosh(np.maximum(-K * inner, 1.0)) / math.sqrt(K)
    # cosine distance for Euclidean sets
    qn = np.linalg.norm(q)
    gn = np.linalg.norm(gallery.points, axis=1)
    denom = np.maximum(qn * gn, 1e-300)
    return 1.0 - (gallery.points @ q) / denom


def retrieve(query, gallery: EmbeddingSet) -> np.ndarray:
    """Gallery indices sorted by ascending distance, ties by ascending index."""
    if len(gallery) == 0:
        raise InvalidArgumentError("empty gallery")
    d = _distances_to_gallery(_query_ambient(query, gallery), gallery)
    return np.argsort(d, kind="stable")


def _check_pairing(queries: EmbeddingSet, gallery: EmbeddingSet):
    if queries.geometry != gallery.geometry:
        raise InvalidArgumentError(
            f"geometry mismatch: queries {queries.geometry}, gallery {gallery.geometry}")
    if len(gallery) == 0:
        raise InvalidArgumentError("empty gallery")


def _ranked_matches(queries: EmbeddingSet, gallery: EmbeddingSet):
    """Yield (query index, boolean match vector in rank order)."""
    _check_pairing(queries, gallery)
    self_mode = queries is gallery
    for qi in range(len(queries)):
        d = _distances_to_gallery(queries.points[qi], gallery)
        order = np.argsort(d, kind="stable")
        if self_mode:
            order = order[order != qi]
        yield qi, gallery.labels[order] == queries.labels[qi]


def cmc_at_k(queries: EmbeddingSet, gallery: EmbeddingSet, k: int) -> float:
    """Fraction of queries with a same-label gallery item in the top k."""
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    hits = 0
    total = 0
    for _, matches in _ranked_matches(queries, gallery):
        hits += bool(matches[:k].any())
        total += 1
    return hits / total


def mean_average_precision(queries: EmbeddingSet, gallery: EmbeddingSet) -> float:
    """mAP over queries; AP per query averages precision at each relevant rank."""
    aps = []
    skipped = 0
    for _, matches in _ranked_matches(queries, gallery):
        n_rel = int(matches.sum())
        if n_rel == 0:
            skipped += 1
            continue
        cum = np.cumsum(matches)
        precision_at = cum / np.arange(1, len(matches) + 1)
        aps.append(float(precision_at[matches].sum() / n_rel))
    if not aps:
        raise InvalidArgumentError("no query has a relevant gallery item")
    if skipped:
        warnings.warn(f"{skipped} queries had no relevant gallery item and were skipped")
    return float(np.mean(aps))


def p_com(metric_new_cross: float, metric_old_self: float, metric_star_self: float) -> float:
    """(cross - old_self) / (star_self - old_self), the compatibility gain."""
    denom = metric_star_self - metric_old_self
    if abs(denom) <= 1e-12:
        raise DegenerateBaselineError(
            "star and old self-retrieval anchors coincide; P_com undefined")
    return (metric_new_cross - metric_old_self) / denom


def p_up(metric_new_self: float, metric_star_self: float) -> float:
    """(new_self - star_self) / star_self, relative self-performance change."""
    if metric_star_self <= 1e-12:
        raise DegenerateBaselineError("star self-retrieval anchor is zero; P_up undefined")
    return (metric_new_self - metric_star_self) / metric_star_self


@dataclass
class CompatReport:
    """Raw retrieval anchors for one metric, plus the derived P_com / P_up."""

    metric: str
    self_value: float
    cross_value: float
    old_self_value: float
    star_self_value: float
    p_com: float
    p_up: float

    @classmethod
    def compute(cls, metric, self_value, cross_value, old_self_value, star_self_value):
        return cls(metric, self_value, cross_value, old_self_value, star_self_value,
                   p_com(cross_value, old_self_value, star_self_value),
                   p_up(self_value, star_self_value))

    def as_items(self):
        return [
            (f"{self.metric}.self", self.self_value),
            (f"{self.metric}.cross", self.cross_value),
            (f"{self.metric}.old_self", self.old_self_value),
            (f"{self.metric}.star_self", self.star_self_value),
            (f"{self.metric}.p_com", self.p_com),
            (f"{self.metric}.p_up", self.p_up),
        ]


def evaluate_metric(queries: EmbeddingSet, gallery: EmbeddingSet, metric: str) -> float:
    """metric is 'cmc@<k>' or 'map'."""
    if metric.startswith("cmc@"):
        return cmc_at_k(queries, gallery, int(metric[4:]))
    if metric == "map":
        return mean_average_precision(queries, gallery)
    raise InvalidArgumentError(f"unknown metric {metric!r}")


def compatibility_matrix(embeddings, star_embeddings, metric: str) -> np.ndarray:
    """N x N matrix of P_com across generations.

    ``embeddings`` holds one (query EmbeddingSet, gallery EmbeddingSet) pair
    per generation (same underlying items, embedded by that generation's
    model); ``star_embeddings`` the same for each generation's unaligned
    counterpart.  Entry (i, j) is P_com with queries embedded by generation i
    against the gallery of generation j: the old-self anchor is generation
    j's own retrieval, the star anchor is generation i's unaligned model.
    Diagonal entries are 0 by the self-anchor convention (the numerator
    vanishes identically), kept finite without dividing.
    """
    n = len(embeddings)
    if n < 2:
        raise InvalidArgumentError("need at least 2 generations")
    if len(star_embeddings) != n:
        raise InvalidArgumentError("need one star pairing per generation")
    self_vals = [evaluate_metric(q, g, metric) for q, g in embeddings]
    star_vals = [evaluate_metric(q, g, metric) for q, g in star_embeddings]
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            cross = evaluate_metric(embeddings[i][0], embeddings[j][1], metric)
            out[i, j] = p_com(cross, self_vals[j], star_vals[i])
    return out


# ---------------------------------------------------------------------------
# Embedding store file (byte layout documented in the README)

def save_embedding_set(path, es: EmbeddingSet):
    geom = _GEOMETRIES.index(es.geometry)
    count, width = es.points.shape
    with open(path, "wb") as f:
        f.write(STORE_MAGIC)
        f.write(struct.pack("<IIII", STORE_VERSION, geom, count, width))
        f.write(struct.pack("<di", es.curvature_K, es.generation_tag))
        for row, label in zip(es.points, es.labels):
            f.write(row.astype("<f8").tobytes())
            f.write(struct.pack("<i", int(label)))


def load_embedding_set(path) -> EmbeddingSet:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != STORE_MAGIC:
        raise InvalidArgumentError("not an HBCT embedding store (bad magic)")
    version, geom, count, width = struct.unpack_from("<IIII", data, 4)
    if version != STORE_VERSION:
        raise InvalidArgumentError(f"unsupported store version {version}")
    K, generation = struct.unpack_from("<di", data, 20)
    off = 32
    rowsize = 8 * width + 4
    points = np.empty((count, width))
    labels = np.empty(count, dtype=np.int64)
    for r in range(count):
        points[r] = np.frombuffer(data, "<f8", width, off)
        labels[r] = struct.unpack_from("<i", data, off + 8 * width)[0]
        off += rowsize
    return EmbeddingSet(points, labels, _GEOMETRIES[geom], K, generation)
