"""Retrieval metrics against brute-force dual implementations, compatibility
metric arithmetic, and the embedding store format."""

import math
import warnings

import numpy as np
import pytest

from hbct.errors import DegenerateBaselineError, InvalidArgumentError
from hbct.evaluation import (CompatReport, EmbeddingSet, cmc_at_k,
                             compatibility_matrix, evaluate_metric,
                             load_embedding_set, mean_average_precision, p_com,
                             p_up, retrieve, save_embedding_set)
from hbct.manifold import LorentzPoint, ManifoldConfig, expm_origin

MCFG = ManifoldConfig(1.0, 3)


def lorentz_set(rng, n, labels=None, tag=0):
    zs = rng.normal(size=(n, 3))
    pts = [expm_origin(z, MCFG) for z in zs]
    times = [p.time for p in pts]
    spaces = [p.space for p in pts]
    if labels is None:
        labels = rng.integers(0, 3, size=n)
    return EmbeddingSet.from_lorentz(times, spaces, labels, 1.0, tag)


# --------------------------------------------------------------------------
# Brute-force dual implementations

def brute_rank(q, gallery):
    ds = []
    for i in range(len(gallery)):
        g = gallery.points[i]
        if gallery.geometry == "lorentz":
            inner = float(g[1:] @ q[1:]) - g[0] * q[0]
            d = math.acosh(max(-gallery.curvature_K * inner, 1.0))
            d /= math.sqrt(gallery.curvature_K)
        else:
            d = 1.0 - float(g @ q) / max(np.linalg.norm(g) * np.linalg.norm(q), 1e-300)
        ds.append((d, i))
    return [i for _, i in sorted(ds, key=lambda t: (t[0], t[1]))]


def brute_cmc(queries, gallery, k):
    hits = 0
    for qi in range(len(queries)):
        order = brute_rank(queries.points[qi], gallery)
        if queries is gallery:
            order = [i for i in order if i != qi]
        hits += any(gallery.labels[i] == queries.labels[qi] for i in order[:k])
    return hits / len(queries)


def brute_map(queries, gallery):
    aps = []
    for qi in range(len(queries)):
        order = brute_rank(queries.points[qi], gallery)
        if queries is gallery:
            order = [i for i in order if i != qi]
        rel = [gallery.labels[i] == queries.labels[qi] for i in order]
        n_rel = sum(rel)
        if n_rel == 0:
            continue
        hits = 0
        ap = 0.0
        for rank, r in enumerate(rel, start=1):
            if r:
                hits += 1
                ap += hits / rank
        aps.append(ap / n_rel)
    return float(np.mean(aps))


# --------------------------------------------------------------------------

class TestRetrieve:
    def test_self_is_rank_zero(self):
        rng = np.random.default_rng(0)
        g = lorentz_set(rng, 10)
        for i in range(10):
            q = LorentzPoint(g.points[i, 0], g.points[i, 1:])
            assert retrieve(q, g)[0] == i

    def test_tie_breaks_to_lower_index(self):
        pts = np.array([[1.0, 0.0, 0.0], [math.cosh(1.0), math.sinh(1.0), 0.0],
                        [math.cosh(1.0), -math.sinh(1.0), 0.0]])
        g = EmbeddingSet(pts, [0, 1, 1], "lorentz", 1.0)
        order = retrieve(np.array([1.0, 0.0, 0.0]), g)
        assert list(order) == [0, 1, 2]

    def test_empty_gallery(self):
        g = EmbeddingSet(np.empty((0, 3)), np.empty(0, dtype=int), "lorentz")
        with pytest.raises(InvalidArgumentError):
            retrieve(np.array([1.0, 0.0, 0.0]), g)

    def test_matches_brute_force(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            g = lorentz_set(rng, int(rng.integers(3, 20)))
            q = expm_origin(rng.normal(size=3), MCFG)
            assert list(retrieve(q, g)) == brute_rank(q.ambient, g)

    def test_euclidean_cosine_path(self):
        rng = np.random.default_rng(2)
        pts = rng.normal(size=(8, 4))
        g = EmbeddingSet(pts, rng.integers(0, 2, size=8), "euclidean")
        q = rng.normal(size=4)
        assert list(retrieve(q, g)) == brute_rank(q, g)

    def test_geometry_mismatch(self):
        rng = np.random.default_rng(3)
        le = lorentz_set(rng, 4)
        eu = EmbeddingSet(rng.normal(size=(4, 4)), [0, 1, 0, 1], "euclidean")
        with pytest.raises(InvalidArgumentError):
            cmc_at_k(le, eu, 1)


class TestCmc:
    def test_two_per_class_fixture(self):
        # two tight clusters, two items each: the nearest other item shares
        # the label, so self-retrieval CMC@1 is 1
        zs = np.array([[1.0, 0.0, 0.0], [1.01, 0.0, 0.0],
                       [-1.0, 0.0, 0.0], [-1.01, 0.0, 0.0]])
        pts = [expm_origin(z, MCFG) for z in zs]
        g = EmbeddingSet.from_lorentz([p.time for p in pts],
                                      [p.space for p in pts], [0, 0, 1, 1])
        assert cmc_at_k(g, g, 1) == 1.0

    def test_saturation_at_large_k(self):
        rng = np.random.default_rng(4)
        q = lorentz_set(rng, 10, labels=rng.integers(0, 4, size=10))
        g = lorentz_set(rng, 12, labels=rng.integers(0, 2, size=12))
        present = np.isin(q.labels, np.unique(g.labels)).mean()
        assert cmc_at_k(q, g, len(g)) == pytest.approx(present)

    def test_monotone_in_k(self):
        rng = np.random.default_rng(5)
        q = lorentz_set(rng, 15)
        g = lorentz_set(rng, 20)
        vals = [cmc_at_k(q, g, k) for k in (1, 3, 5, 10)]
        assert all(a <= b for a, b in zip(vals, vals[1:]))

    def test_matches_brute_force(self):
        rng = np.random.default_rng(6)
        for _ in range(20):
            q = lorentz_set(rng, 8)
            g = lorentz_set(rng, 12)
            for k in (1, 3):
                assert cmc_at_k(q, g, k) == brute_cmc(q, g, k)

    def test_bad_k(self):
        rng = np.random.default_rng(7)
        g = lorentz_set(rng, 4)
        with pytest.raises(InvalidArgumentError):
            cmc_at_k(g, g, 0)


class TestMeanAveragePrecision:
    def test_all_relevant_first(self):
        zs = np.array([[0.1, 0.0, 0.0], [0.12, 0.0, 0.0], [3.0, 0.0, 0.0]])
        pts = [expm_origin(z, MCFG) for z in zs]
        g = EmbeddingSet.from_lorentz([p.time for p in pts],
                                      [p.space for p in pts], [0, 0, 1])
        q = EmbeddingSet.from_lorentz([pts[0].time], [pts[0].space], [0])
        assert mean_average_precision(q, g) == 1.0

    def test_single_relevant_rank_two(self):
        zs = np.array([[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.5, 0.0, 0.0]])
        pts = [expm_origin(z, MCFG) for z in zs]
        g = EmbeddingSet.from_lorentz([p.time for p in pts[1:]],
                                      [p.space for p in pts[1:]], [1, 0])
        q = EmbeddingSet.from_lorentz([pts[0].time], [pts[0].space], [0])
        assert mean_average_precision(q, g) == 0.5

    def test_matches_brute_force(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            q = lorentz_set(rng, 8)
            g = lorentz_set(rng, 12)
            assert mean_average_precision(q, g) == pytest.approx(
                brute_map(q, g), abs=1e-12)

    def test_zero_relevant_warns(self):
        rng = np.random.default_rng(9)
        q = lorentz_set(rng, 3, labels=[0, 0, 9])
        g = lorentz_set(rng, 4, labels=[0, 0, 1, 1])
        with warnings.catch_warnings(record=True) as w:
            warnings.simplefilter("always")
            mean_average_precision(q, g)
        assert any("skipped" in str(x.message) for x in w)

    def test_no_relevant_raises(self):
        rng = np.random.default_rng(10)
        q = lorentz_set(rng, 2, labels=[8, 9])
        g = lorentz_set(rng, 3, labels=[0, 1, 2])
        with pytest.raises(InvalidArgumentError):
            mean_average_precision(q, g)


class TestCompatibilityMetrics:
    def test_p_com_anchors(self):
        assert p_com(0.4, 0.4, 0.9) == 0.0
        assert p_com(0.9, 0.4, 0.9) == 1.0

    def test_p_com_reference_row(self):
        # cross 0.572, old self 0.425, unaligned-new self 0.722
        assert p_com(0.572, 0.425, 0.722) == pytest.approx(0.495, abs=0.01)

    def test_p_com_degenerate(self):
        with pytest.raises(DegenerateBaselineError):
            p_com(0.5, 0.7, 0.7)

    def test_p_up_anchors(self):
        assert p_up(0.5, 0.5) == 0.0
        assert p_up(0.55, 0.5) == pytest.approx(0.1, abs=1e-12)

    def test_p_up_reference_row(self):
        assert p_up(0.722, 0.722) == pytest.approx(-0.001, abs=2e-3)

    def test_p_up_degenerate(self):
        with pytest.raises(DegenerateBaselineError):
            p_up(0.5, 0.0)

    def test_report_recomputable(self):
        rep = CompatReport.compute("cmc@1", self_value=0.9, cross_value=0.6,
                                   old_self_value=0.5, star_self_value=0.95)
        assert rep.p_com == pytest.approx(
            (rep.cross_value - rep.old_self_value)
            / (rep.star_self_value - rep.old_self_value), abs=1e-12)
        assert rep.p_up == pytest.approx(
            (rep.self_value - rep.star_self_value) / rep.star_self_value, abs=1e-12)


class TestCompatibilityMatrix:
    def _pairs(self, rng, n_gen):
        pairs = []
        for tag in range(n_gen):
            labels = rng.integers(0, 3, size=10)
            q = lorentz_set(rng, 10, labels=labels, tag=tag)
            g = lorentz_set(rng, 10, labels=labels, tag=tag)
            pairs.append((q, g))
        return pairs

    def test_two_generations_reduce_to_p_com(self):
        rng = np.random.default_rng(11)
        pairs = self._pairs(rng, 2)
        stars = self._pairs(rng, 2)
        m = compatibility_matrix(pairs, stars, "map")
        self_1 = evaluate_metric(*pairs[0], "map")
        star_2 = evaluate_metric(*stars[1], "map")
        cross = evaluate_metric(pairs[1][0], pairs[0][1], "map")
        assert m[1, 0] == pytest.approx(p_com(cross, self_1, star_2), abs=1e-12)
        assert m[0, 0] == 0.0 and m[1, 1] == 0.0

    def test_needs_two_generations(self):
        rng = np.random.default_rng(12)
        pairs = self._pairs(rng, 1)
        with pytest.raises(InvalidArgumentError):
            compatibility_matrix(pairs, pairs, "map")


class TestEmbeddingStore:
    def test_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(13)
        es = lorentz_set(rng, 9, tag=3)
        path = tmp_path / "set.emb"
        save_embedding_set(path, es)
        back = load_embedding_set(path)
        assert np.array_equal(back.points, es.points)
        assert np.array_equal(back.labels, es.labels)
        assert back.geometry == es.geometry
        assert back.curvature_K == es.curvature_K
        assert back.generation_tag == 3

    def test_euclidean_round_trip(self, tmp_path):
        rng = np.random.default_rng(14)
        es = EmbeddingSet(rng.normal(size=(5, 4)), rng.integers(0, 2, size=5),
                          "euclidean", 1.0, 1)
        path = tmp_path / "set.emb"
        save_embedding_set(path, es)
        back = load_embedding_set(path)
        assert np.array_equal(back.points, es.points)
        assert back.geometry == "euclidean"

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.emb"
        path.write_bytes(b"XXXX" + b"\x00" * 40)
        with pytest.raises(InvalidArgumentError):
            load_embedding_set(path)

    def test_length_mismatch_rejected(self):
        with pytest.raises(InvalidArgumentError):
            EmbeddingSet(np.zeros((3, 2)), [0, 1], "euclidean")

    def test_unknown_geometry_rejected(self):
        with pytest.raises(InvalidArgumentError):
            EmbeddingSet(np.zeros((1, 2)), [0], "spherical")
