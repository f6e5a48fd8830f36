import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import map_at_r_oracle, random_instance

from bgbench import retrieval
from bgbench.errors import DegenerateInputError, DimensionMismatchError, FormatError
from bgbench.retrieval import EmbeddingSet


def _set(v, l):
    return EmbeddingSet(v, l)


@pytest.mark.parametrize("exclude_self", [True, False])
def test_map_at_r_matches_oracle(exclude_self):
    rng = np.random.default_rng(0)
    done = 0
    while done < 40:
        v, l = random_instance(rng)
        if exclude_self and np.bincount(l).max() < 2:
            continue
        e = _set(v, l)
        rep = retrieval.map_at_r(e, e, exclude_self=exclude_self)
        ap, p1, rp, skipped = map_at_r_oracle(v, l, v, l, exclude_self)
        assert rep.map_at_r == pytest.approx(ap, abs=1e-12)
        assert rep.precision_at_1 == pytest.approx(p1, abs=1e-12)
        assert rep.r_precision == pytest.approx(rp, abs=1e-12)
        assert rep.skipped_queries == skipped
        done += 1


def test_separate_query_and_reference_sets():
    rng = np.random.default_rng(1)
    qv, ql = random_instance(rng, max_n=20)
    rv, rl = random_instance(rng, max_n=30)
    d = min(qv.shape[1], rv.shape[1])
    qv, rv = qv[:, :d], rv[:, :d]
    qv /= np.linalg.norm(qv, axis=1, keepdims=True)
    rv /= np.linalg.norm(rv, axis=1, keepdims=True)
    ql, rl = ql % 3, rl % 3
    rep = retrieval.map_at_r(_set(qv, ql), _set(rv, rl))
    assert rep.map_at_r == pytest.approx(map_at_r_oracle(qv, ql, rv, rl)[0], abs=1e-12)


def test_perfect_clusters_score_one():
    v = np.zeros((6, 3))
    v[:3, 0] = 1
    v[3:, 1] = 1
    e = _set(v, [0, 0, 0, 1, 1, 1])
    rep = retrieval.map_at_r(e, e, exclude_self=True)
    assert (rep.map_at_r, rep.precision_at_1, rep.r_precision) == (1.0, 1.0, 1.0)


def test_hand_computed_example():
    # query 0 ranks [neg, pos, pos]: AP@R = (0 + 1/2) / 2 = 0.25
    q = _set([[1.0, 0.0]], [0])
    ref = _set([[1.0, 0.0], [0.6, 0.8], [0.0, 1.0]], [1, 0, 0])
    assert retrieval.map_at_r(q, ref).map_at_r == pytest.approx(0.25)


def test_ties_go_to_lower_index():
    # identical reference vectors: the lower index is ranked first
    q = _set([[1.0, 0.0]], [0])
    first_pos = _set([[0.0, 1.0], [0.0, 1.0]], [0, 1])
    first_neg = _set([[0.0, 1.0], [0.0, 1.0]], [1, 0])
    assert retrieval.map_at_r(q, first_pos).map_at_r == 1.0
    assert retrieval.map_at_r(q, first_neg).map_at_r == 0.0
    np.testing.assert_array_equal(retrieval.knn(q, first_neg), [[0, 1]])


def test_knn_excludes_self():
    rng = np.random.default_rng(2)
    v, l = random_instance(rng, max_n=10)
    e = _set(v, l)
    order = retrieval.knn(e, e, exclude_self=True)
    assert order.shape == (len(v), len(v) - 1)
    for i, row in enumerate(order):
        assert i not in row


def test_skips_queries_without_positives():
    v = np.eye(3)
    e = _set(v, [0, 0, 1])
    rep = retrieval.map_at_r(e, e, exclude_self=True)
    assert rep.skipped_queries == 1 and rep.num_queries == 2


def test_no_usable_queries():
    e = _set(np.eye(3), [0, 1, 2])
    with pytest.raises(DegenerateInputError):
        retrieval.map_at_r(e, e, exclude_self=True)


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatchError):
        retrieval.map_at_r(_set(np.eye(2), [0, 0]), _set(np.eye(3), [0, 0, 0]))


def test_embedding_set_validation():
    with pytest.raises(ValueError, match="norm"):
        EmbeddingSet([[1.0, 1.0]], [0])
    with pytest.raises(ValueError):
        EmbeddingSet([[1.0, 0.0]], [-1])
    with pytest.raises(ValueError):
        EmbeddingSet(np.ones((1, 1)), [0])


@given(st.integers(0, 2**32 - 1))
def test_invariant_under_rotation_and_permutation(seed):
    rng = np.random.default_rng(seed)
    v, l = random_instance(rng, max_n=30)
    if np.bincount(l).max() < 2:
        return
    q, _ = np.linalg.qr(rng.standard_normal((v.shape[1], v.shape[1])))
    perm = rng.permutation(len(v))
    base = retrieval.map_at_r(_set(v, l), _set(v, l), exclude_self=True).map_at_r
    rot = v @ q
    moved = retrieval.map_at_r(_set(rot[perm], l[perm]), _set(rot[perm], l[perm]), exclude_self=True).map_at_r
    assert moved == pytest.approx(base, abs=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_metrics_in_unit_interval(seed):
    v, l = random_instance(np.random.default_rng(seed))
    e = _set(v, l)
    try:
        rep = retrieval.map_at_r(e, e, exclude_self=True)
    except DegenerateInputError:
        return
    for x in (rep.map_at_r, rep.precision_at_1, rep.r_precision):
        assert 0.0 <= x <= 1.0
    assert rep.map_at_r <= rep.r_precision + 1e-12


def test_mean_std_and_comparison():
    mean, std = retrieval.mean_std([0.5, 0.6, 0.7, 0.8, 0.9])
    assert mean == pytest.approx(0.7)
    assert std == pytest.approx(np.std([0.5, 0.6, 0.7, 0.8, 0.9], ddof=1))
    assert retrieval.mean_std([0.3]) == (0.3, 0.0)
    s = retrieval.compare_clean_corrupted(0.8, [0.4, 0.6])
    assert s["corrupted_map_at_r_mean"] == pytest.approx(0.5)
    assert s["absolute_drop"] == pytest.approx(0.3)
    assert s["relative_drop"] == pytest.approx(0.375)
    assert retrieval.compare_clean_corrupted(0.0, [0.0])["relative_drop"] is None


def test_report_dict_roundtrip():
    e = _set(np.eye(4)[[0, 0, 1, 1]], [0, 0, 1, 1])
    rep = retrieval.map_at_r(e, e, exclude_self=True)
    again = retrieval.RetrievalReport.from_dict(rep.to_dict())
    assert again.to_dict() == rep.to_dict()


# ---- EMB1 ----


def _random_set(rng, n=10, d=5):
    v = rng.standard_normal((n, d))
    return EmbeddingSet(v / np.linalg.norm(v, axis=1, keepdims=True), rng.integers(0, 4, n))


def test_emb1_roundtrip_bytes(rng):
    e = _random_set(rng)
    data = retrieval.dumps_embeddings(e)
    assert data[:4] == b"EMB1" and len(data) == 12 + 10 * (8 + 4 * 5)
    again = retrieval.loads_embeddings(data)
    np.testing.assert_array_equal(again.labels, e.labels)
    np.testing.assert_allclose(again.vectors, e.vectors, atol=1e-7)
    assert retrieval.dumps_embeddings(again) == data


def test_emb1_file_roundtrip(tmp_path, rng):
    e = _random_set(rng)
    retrieval.save_embeddings(tmp_path / "e.emb", e)
    assert retrieval.dumps_embeddings(retrieval.load_embeddings(tmp_path / "e.emb")) == retrieval.dumps_embeddings(e)


def test_emb1_errors_name_offsets(rng):
    data = retrieval.dumps_embeddings(_random_set(rng))
    with pytest.raises(FormatError) as exc:
        retrieval.loads_embeddings(b"EMB2" + data[4:])
    assert exc.value.offset == 0
    with pytest.raises(FormatError) as exc:
        retrieval.loads_embeddings(data[:-1])
    assert exc.value.offset == 12 + 9 * 28 and "offset" in str(exc.value)
    with pytest.raises(FormatError) as exc:
        retrieval.loads_embeddings(data + b"\0")
    assert exc.value.offset == len(data)
    with pytest.raises(FormatError):
        retrieval.loads_embeddings(data[:7])
    # corrupt the first vector component of record 2
    broken = bytearray(data)
    broken[12 + 2 * 28 + 8 : 12 + 2 * 28 + 12] = np.float32(5.0).tobytes()
    with pytest.raises(FormatError) as exc:
        retrieval.loads_embeddings(bytes(broken))
    assert exc.value.offset == 12 + 2 * 28 + 8


def test_emb1_parse_is_deterministic(rng):
    data = retrieval.dumps_embeddings(_random_set(rng))[:-5]
    msgs = set()
    for _ in range(3):
        with pytest.raises(FormatError) as exc:
            retrieval.loads_embeddings(data)
        msgs.add(str(exc.value))
    assert len(msgs) == 1
