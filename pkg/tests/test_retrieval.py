import numpy as np
import pytest
from hypothesis import given, strategies as st

from omniloc.dataset import VC2Config, crop_plan
from omniloc.retrieval import (
    Database,
    FeatureGroup,
    GlobalDescriptor,
    RetrievalError,
    RetrievalResult,
    cosine_similarity,
    eval_retrieval,
    group_descriptors,
    group_score,
    read_descriptors,
    retrieve_topk,
    route_query,
    write_descriptors,
)

from strategies import seeds


def gd(name, v, src=""):
    return GlobalDescriptor(name, np.asarray(v, dtype=float), src)


def test_cosine_basics():
    a = gd("a", [1, 2, 3])
    assert cosine_similarity(a, a) == pytest.approx(1.0)
    assert cosine_similarity(gd("x", [1, 0]), gd("y", [0, 1])) == 0.0
    assert cosine_similarity(a, gd("n", [-1, -2, -3])) == pytest.approx(-1.0)
    with pytest.raises(RetrievalError):
        cosine_similarity(a, gd("b", [1, 0]))


def test_zero_vector_rejected():
    with pytest.raises(RetrievalError):
        gd("z", [0, 0, 0])


@given(seeds, st.floats(1e-3, 1e3))
def test_scale_invariance(seed, c):
    v = np.random.default_rng(seed).normal(size=16)
    assert np.allclose(gd("a", v).vector, gd("a", c * v).vector, atol=1e-12)


def test_group_score_hand_built():
    q = gd("q", [1, 0, 0])
    members = (gd("m1", [0, 1, 0], "r"), gd("m2", [1, 1, 0], "r"), gd("m3", [-1, 0, 0], "r"))
    g = FeatureGroup("r", members)
    assert group_score(q, g) == pytest.approx(max(cosine_similarity(q, m) for m in members))
    assert group_score(q, g) == pytest.approx(np.sqrt(0.5))
    assert group_score(members[0], g) == pytest.approx(1.0)
    single = FeatureGroup("r", members[:1])
    assert group_score(q, single) == cosine_similarity(q, members[0])


def test_group_validation():
    with pytest.raises(RetrievalError):
        FeatureGroup("r", ())
    with pytest.raises(RetrievalError):
        FeatureGroup("r", (gd("m", [1, 0], "other"),))


@given(seeds)
def test_group_score_dominates_members(seed):
    rng = np.random.default_rng(seed)
    q = gd("q", rng.normal(size=8))
    g = FeatureGroup("r", tuple(gd(f"m{i}", rng.normal(size=8), "r") for i in range(5)))
    s = group_score(q, g)
    assert all(s >= cosine_similarity(q, m) for m in g.members)


def test_retrieve_self_and_oversized_k():
    rng = np.random.default_rng(0)
    db = [gd(f"r{i}", rng.normal(size=8)) for i in range(6)]
    res = retrieve_topk(db[3], db, 100)
    assert res.ranked[0] == ("r3", pytest.approx(1.0))
    assert len(res.ranked) == 6


@given(seeds)
def test_ranking_matches_full_sort(seed):
    rng = np.random.default_rng(seed)
    db = [gd(f"r{i:02d}", rng.normal(size=4)) for i in range(10)]
    q = gd("q", rng.normal(size=4))
    brute = sorted(((-cosine_similarity(q, d), d.id) for d in db))
    res = retrieve_topk(q, db, 10)
    assert res.ref_ids == [r for _, r in brute]
    scores = [s for _, s in res.ranked]
    assert all(a >= b for a, b in zip(scores, scores[1:]))


def test_ties_break_lexicographically():
    db = [gd("b", [1, 0]), gd("a", [1, 0]), gd("c", [0, 1])]
    assert retrieve_topk(gd("q", [1, 0]), db, 3).ref_ids == ["a", "b", "c"]


@given(seeds)
def test_group_retrieval_dedups(seed):
    rng = np.random.default_rng(seed)
    crops = [gd(f"r{i}.c{j}", rng.normal(size=6), f"r{i}") for i in range(5) for j in range(4)]
    db = Database(group_descriptors(crops))
    res = db.query(gd("q", rng.normal(size=6)), 5)
    assert len(set(res.ref_ids)) == len(res.ranked) == 5


def test_eval_trivial_cases():
    ref = {"a": np.zeros(3), "b": np.array([100.0, 0, 0])}
    q = {"q": np.array([1.0, 0, 0])}
    r = [RetrievalResult("q", [("a", 1.0), ("b", 0.5)], 2)]
    assert eval_retrieval(r, q, ref, 5, [1])[1] == (1.0, 1.0)
    far = {"q": np.array([50.0, 0, 0])}
    assert eval_retrieval(r, far, ref, 5, [1, 2]) == {1: (0.0, 0.0), 2: (0.0, 0.0)}
    with pytest.raises(RetrievalError):
        eval_retrieval(r, {}, ref, 5, [1])
    with pytest.raises(RetrievalError):
        eval_retrieval(r, q, ref, 0, [1])


@given(seeds)
def test_recall_monotone_in_k(seed):
    rng = np.random.default_rng(seed)
    refs = {f"r{i}": rng.uniform(0, 30, 3) for i in range(8)}
    qs = {f"q{i}": rng.uniform(0, 30, 3) for i in range(5)}
    results = [RetrievalResult(q, [(r, 0.0) for r in rng.permutation(sorted(refs))], 8) for q in qs]
    table = eval_retrieval(results, qs, refs, 8.0, range(1, 9))
    rec = [table[k][0] for k in range(1, 9)]
    assert all(a <= b for a, b in zip(rec, rec[1:]))


def test_route_query_counts():
    assert len(route_query("direct", "q")) == 1
    vc1 = route_query("vc1", "q", "pinhole")
    assert len(vc1) == 1 and vc1[0].kind == "remap"
    plan = [(c.camera, c.rotation) for c in crop_plan(VC2Config(cube_face_px=8, preset_scale=0.01), 0)]
    reqs = route_query("vc2", "q", "pinhole", ["r0", "r1", "r2", "r3"], plan)
    assert sum(r.kind == "crop" for r in reqs) == 32
    with pytest.raises(RetrievalError):
        route_query("vc3", "q")


def test_descriptor_file_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    descs = [gd("r0", rng.normal(size=5)), gd("crop/ü", rng.normal(size=5), "r0")]
    write_descriptors(tmp_path / "d.bin", descs)
    back = read_descriptors(tmp_path / "d.bin")
    assert [(d.id, d.source_ref) for d in back] == [("r0", ""), ("crop/ü", "r0")]
    for a, b in zip(descs, back):
        assert np.allclose(a.vector, b.vector, atol=1e-6)
    raw = (tmp_path / "d.bin").read_bytes()
    assert raw[:4] == b"OLDC"
    (tmp_path / "bad.bin").write_bytes(raw[:-3])
    with pytest.raises(RetrievalError):
        read_descriptors(tmp_path / "bad.bin")


def test_line_layout_exhaustive():
    refs = {f"r{i}": np.array([4.0 * i, 0, 0]) for i in range(6)}
    qs = {f"q{j}": np.array([3.0 + 5.0 * j, 0, 0]) for j in range(4)}
    order = {q: sorted(refs, key=lambda r: (-abs(hash((q, r))) % 97, r)) for q in qs}
    results = [RetrievalResult(q, [(r, 0.0) for r in order[q]], 6) for q in sorted(qs)]
    table = eval_retrieval(results, qs, refs, 5.0, [1, 5])
    for k in (1, 5):
        hits = [sum(abs(refs[r][0] - qs[q][0]) <= 5.0 for r in order[q][:k]) for q in sorted(qs)]
        assert table[k] == (sum(h > 0 for h in hits) / 4, sum(hits) / (4 * k))
