"""Global-descriptor image retrieval (direct, VC1, VC2) and R@k / P@k evaluation."""

from __future__ import annotations

import struct
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class RetrievalError(ValueError):
    pass


@dataclass(frozen=True)
class GlobalDescriptor:
    id: str
    vector: np.ndarray
    source_ref: str = ""

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64).reshape(-1)
        n = np.linalg.norm(v)
        if not np.isfinite(n) or n == 0.0:
            raise RetrievalError(f"descriptor {self.id!r} has zero or non-finite norm")
        v = v / n
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)

    @property
    def dim(self) -> int:
        return self.vector.shape[0]


@dataclass(frozen=True)
class FeatureGroup:
    """Descriptors of all virtual crops rendered from one 360° reference."""

    ref_id: str
    members: tuple

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise RetrievalError(f"feature group {self.ref_id!r} is empty")
        for m in members:
            if m.source_ref != self.ref_id:
                raise RetrievalError(
                    f"member {m.id!r} belongs to {m.source_ref!r}, not {self.ref_id!r}"
                )
        object.__setattr__(self, "members", members)

    def matrix(self) -> np.ndarray:
        return np.stack([m.vector for m in self.members])


@dataclass
class RetrievalResult:
    query_id: str
    ranked: list[tuple[str, float]] = field(default_factory=list)
    k_max: int = 0

    @property
    def ref_ids(self) -> list[str]:
        return [r for r, _ in self.ranked]


def cosine_similarity(a: GlobalDescriptor, b: GlobalDescriptor) -> float:
    if a.dim != b.dim:
        raise RetrievalError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return float(np.clip(a.vector @ b.vector, -1.0, 1.0))


def group_score(q: GlobalDescriptor, g: FeatureGroup) -> float:
    """Best cosine similarity between the query and any crop of the reference."""
    return max(cosine_similarity(q, m) for m in g.members)


def group_descriptors(descs: Iterable[GlobalDescriptor]) -> list[FeatureGroup]:
    """Bucket crop descriptors into one group per ``source_ref`` (sorted by ref id)."""
    buckets: dict[str, list] = defaultdict(list)
    for d in descs:
        if not d.source_ref:
            raise RetrievalError(f"descriptor {d.id!r} has no source_ref")
        buckets[d.source_ref].append(d)
    return [FeatureGroup(ref, tuple(buckets[ref])) for ref in sorted(buckets)]


class Database:
    """Immutable exact-search index over references or reference groups."""

    def __init__(self, entries: Sequence[GlobalDescriptor] | Sequence[FeatureGroup]):
        if not entries:
            raise RetrievalError("empty database")
        rows, owner, ref_ids = [], [], []
        index: dict[str, int] = {}
        for e in entries:
            if isinstance(e, FeatureGroup):
                ref, vecs = e.ref_id, [m.vector for m in e.members]
            else:
                ref, vecs = e.id, [e.vector]
            if ref not in index:
                index[ref] = len(ref_ids)
                ref_ids.append(ref)
            rows.extend(vecs)
            owner.extend([index[ref]] * len(vecs))
        M = np.stack(rows)
        if len({len(r) for r in rows}) != 1:
            raise RetrievalError("descriptor dimensions differ within the database")
        self.matrix = M
        self.owner = np.asarray(owner)
        self.ref_ids = ref_ids
        self.dim = M.shape[1]
        # lexicographic rank of each ref id for deterministic tie-breaks
        order = sorted(range(len(ref_ids)), key=lambda i: ref_ids[i])
        self._lex = np.empty(len(ref_ids), dtype=np.int64)
        self._lex[order] = np.arange(len(ref_ids))

    def scores(self, q: GlobalDescriptor) -> np.ndarray:
        if q.dim != self.dim:
            raise RetrievalError(f"dimension mismatch: {q.dim} vs {self.dim}")
        sims = np.clip(self.matrix @ q.vector, -1.0, 1.0)
        best = np.full(len(self.ref_ids), -np.inf)
        np.maximum.at(best, self.owner, sims)
        return best

    def query(self, q: GlobalDescriptor, k: int) -> RetrievalResult:
        if k < 1:
            raise RetrievalError("k must be >= 1")
        s = self.scores(q)
        order = np.lexsort((self._lex, -s))[:k]
        return RetrievalResult(q.id, [(self.ref_ids[i], float(s[i])) for i in order], k)


def retrieve_topk(q: GlobalDescriptor, db, k: int) -> RetrievalResult:
    """Top-k references, one entry per reference, ties broken by ref id."""
    if not isinstance(db, Database):
        db = Database(db)
    return db.query(q, k)


def eval_retrieval(
    results: Sequence[RetrievalResult],
    query_poses: dict,
    ref_poses: dict,
    d_threshold: float,
    ks: Sequence[int] = (1, 5, 10),
) -> dict[int, tuple[float, float]]:
    """Recall@k and precision@k under a translation-distance gate.

    A retrieved reference is correct when its camera center lies within
    ``d_threshold`` meters of the query's. R@k is the fraction of queries with
    at least one correct hit in the top k; P@k averages (hits in top k) / k.
    """
    if not d_threshold > 0:
        raise RetrievalError("distance threshold must be positive")
    if not results:
        raise RetrievalError("no retrieval results")

    def center(poses, key):
        if key not in poses:
            raise RetrievalError(f"missing pose for {key!r}")
        p = poses[key]
        return np.asarray(getattr(p, "translation", p), dtype=np.float64)

    table = {}
    n = len(results)
    for k in ks:
        found = hits_total = 0  # integer counts, divided once so the ratios are correctly rounded
        for res in results:
            tq = center(query_poses, res.query_id)
            hits = sum(
                bool(np.linalg.norm(center(ref_poses, r) - tq) <= d_threshold) for r in res.ref_ids[:k]
            )
            found += hits > 0
            hits_total += hits
        table[k] = (found / n, hits_total / (k * n))
    return table


MODES = ("direct", "vc1", "vc2")


@dataclass(frozen=True)
class DescriptorRequest:
    """One image the external descriptor extractor must embed."""

    name: str
    kind: str  # "query", "remap" (VC1) or "crop" (VC2)
    source: str
    camera: str = ""
    rotation: tuple = ()
    source_ref: str = ""


def route_query(
    mode: str,
    query_id: str,
    query_camera: str = "",
    ref_ids: Sequence[str] = (),
    crop_plan: Sequence[tuple[str, np.ndarray]] = (),
) -> list[DescriptorRequest]:
    """Descriptor requests needed to score one query under ``mode``.

    ``crop_plan`` lists (camera preset, rotation) per VC2 crop; the same plan
    is applied to every reference.
    """
    if mode == "direct":
        return [DescriptorRequest(query_id, "query", query_id, query_camera)]
    if mode == "vc1":
        return [DescriptorRequest(f"{query_id}.vc1", "remap", query_id, query_camera)]
    if mode == "vc2":
        reqs = [DescriptorRequest(query_id, "query", query_id, query_camera)]
        for ref in ref_ids:
            for i, (cam, R) in enumerate(crop_plan):
                rot = tuple(np.asarray(R, dtype=float).ravel().tolist())
                reqs.append(DescriptorRequest(f"{ref}.{cam}.{i}", "crop", ref, cam, rot, ref))
        return reqs
    raise RetrievalError(f"unknown mode {mode!r}; expected one of {MODES}")


# --- descriptor file ---------------------------------------------------------

MAGIC = b"OLDC"
VERSION = 1


def write_descriptors(path, descs: Sequence[GlobalDescriptor]) -> None:
    dims = {d.dim for d in descs}
    if len(dims) > 1:
        raise RetrievalError("descriptor dimensions differ")
    dim = dims.pop() if dims else 0
    with open(path, "wb") as f:
        f.write(MAGIC + struct.pack("<III", VERSION, len(descs), dim))
        for d in descs:
            name = d.id.encode("utf-8")
            src = d.source_ref.encode("utf-8")
            f.write(struct.pack("<H", len(name)) + name)
            f.write(struct.pack("<H", len(src)) + src)
            f.write(d.vector.astype("<f4").tobytes())


def read_descriptors(path) -> list[GlobalDescriptor]:
    data = Path(path).read_bytes()
    if data[:4] != MAGIC:
        raise RetrievalError(f"{path}: bad magic {data[:4]!r}")
    version, count, dim = struct.unpack_from("<III", data, 4)
    if version != VERSION:
        raise RetrievalError(f"{path}: unsupported version {version}")
    off = 16
    out = []
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<H", data, off)
            name = data[off + 2 : off + 2 + n].decode("utf-8")
            off += 2 + n
            (n,) = struct.unpack_from("<H", data, off)
            src = data[off + 2 : off + 2 + n].decode("utf-8")
            off += 2 + n
            vec = np.frombuffer(data, dtype="<f4", count=dim, offset=off)
            off += 4 * dim
            out.append(GlobalDescriptor(name, vec.astype(np.float64), src))
    except (struct.error, ValueError) as e:
        raise RetrievalError(f"{path}: truncated descriptor file") from e
    if off != len(data):
        raise RetrievalError(f"{path}: {len(data) - off} trailing bytes")
    return out
