"""Feature sets, relevance lists, splits and the synthetic cluster generator.

Feature vectors are stored as float32 (the on-disk precision) so that a
save/load cycle is bit-exact; consumers upcast to float64 for arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np

from ._binio import Reader, Writer, read_file, write_file
from .errors import ConfigError, DataError, FormatError, IoError

VIDEO_LEVEL = "video_level"
FRAME_LEVEL = "frame_level"
_KIND_CODES = {VIDEO_LEVEL: 0, FRAME_LEVEL: 1}
_KIND_NAMES = {v: k for k, v in _KIND_CODES.items()}

FEATURE_MAGIC = b"ICEB"
FEATURE_VERSION = 1

# characters reserved by the text formats (TSV, comma lists, CSV)
_RESERVED = frozenset(",")


def check_video_id(vid: str) -> str:
    if not isinstance(vid, str) or not vid:
        raise DataError(f"video id must be a non-empty string, got {vid!r}")
    if any(ch.isspace() or ch in _RESERVED for ch in vid):
        raise DataError(f"video id {vid!r} contains whitespace or a reserved character")
    return vid


@dataclass(frozen=True)
class FeatureSet:
    kind: str
    dim: int
    entries: Mapping[str, np.ndarray]

    def __post_init__(self) -> None:
        if self.kind not in _KIND_CODES:
            raise DataError(f"unknown feature kind {self.kind!r}")
        if not isinstance(self.dim, (int, np.integer)) or self.dim < 1:
            raise DataError(f"dim must be a positive integer, got {self.dim!r}")
        frozen = {}
        for vid, arr in self.entries.items():
            check_video_id(vid)
            a = np.array(arr, dtype=np.float32)
            if self.kind == VIDEO_LEVEL:
                if a.shape != (self.dim,):
                    raise DataError(f"{vid}: expected shape ({self.dim},), got {a.shape}")
            else:
                if a.ndim != 2 or a.shape[1] != self.dim or a.shape[0] < 1:
                    raise DataError(f"{vid}: expected shape (T>=1, {self.dim}), got {a.shape}")
            if not np.all(np.isfinite(a)):
                raise DataError(f"{vid}: non-finite feature component")
            a.setflags(write=False)
            frozen[vid] = a
        object.__setattr__(self, "entries", MappingProxyType(frozen))
        object.__setattr__(self, "dim", int(self.dim))

    def __len__(self) -> int:
        return len(self.entries)

    def __contains__(self, vid: object) -> bool:
        return vid in self.entries

    def __getitem__(self, vid: str) -> np.ndarray:
        return self.entries[vid]

    def ids(self) -> list[str]:
        return list(self.entries)

    def matrix(self, ids: Iterable[str]) -> np.ndarray:
        """Stack video-level vectors for ``ids`` as a float64 matrix."""
        if self.kind != VIDEO_LEVEL:
            raise DataError("matrix() needs video-level features")
        ids = list(ids)
        if not ids:
            return np.zeros((0, self.dim))
        try:
            return np.stack([self.entries[v] for v in ids]).astype(np.float64)
        except KeyError as exc:
            raise DataError(f"no features for video {exc.args[0]!r}") from None


@dataclass(frozen=True)
class RelevanceTable:
    """Ordered relevance lists, most relevant first."""

    rows: Mapping[str, tuple[str, ...]]

    def __post_init__(self) -> None:
        frozen = {}
        for q, cands in self.rows.items():
            check_video_id(q)
            cands = tuple(cands)
            for c in cands:
                check_video_id(c)
            if q in cands:
                raise DataError(f"query {q!r} lists itself as relevant")
            if len(set(cands)) != len(cands):
                raise DataError(f"query {q!r} has duplicate candidates")
            frozen[q] = cands
        object.__setattr__(self, "rows", MappingProxyType(frozen))

    def __len__(self) -> int:
        return len(self.rows)

    def __contains__(self, q: object) -> bool:
        return q in self.rows

    def __getitem__(self, q: str) -> tuple[str, ...]:
        return self.rows[q]

    def queries(self) -> list[str]:
        return list(self.rows)

    def check_universe(self, universe: Iterable[str]) -> None:
        known = set(universe)
        for q, cands in self.rows.items():
            missing = [c for c in cands if c not in known]
            if missing:
                raise DataError(f"query {q!r} lists unknown candidates {missing[:3]}")

    def restrict(self, queries: Iterable[str]) -> "RelevanceTable":
        keep = set(queries)
        return RelevanceTable({q: c for q, c in self.rows.items() if q in keep})


@dataclass(frozen=True)
class DatasetSplit:
    train: frozenset[str]
    validation: frozenset[str]
    test: frozenset[str]

    def __post_init__(self) -> None:
        for name in ("train", "validation", "test"):
            object.__setattr__(self, name, frozenset(getattr(self, name)))
        if (self.train & self.validation) or (self.train & self.test) or (self.validation & self.test):
            raise DataError("split sets are not pairwise disjoint")

    def get(self, name: str) -> frozenset[str]:
        aliases = {"train": self.train, "val": self.validation,
                   "validation": self.validation, "test": self.test}
        if name not in aliases:
            raise ConfigError(f"unknown split {name!r}")
        return aliases[name]

    def covers(self, rel: RelevanceTable) -> bool:
        everything = self.train | self.validation | self.test
        return all(q in everything for q in rel.rows)


@dataclass(frozen=True)
class SynthConfig:
    n_videos: int = 60
    n_clusters: int = 4
    video_dim: int = 512
    frame_dim: int = 2048
    max_frames: int = 30
    relevant_per_query: int = 5
    cluster_noise_sigma: float = 0.3
    seed: int = 0
    split_fractions: tuple[float, float, float] = (0.6, 0.2, 0.2)
    min_centroid_separation: float = 1.0

    def validate(self) -> None:
        for name in ("n_videos", "video_dim", "frame_dim", "max_frames", "relevant_per_query"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer")
        if self.n_clusters < 2:
            raise ConfigError("n_clusters must be >= 2")
        if not (self.cluster_noise_sigma >= 0 and math.isfinite(self.cluster_noise_sigma)):
            raise ConfigError("cluster_noise_sigma must be a finite non-negative real")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("seed must fit in 64 unsigned bits")
        fr = tuple(self.split_fractions)
        if len(fr) != 3 or any(f <= 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
            raise ConfigError(f"split_fractions must be three positive reals summing to 1, got {fr}")
        smallest = self.n_videos // self.n_clusters
        if self.relevant_per_query > smallest - 1:
            raise ConfigError(
                f"relevant_per_query={self.relevant_per_query} exceeds same-cluster peers "
                f"(smallest cluster has {smallest} videos)")


# --- file formats -----------------------------------------------------------

def dump_features(fs: FeatureSet) -> bytes:
    w = Writer()
    w.raw(FEATURE_MAGIC)
    w.u16(FEATURE_VERSION)
    w.u8(_KIND_CODES[fs.kind])
    w.u32(len(fs.entries))
    w.u32(fs.dim)
    for vid, arr in fs.entries.items():
        b = vid.encode("utf-8")
        w.u16(len(b))
        w.raw(b)
        if fs.kind == FRAME_LEVEL:
            w.u32(arr.shape[0])
        w.f32_array(arr)
    return w.getvalue()


def parse_features(data: bytes) -> FeatureSet:
    r = Reader(data)
    r.expect_magic(FEATURE_MAGIC)
    version = r.u16()
    if version != FEATURE_VERSION:
        raise FormatError(f"unsupported feature file version {version}")
    code = r.u8()
    if code not in _KIND_NAMES:
        raise FormatError(f"unknown feature kind code {code}")
    kind = _KIND_NAMES[code]
    count = r.u32()
    dim = r.u32()
    if dim < 1:
        raise FormatError("feature dim must be positive")
    entries: dict[str, np.ndarray] = {}
    for _ in range(count):
        try:
            vid = r.raw(r.u16()).decode("utf-8")
        except UnicodeDecodeError:
            raise FormatError("video id is not valid UTF-8") from None
        if vid in entries:
            raise FormatError(f"duplicate video id {vid!r}")
        if kind == FRAME_LEVEL:
            t = r.u32()
            if t < 1:
                raise FormatError(f"{vid}: empty frame sequence")
            arr = r.f32_array(t * dim).reshape(t, dim)
        else:
            arr = r.f32_array(dim)
        if not np.all(np.isfinite(arr)):
            raise DataError(f"{vid}: non-finite feature component")
        entries[vid] = arr
    r.expect_end()
    return FeatureSet(kind, dim, entries)


def save_features(fs: FeatureSet, path) -> None:
    write_file(path, dump_features(fs))


def load_features(path) -> FeatureSet:
    return parse_features(read_file(path))


def dump_relevance(rel: RelevanceTable) -> str:
    return "".join(f"{q}\t{','.join(c)}\n" for q, c in rel.rows.items())


def parse_relevance(text: str) -> RelevanceTable:
    rows: dict[str, list[str]] = {}
    for lineno, line in enumerate(text.split("\n"), 1):
        if not line:
            continue
        if "\t" not in line:
            raise FormatError(f"line {lineno}: missing tab separator")
        q, rest = line.split("\t", 1)
        if q in rows:
            raise FormatError(f"line {lineno}: duplicate query {q!r}")
        cands = rest.split(",") if rest else []
        if q in cands:
            raise DataError(f"line {lineno}: query {q!r} listed as its own candidate")
        rows[q] = cands
    try:
        return RelevanceTable(rows)
    except DataError as exc:
        raise FormatError(str(exc)) from None


def save_relevance(rel: RelevanceTable, path) -> None:
    write_file(path, dump_relevance(rel).encode("utf-8"))


def load_relevance(path) -> RelevanceTable:
    try:
        text = read_file(path).decode("utf-8")
    except UnicodeDecodeError:
        raise FormatError(f"{path}: not UTF-8") from None
    return parse_relevance(text)


def dump_split(split: DatasetSplit) -> str:
    return "".join(
        f"{label}:{','.join(sorted(ids))}\n"
        for label, ids in (("train", split.train), ("val", split.validation), ("test", split.test))
    )


def parse_split(text: str) -> DatasetSplit:
    found: dict[str, list[str]] = {}
    for lineno, line in enumerate(text.split("\n"), 1):
        if not line:
            continue
        label, sep, rest = line.partition(":")
        if not sep or label not in ("train", "val", "test"):
            raise FormatError(f"line {lineno}: expected 'train:', 'val:' or 'test:'")
        if label in found:
            raise FormatError(f"line {lineno}: duplicate {label!r} line")
        found[label] = rest.split(",") if rest else []
    missing = {"train", "val", "test"} - set(found)
    if missing:
        raise FormatError(f"split file lacks {sorted(missing)}")
    try:
        return DatasetSplit(frozenset(found["train"]), frozenset(found["val"]), frozenset(found["test"]))
    except DataError as exc:
        raise FormatError(str(exc)) from None


def save_split(split: DatasetSplit, path) -> None:
    write_file(path, dump_split(split).encode("utf-8"))


def load_split(path) -> DatasetSplit:
    return parse_split(read_file(path).decode("utf-8"))


# --- synthetic data -----------------------------------------------------------

def video_id(i: int, n: int) -> str:
    width = max(4, len(str(n - 1)))
    return f"v{i:0{width}d}"


def _draw_centroids(rng: np.random.Generator, k: int, dim: int, min_sep: float) -> np.ndarray:
    for _ in range(1000):
        c = rng.standard_normal((k, dim)) * 1.0
        d = np.sqrt(((c[:, None, :] - c[None, :, :]) ** 2).sum(-1))
        d[np.diag_indices(k)] = np.inf
        if d.min() > min_sep:
            return c
    raise ConfigError(f"could not draw {k} centroids in {dim} dims separated by > {min_sep}")


def nearest_relevance(ids: list[str], vectors: np.ndarray, clusters: np.ndarray, k: int) -> RelevanceTable:
    """Per query, the ``k`` same-cluster videos nearest in Euclidean distance.

    Ties are broken by video id.
    """
    rows = {}
    vec = vectors.astype(np.float64)
    for qi, q in enumerate(ids):
        peers = [j for j in range(len(ids)) if j != qi and clusters[j] == clusters[qi]]
        if len(peers) < k:
            raise ConfigError(f"query {q!r} has only {len(peers)} same-cluster peers, need {k}")
        dist = np.sqrt(((vec[peers] - vec[qi]) ** 2).sum(axis=1))
        order = sorted(range(len(peers)), key=lambda p: (dist[p], ids[peers[p]]))
        rows[q] = [ids[peers[p]] for p in order[:k]]
    return RelevanceTable(rows)


def generate_synthetic(cfg: SynthConfig) -> tuple[FeatureSet, FeatureSet, RelevanceTable, DatasetSplit]:
    """Cluster-structured stand-in dataset; a pure function of ``cfg``.

    Returns (frame-level features, video-level features, relevance, split).
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n, k = cfg.n_videos, cfg.n_clusters
    ids = [video_id(i, n) for i in range(n)]
    clusters = np.arange(n) % k

    video_centroids = _draw_centroids(rng, k, cfg.video_dim, cfg.min_centroid_separation)
    frame_centroids = rng.standard_normal((k, cfg.frame_dim)) * 1.0

    sigma = cfg.cluster_noise_sigma
    videos = {}
    frames = {}
    for i, vid in enumerate(ids):
        c = clusters[i]
        videos[vid] = (video_centroids[c] + sigma * rng.standard_normal(cfg.video_dim)).astype(np.float32)
        t = int(rng.integers(1, cfg.max_frames, endpoint=True))
        frames[vid] = (frame_centroids[c] + sigma * rng.standard_normal((t, cfg.frame_dim))).astype(np.float32)

    video_fs = FeatureSet(VIDEO_LEVEL, cfg.video_dim, videos)
    frame_fs = FeatureSet(FRAME_LEVEL, cfg.frame_dim, frames)
    stored = np.stack([video_fs[v] for v in ids])
    rel = nearest_relevance(ids, stored, clusters, cfg.relevant_per_query)

    perm = rng.permutation(n)
    n_train = int(round(cfg.split_fractions[0] * n))
    n_val = min(n - n_train, int(round(cfg.split_fractions[1] * n)))
    shuffled = [ids[i] for i in perm]
    split = DatasetSplit(
        frozenset(shuffled[:n_train]),
        frozenset(shuffled[n_train:n_train + n_val]),
        frozenset(shuffled[n_train + n_val:]),
    )
    return frame_fs, video_fs, rel, split


# --- dataset directories ---------------------------------------------------------

FRAMES_FILE = "frames.iceb"
VIDEOS_FILE = "videos.iceb"
RELEVANCE_FILE = "relevance.tsv"
SPLIT_FILE = "split.txt"


@dataclass(frozen=True)
class Dataset:
    frames: FeatureSet
    videos: FeatureSet
    relevance: RelevanceTable
    split: DatasetSplit
    root: Path | None = field(default=None, compare=False)


def save_dataset(root, frames: FeatureSet, videos: FeatureSet, rel: RelevanceTable,
                 split: DatasetSplit) -> list[Path]:
    root = Path(root)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {root}: {exc}") from None
    paths = [root / FRAMES_FILE, root / VIDEOS_FILE, root / RELEVANCE_FILE, root / SPLIT_FILE]
    save_features(frames, paths[0])
    save_features(videos, paths[1])
    save_relevance(rel, paths[2])
    save_split(split, paths[3])
    return paths


def load_dataset(root) -> Dataset:
    root = Path(root)
    frames = load_features(root / FRAMES_FILE)
    videos = load_features(root / VIDEOS_FILE)
    if frames.kind != FRAME_LEVEL or videos.kind != VIDEO_LEVEL:
        raise DataError(f"{root}: feature files have the wrong kinds")
    rel = load_relevance(root / RELEVANCE_FILE)
    split = load_split(root / SPLIT_FILE)
    rel.check_universe(videos.entries)
    return Dataset(frames, videos, rel, split, root)
