"""Balanced pair sampling and a from-scratch random-forest regressor on pair features.

Targets follow the pair convention: 0.0 for a relevant (positive) pair and
1.0 for a sampled negative, so lower predictions mean more relevant.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from ._binio import Reader, Writer, read_file, write_file
from .dataset import FeatureSet, RelevanceTable
from .distances import pair_feature, pair_features
from .errors import ConfigError, FormatError, SamplingError
from .evaluation import RankingResult, rank_by_score
from .parallel import max_workers

log = logging.getLogger(__name__)

N_FEATURES = 7
FOREST_MAGIC = b"ICBF"
FOREST_VERSION = 1

_LEAF, _SPLIT = 0, 1


@dataclass(frozen=True)
class LabeledPair:
    query: str
    candidate: str
    x: np.ndarray
    target: float


@dataclass(frozen=True)
class PairSet:
    pairs: tuple[LabeledPair, ...]
    seed: int

    def __post_init__(self) -> None:
        pos = sum(1 for p in self.pairs if p.target == 0.0)
        if pos * 2 != len(self.pairs):
            raise SamplingError(f"unbalanced pair set: {pos} positive of {len(self.pairs)}")

    def __len__(self) -> int:
        return len(self.pairs)

    @property
    def X(self) -> np.ndarray:
        return np.stack([p.x for p in self.pairs]) if self.pairs else np.zeros((0, N_FEATURES))

    @property
    def y(self) -> np.ndarray:
        return np.array([p.target for p in self.pairs], dtype=np.float64)


def sample_pairs(rel: RelevanceTable, feats: FeatureSet, queries: Iterable[str], seed: int) -> PairSet:
    """One positive pair per relevance entry plus as many seeded uniform negatives.

    Queries whose negative pool is too small are skipped with a warning.
    """
    rng = np.random.default_rng(seed)
    universe = sorted(feats.entries)
    pairs: list[LabeledPair] = []
    for q in sorted(queries):
        if q not in feats or q not in rel:
            log.warning("query %s has no features or relevance row; skipped", q)
            continue
        positives = [c for c in rel[q] if c in feats]
        if not positives:
            log.warning("query %s has no relevant candidate with features; skipped", q)
            continue
        excluded = set(rel[q]) | {q}
        pool = [c for c in universe if c not in excluded]
        if len(pool) < len(positives):
            log.warning("query %s: %d negatives available, %d needed; skipped",
                        q, len(pool), len(positives))
            continue
        negatives = [pool[i] for i in rng.choice(len(pool), size=len(positives), replace=False)]
        qv = feats[q]
        for c in positives:
            pairs.append(LabeledPair(q, c, pair_feature(qv, feats[c]), 0.0))
        for c in negatives:
            pairs.append(LabeledPair(q, c, pair_feature(qv, feats[c]), 1.0))
    if not pairs:
        raise SamplingError("no query yielded a balanced set of pairs")
    return PairSet(tuple(pairs), seed)


@dataclass
class Tree:
    """Flat preorder node arrays; leaves carry ``value``, splits send ``x <= threshold`` left."""

    kind: np.ndarray        # u8, 0 leaf / 1 split
    feature: np.ndarray     # u8
    value: np.ndarray       # f32 threshold (split) or leaf mean (leaf)
    left: np.ndarray        # u32
    right: np.ndarray       # u32

    def predict(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        active = self.kind[node] == _SPLIT
        while active.any():
            n = node[active]
            go_left = X[rows[active], self.feature[n]] <= self.value[n].astype(np.float64)
            node[active] = np.where(go_left, self.left[n], self.right[n])
            active = self.kind[node] == _SPLIT
        return self.value[node].astype(np.float64)

    @property
    def n_nodes(self) -> int:
        return len(self.kind)


@dataclass
class ForestModel:
    trees: list[Tree]
    n_trees: int
    max_depth: int
    min_samples_leaf: int
    features_per_split: int
    seed: int
    provenance: dict = field(default_factory=dict)

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        total = np.zeros(len(X))
        for t in self.trees:
            total += t.predict(X)
        return total / len(self.trees)


def _best_split(X: np.ndarray, y: np.ndarray, features: np.ndarray, min_leaf: int):
    """Greedy MSE split over ``features``; returns (feature, f32 threshold) or None."""
    n = len(y)
    best = None
    best_cost = np.inf
    for f in features:
        order = np.argsort(X[:, f], kind="stable")
        xs = X[order, f]
        ys = y[order]
        csum = np.cumsum(ys)
        csq = np.cumsum(ys * ys)
        # candidate boundary after position i (left = [0..i]); only between distinct values
        i = np.arange(min_leaf - 1, n - min_leaf)
        if i.size == 0:
            continue
        i = i[xs[i] < xs[i + 1]]
        if i.size == 0:
            continue
        thr = ((xs[i] + xs[i + 1]) / 2.0).astype(np.float32).astype(np.float64)
        # keep thresholds whose f32 rounding still separates the two values
        ok = (xs[i] <= thr) & (thr < xs[i + 1])
        i, thr = i[ok], thr[ok]
        if i.size == 0:
            continue
        nl = i + 1.0
        nr = n - nl
        sl, sr = csum[i], csum[-1] - csum[i]
        ql, qr = csq[i], csq[-1] - csq[i]
        # summed squared error of each side
        cost = (ql - sl * sl / nl) + (qr - sr * sr / nr)
        j = int(np.argmin(cost))
        if cost[j] < best_cost - 1e-12:
            best_cost = cost[j]
            best = (int(f), thr[j])
    return best


def _grow_tree(X: np.ndarray, y: np.ndarray, rng: np.random.Generator, max_depth: int,
               min_leaf: int, n_feats: int) -> Tree:
    kind, feature, value, left, right = [], [], [], [], []

    def build(idx: np.ndarray, depth: int) -> int:
        me = len(kind)
        kind.append(_LEAF)
        feature.append(0)
        value.append(0.0)
        left.append(0)
        right.append(0)
        ys = y[idx]
        leaf_value = float(np.float32(ys.mean()))
        if depth >= max_depth or len(idx) < 2 * min_leaf or np.all(ys == ys[0]):
            value[me] = leaf_value
            return me
        feats = rng.choice(N_FEATURES, size=n_feats, replace=False)
        split = _best_split(X[idx], ys, feats, min_leaf)
        if split is None:
            value[me] = leaf_value
            return me
        f, thr = split
        mask = X[idx, f] <= thr
        kind[me] = _SPLIT
        feature[me] = f
        value[me] = thr
        left[me] = build(idx[mask], depth + 1)
        right[me] = build(idx[~mask], depth + 1)
        return me

    build(np.arange(len(y)), 0)
    return Tree(
        np.array(kind, dtype=np.uint8),
        np.array(feature, dtype=np.uint8),
        np.array(value, dtype=np.float32),
        np.array(left, dtype=np.uint32),
        np.array(right, dtype=np.uint32),
    )


def _tree_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def fit_forest(ps: PairSet | tuple[np.ndarray, np.ndarray], n_trees: int = 100, max_depth: int = 12,
               min_samples_leaf: int = 2, features_per_split: int = 3, seed: int = 0) -> ForestModel:
    """Bagged CART regression trees; each tree's RNG stream derives from (seed, tree index)."""
    if isinstance(ps, PairSet):
        X, y = ps.X, ps.y
    else:
        X, y = (np.asarray(a, dtype=np.float64) for a in ps)
    if len(y) == 0:
        raise ConfigError("cannot fit a forest on an empty pair set")
    if X.shape != (len(y), N_FEATURES):
        raise ConfigError(f"pair features must be (n, {N_FEATURES}), got {X.shape}")
    if n_trees < 1 or max_depth < 1 or min_samples_leaf < 1:
        raise ConfigError("n_trees, max_depth and min_samples_leaf must be positive")
    if not 1 <= features_per_split <= N_FEATURES:
        raise ConfigError(f"features_per_split must be in 1..{N_FEATURES}")

    def one(t: int) -> Tree:
        rng = _tree_rng(seed, t)
        boot = rng.integers(0, len(y), size=len(y))
        tree = _grow_tree(X[boot], y[boot], rng, max_depth, min_samples_leaf, features_per_split)
        if (t + 1) % 10 == 0 or t + 1 == n_trees:
            log.info("tree %d/%d: %d nodes", t + 1, n_trees, tree.n_nodes)
        return tree

    workers = max_workers()
    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            trees = list(ex.map(one, range(n_trees)))
    else:
        trees = [one(t) for t in range(n_trees)]
    return ForestModel(trees, n_trees, max_depth, min_samples_leaf, features_per_split, seed)


def forest_predict(m: ForestModel, x) -> float:
    return float(m.predict(np.asarray(x, dtype=np.float64)[None, :])[0])


def rank_candidates_rf(m: ForestModel, query: str, candidates: Iterable[str], feats: FeatureSet) -> RankingResult:
    cands = sorted(set(candidates))
    if query in cands:
        raise ValueError(f"query {query!r} is among its own candidates")
    scores = m.predict(pair_features(feats[query], feats.matrix(cands))) if cands else np.zeros(0)
    return rank_by_score(query, cands, scores, ascending=True)


# --- serialization ----------------------------------------------------------------

def dump_forest(m: ForestModel) -> bytes:
    w = Writer()
    w.raw(FOREST_MAGIC)
    w.u16(FOREST_VERSION)
    w.u32(m.n_trees)
    w.u32(m.max_depth)
    w.u32(m.min_samples_leaf)
    w.u32(m.features_per_split)
    w.u64(m.seed)
    w.json(m.provenance)
    w.u32(len(m.trees))
    for t in m.trees:
        w.u32(t.n_nodes)
        for k in range(t.n_nodes):
            w.u8(int(t.kind[k]))
            w.u8(int(t.feature[k]))
            w.f32(float(t.value[k]))
            w.u32(int(t.left[k]))
            w.u32(int(t.right[k]))
    return w.getvalue()


def parse_forest(data: bytes) -> ForestModel:
    r = Reader(data)
    r.expect_magic(FOREST_MAGIC)
    version = r.u16()
    if version != FOREST_VERSION:
        raise FormatError(f"unsupported forest version {version}")
    n_trees, max_depth, min_leaf, fps = r.u32(), r.u32(), r.u32(), r.u32()
    seed = r.u64()
    provenance = r.json()
    trees = []
    for _ in range(r.u32()):
        n = r.u32()
        raw = np.frombuffer(r.raw(14 * n), dtype=np.dtype(
            [("kind", "u1"), ("feature", "u1"), ("value", "<f4"), ("left", "<u4"), ("right", "<u4")]))
        t = Tree(raw["kind"].copy(), raw["feature"].copy(), raw["value"].astype(np.float32),
                 raw["left"].astype(np.uint32), raw["right"].astype(np.uint32))
        idx = np.arange(n)
        bad_child = (t.kind == _SPLIT) & ((t.left >= n) | (t.right >= n) | (t.left <= idx) | (t.right <= idx))
        if n == 0 or np.any(t.kind > _SPLIT) or np.any(bad_child) or np.any(t.feature >= N_FEATURES):
            raise FormatError("corrupt tree node table")
        trees.append(t)
    r.expect_end()
    if len(trees) != n_trees:
        raise FormatError(f"header says {n_trees} trees, found {len(trees)}")
    return ForestModel(trees, n_trees, max_depth, min_leaf, fps, seed, provenance)


def save_forest(m: ForestModel, path) -> None:
    write_file(path, dump_forest(m))


def load_forest(path) -> ForestModel:
    return parse_forest(read_file(path))
