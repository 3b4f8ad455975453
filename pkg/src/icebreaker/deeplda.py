"""DeepLDA: an embedding network trained to push up the smallest LDA eigenvalues.

Each relevance row is one two-class batch: the query's relevant videos
(class 1) against sampled non-relevant videos (class 0). The per-batch
scatter matrices define the generalized eigenproblem
``S_b e = v (S_w + lam I) e``; the loss is minus the mean of the eigenvalues
lying within ``eps`` of the smallest one.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np

from ._binio import Reader, Writer, read_file, write_file
from .dataset import FeatureSet, RelevanceTable
from .errors import BatchError, ConfigError, DataError, FormatError, NumericalError, ShapeError, TrainingDiverged
from .evaluation import RankingResult, rank_by_score
from .neuralnet import layers
from .neuralnet.adam import AdamState, adam_step

log = logging.getLogger(__name__)

MODEL_MAGIC = b"ICBL"
MODEL_VERSION = 1


@dataclass(frozen=True)
class LdaBatch:
    H: np.ndarray
    labels: np.ndarray

    def __post_init__(self) -> None:
        H = np.asarray(self.H, dtype=np.float64)
        labels = np.asarray(self.labels).astype(np.int64)
        if H.ndim != 2 or labels.shape != (H.shape[0],):
            raise BatchError(f"H {H.shape} and labels {labels.shape} disagree")
        if not np.all(np.isin(labels, (0, 1))):
            raise BatchError("labels must be 0 or 1")
        for c in (0, 1):
            if np.count_nonzero(labels == c) < 2:
                raise BatchError(f"class {c} has fewer than 2 members")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "labels", labels)

    def members(self, c: int) -> np.ndarray:
        return self.H[self.labels == c]


@dataclass(frozen=True)
class ScatterSet:
    per_class: tuple[np.ndarray, ...]
    S_w: np.ndarray
    S_t: np.ndarray
    S_b: np.ndarray


@dataclass(frozen=True)
class EigenResult:
    values: np.ndarray   # ascending
    vectors: np.ndarray  # columns, e^T (S_w + lam I) e = 1


def scatter_class(Hc: np.ndarray) -> np.ndarray:
    Hc = np.asarray(Hc, dtype=np.float64)
    n = len(Hc)
    if n < 2:
        raise BatchError(f"class scatter needs at least 2 points, got {n}")
    Xc = Hc - Hc.mean(axis=0)
    return Xc.T @ Xc / (n - 1)


def scatter_within(batch: LdaBatch) -> np.ndarray:
    return (scatter_class(batch.members(0)) + scatter_class(batch.members(1))) / 2.0


def scatter_total(batch: LdaBatch) -> np.ndarray:
    X = batch.H - batch.H.mean(axis=0)
    return X.T @ X / (len(X) - 1)


def scatter_between(S_t: np.ndarray, S_w: np.ndarray) -> np.ndarray:
    return S_t - S_w


def scatters(batch: LdaBatch) -> ScatterSet:
    per_class = (scatter_class(batch.members(0)), scatter_class(batch.members(1)))
    S_w = (per_class[0] + per_class[1]) / 2.0
    S_t = scatter_total(batch)
    return ScatterSet(per_class, S_w, S_t, scatter_between(S_t, S_w))


def solve_generalized_eigen(S_b: np.ndarray, S_w: np.ndarray, lam: float) -> EigenResult:
    """Cholesky-whiten ``S_w + lam I`` and solve the resulting symmetric problem."""
    if lam <= 0:
        raise ConfigError("regularizer must be positive")
    l = S_w.shape[0]
    A = S_w + lam * np.eye(l)
    try:
        L = np.linalg.cholesky((A + A.T) / 2.0)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"Cholesky of the regularized within-class scatter failed: {exc}") from None
    Linv = np.linalg.solve(L, np.eye(l))
    M = Linv @ S_b @ Linv.T
    M = (M + M.T) / 2.0
    values, U = np.linalg.eigh(M)
    return EigenResult(values, Linv.T @ U)


def deeplda_loss(values: np.ndarray, eps: float) -> tuple[float, np.ndarray]:
    """Returns (loss, active index array); active = eigenvalues below min + eps."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("no eigenvalues")
    active = np.flatnonzero(values < values.min() + eps)
    return -float(values[active].mean()), active


def deeplda_backward(batch: LdaBatch, eig: EigenResult, active: np.ndarray) -> np.ndarray:
    """d loss / d H with the active set held fixed.

    Uses dv_i = e_i^T dS_b e_i - v_i e_i^T d(S_w + lam I) e_i and S_b = S_t - S_w.
    """
    k = len(active)
    E = eig.vectors[:, active]
    v = eig.values[active]
    # d loss / d v_i = -1/k on the active set
    G_b = -(E @ E.T) / k
    G_a = (E * v) @ E.T / k
    G_t = G_b
    G_w = -G_b + G_a
    H = batch.H
    X = H - H.mean(axis=0)
    dH = 2.0 * X @ G_t / (len(H) - 1)
    for c in (0, 1):
        idx = batch.labels == c
        Xc = H[idx] - H[idx].mean(axis=0)
        dH[idx] += 2.0 * Xc @ G_w / (2.0 * (len(Xc) - 1))
    return dH


def batch_objective(H: np.ndarray, labels: np.ndarray, eps: float, lam: float):
    """Forward pipeline for one batch: (loss, dloss/dH, eigenvalues, active)."""
    batch = LdaBatch(H, labels)
    sc = scatters(batch)
    eig = solve_generalized_eigen(sc.S_b, sc.S_w, lam)
    loss, active = deeplda_loss(eig.values, eps)
    return loss, deeplda_backward(batch, eig, active), eig.values, active


@dataclass
class DeepLdaConfig:
    input_dim: int = 512
    hidden: tuple[int, int] = (256, 256)
    output_dim: int = 16
    eps_threshold: float = 1.0
    s_w_regularizer: float = 1e-3
    negatives_per_batch: int = 0  # 0 = match the relevance list length (min 2)
    learning_rate: float = 0.001
    epochs: int = 30
    seed: int = 0
    distance: str = "euclidean"

    def __post_init__(self) -> None:
        self.hidden = tuple(int(h) for h in self.hidden)

    def validate(self) -> None:
        if self.input_dim < 1 or len(self.hidden) != 2 or any(h < 1 for h in self.hidden):
            raise ConfigError("input_dim and both hidden widths must be >= 1")
        if self.output_dim < 2:
            raise ConfigError("output_dim must be >= 2")
        if not self.eps_threshold > 0 or not self.s_w_regularizer > 0:
            raise ConfigError("eps_threshold and s_w_regularizer must be positive")
        if self.negatives_per_batch < 0 or self.negatives_per_batch == 1:
            raise ConfigError("negatives_per_batch must be 0 (auto) or >= 2")
        if not self.learning_rate > 0 or self.epochs < 0:
            raise ConfigError("learning_rate must be positive and epochs >= 0")
        if self.distance not in ("euclidean", "cosine"):
            raise ConfigError("distance must be 'euclidean' or 'cosine'")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DeepLdaConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


_LAYERS = ("fc0", "fc1", "out")


@dataclass
class DeepLdaModel:
    config: DeepLdaConfig
    params: dict[str, np.ndarray]
    adam: dict[str, AdamState] = field(default_factory=dict)
    history: list[dict] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    @staticmethod
    def param_names() -> list[str]:
        return [f"{n}.{p}" for n in _LAYERS for p in ("W", "b")]

    def forward(self, X: np.ndarray):
        h = np.asarray(X, dtype=np.float64)
        if h.shape[-1] != self.config.input_dim:
            raise ShapeError(f"model expects {self.config.input_dim}-d input, got {h.shape[-1]}")
        caches = []
        for name, act in zip(_LAYERS, ("relu", "relu", "linear")):
            h, c = layers.dense_forward(self.params[f"{name}.W"], self.params[f"{name}.b"], h, act)
            caches.append(c)
        return h, caches

    def backward(self, dH: np.ndarray, caches) -> dict[str, np.ndarray]:
        g = {}
        d = dH
        for name, c in zip(reversed(_LAYERS), reversed(caches)):
            d, g[f"{name}.W"], g[f"{name}.b"] = layers.dense_backward(d, c)
        return g

    def embed(self, X: np.ndarray) -> np.ndarray:
        return self.forward(X)[0]


def param_shapes(cfg: DeepLdaConfig) -> dict[str, tuple[int, ...]]:
    dims = [cfg.input_dim, *cfg.hidden, cfg.output_dim]
    shapes = {}
    for name, fan_in, fan_out in zip(_LAYERS, dims[:-1], dims[1:]):
        shapes[f"{name}.W"] = (fan_out, fan_in)
        shapes[f"{name}.b"] = (fan_out,)
    return shapes


def init_deeplda(cfg: DeepLdaConfig) -> DeepLdaModel:
    cfg.validate()
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    params = {}
    for name, shape in param_shapes(cfg).items():
        params[name] = layers.glorot_uniform(rng, *shape) if len(shape) == 2 else np.zeros(shape)
    model = DeepLdaModel(cfg, params)
    model.adam = {k: AdamState.zeros_like(v) for k, v in params.items()}
    return model


def train_deeplda(cfg: DeepLdaConfig, videos: FeatureSet, rel: RelevanceTable,
                  train_ids: Iterable[str]) -> DeepLdaModel:
    """ADAM on the thresholded-eigenvalue loss, one relevance row per batch.

    ``history`` records per epoch the mean loss and the mean smallest eigenvalue.
    """
    train_ids = sorted(set(train_ids))
    cfg = DeepLdaConfig.from_dict({**cfg.to_dict(), "input_dim": videos.dim})
    model = init_deeplda(cfg)
    universe = [v for v in train_ids if v in videos]
    rows = []
    for q in train_ids:
        if q not in rel or q not in videos:
            continue
        pos = [c for c in rel[q] if c in videos and c in set(universe)]
        n_neg = cfg.negatives_per_batch or max(2, len(pos))
        excluded = set(rel[q]) | {q}
        pool = [c for c in universe if c not in excluded]
        if len(pos) < 2 or len(pool) < n_neg:
            log.warning("relevance row %s unusable (%d relevant, %d negatives available); skipped",
                        q, len(pos), len(pool))
            continue
        rows.append((q, pos, pool, n_neg))
    if not rows and cfg.epochs > 0:
        raise DataError("no relevance row yields a valid two-class batch")

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    for epoch in range(cfg.epochs):
        losses, mins = [], []
        for r in rng.permutation(len(rows)):
            q, pos, pool, n_neg = rows[r]
            neg = [pool[i] for i in rng.choice(len(pool), size=n_neg, replace=False)]
            X = videos.matrix(pos + neg)
            labels = np.array([1] * len(pos) + [0] * len(neg))
            with np.errstate(over="ignore", invalid="ignore"):
                H, caches = model.forward(X)
            if not np.all(np.isfinite(H)):
                raise TrainingDiverged(f"non-finite embedding at epoch {epoch + 1}")
            loss, dH, values, _ = batch_objective(H, labels, cfg.eps_threshold, cfg.s_w_regularizer)
            if not np.isfinite(loss) or not np.all(np.isfinite(dH)):
                raise TrainingDiverged(f"non-finite DeepLDA loss at epoch {epoch + 1}")
            grads = model.backward(dH, caches)
            for k in model.params:
                model.params[k], model.adam[k] = adam_step(
                    model.params[k], grads[k], model.adam[k], cfg.learning_rate)
                if not np.all(np.isfinite(model.params[k])):
                    raise TrainingDiverged(f"parameter {k} became non-finite at epoch {epoch + 1}")
            losses.append(loss)
            mins.append(float(values[0]))
        entry = {"epoch": epoch + 1, "loss": float(np.mean(losses)), "min_eigenvalue": float(np.mean(mins))}
        model.history.append(entry)
        log.info("epoch %d/%d loss %.6f min eigenvalue %.6f", epoch + 1, cfg.epochs,
                 entry["loss"], entry["min_eigenvalue"])
    return model


def rank_candidates_lda(model: DeepLdaModel, query: str, candidates: Iterable[str],
                        videos: FeatureSet, k: int | None = None) -> RankingResult:
    """Candidates by ascending embedding distance to the query (ties by id)."""
    cands = sorted(set(candidates) - {query})
    if not cands:
        return RankingResult(query, ())
    emb = model.embed(videos.matrix([query] + cands))
    return rank_by_score(query, cands, _distances(emb[0], emb[1:], model.config.distance), ascending=True, k=k)


def _distances(q: np.ndarray, C: np.ndarray, kind: str) -> np.ndarray:
    if kind == "cosine":
        den = np.linalg.norm(C, axis=1) * np.linalg.norm(q)
        with np.errstate(invalid="ignore", divide="ignore"):
            sim = np.where(den > 0, C @ q / np.where(den > 0, den, 1.0), 0.0)
        return 1.0 - sim
    return np.sqrt(((C - q) ** 2).sum(axis=1))


def rank_all_lda(model: DeepLdaModel, queries: Sequence[str], candidates: Sequence[str],
                 videos: FeatureSet, k: int | None = None) -> list[RankingResult]:
    """Batched :func:`rank_candidates_lda` sharing one embedding pass."""
    ids = sorted(set(queries) | set(candidates))
    emb = dict(zip(ids, model.embed(videos.matrix(ids))))
    cand_sorted = sorted(set(candidates))
    C = np.stack([emb[c] for c in cand_sorted]) if cand_sorted else np.zeros((0, model.config.output_dim))
    out = []
    for q in queries:
        keep = [i for i, c in enumerate(cand_sorted) if c != q]
        d = _distances(emb[q], C[keep], model.config.distance)
        out.append(rank_by_score(q, [cand_sorted[i] for i in keep], d, ascending=True, k=k))
    return out


# --- serialization ----------------------------------------------------------------

def dump_deeplda(m: DeepLdaModel) -> bytes:
    w = Writer()
    w.raw(MODEL_MAGIC)
    w.u16(MODEL_VERSION)
    w.json(m.config.to_dict())
    w.json(m.provenance)
    names = m.param_names()
    w.u32(len(names))
    for n in names:
        w.tensor(m.params[n])
    return w.getvalue()


def parse_deeplda(data: bytes) -> DeepLdaModel:
    r = Reader(data)
    r.expect_magic(MODEL_MAGIC)
    version = r.u16()
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported DeepLDA model version {version}")
    cfg = DeepLdaConfig.from_dict(r.json())
    provenance = r.json()
    names = DeepLdaModel.param_names()
    if r.u32() != len(names):
        raise FormatError("parameter count does not match the config")
    params = {n: r.tensor().astype(np.float64) for n in names}
    r.expect_end()
    expected = param_shapes(cfg)
    if any(params[n].shape != expected[n] for n in names):
        raise FormatError("parameter shapes do not match the config")
    model = DeepLdaModel(cfg, params, provenance=provenance)
    model.adam = {k: AdamState.zeros_like(v) for k, v in params.items()}
    return model


def save_deeplda(m: DeepLdaModel, path) -> None:
    write_file(path, dump_deeplda(m))


def load_deeplda(path) -> DeepLdaModel:
    return parse_deeplda(read_file(path))
