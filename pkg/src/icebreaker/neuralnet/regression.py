"""Two-branch regression network over frame sequences and video vectors.

Branch one runs a time-distributed ReLU dense layer over the padded frame
sequence and feeds it to an LSTM; branch two is a ReLU dense stack over the
video-level vector. The concatenated branch outputs go through a sigmoid
head with one unit per candidate video.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np

from .._binio import Reader, Writer, read_file, write_file
from ..dataset import FeatureSet, RelevanceTable
from ..errors import ConfigError, DataError, FormatError, ShapeError, TrainingDiverged
from ..evaluation import RankingResult, rank_by_score
from . import layers
from .adam import AdamState, adam_step
from .losses import LOSSES, batch_loss

log = logging.getLogger(__name__)

MODEL_MAGIC = b"ICBR"
MODEL_VERSION = 1


@dataclass
class RegressionNetConfig:
    frame_dim: int = 2048
    video_dim: int = 512
    td_dense_units: int = 256
    lstm_units: int = 128
    dense_units: tuple[int, ...] = (256,)
    n_outputs: int = 2
    max_frames: int = 120
    loss: str = "cosine_proximity"
    learning_rate: float = 0.001
    epochs: int = 50
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self) -> None:
        self.dense_units = tuple(int(u) for u in self.dense_units)

    def validate(self) -> None:
        units = [self.frame_dim, self.video_dim, self.td_dense_units, self.lstm_units,
                 self.max_frames, self.batch_size, *self.dense_units]
        if any(int(u) < 1 for u in units):
            raise ConfigError("all layer widths, max_frames and batch_size must be >= 1")
        if self.n_outputs < 2:
            raise ConfigError("n_outputs must be >= 2")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {sorted(LOSSES)}")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["dense_units"] = list(self.dense_units)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RegressionNetConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def pad_frames(seq: np.ndarray, max_frames: int) -> tuple[np.ndarray, np.ndarray]:
    """Keep the first ``max_frames`` frames, zero-pad the rest; returns (frames, mask)."""
    seq = np.asarray(seq, dtype=np.float64)[:max_frames]
    out = np.zeros((max_frames, seq.shape[1]))
    out[:len(seq)] = seq
    mask = np.zeros(max_frames, dtype=bool)
    mask[:len(seq)] = True
    return out, mask


@dataclass
class RegressionModel:
    config: RegressionNetConfig
    candidates: list[str]
    params: dict[str, np.ndarray]
    adam: dict[str, AdamState] = field(default_factory=dict)
    history: list[float] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def param_names(self) -> list[str]:
        names = ["td.W", "td.b", "lstm.W", "lstm.U", "lstm.b"]
        for k in range(len(self.config.dense_units)):
            names += [f"dense{k}.W", f"dense{k}.b"]
        return names + ["head.W", "head.b"]

    def forward(self, frames: np.ndarray, mask: np.ndarray, video: np.ndarray):
        p = self.params
        a, td_cache = layers.time_distributed_dense(p["td.W"], p["td.b"], frames)
        h, lstm_cache = layers.lstm_forward(
            {"W": p["lstm.W"], "U": p["lstm.U"], "b": p["lstm.b"]}, a, mask)
        d = np.asarray(video, dtype=np.float64)
        dense_caches = []
        for k in range(len(self.config.dense_units)):
            d, c = layers.dense_forward(p[f"dense{k}.W"], p[f"dense{k}.b"], d)
            dense_caches.append(c)
        z, split = layers.concat_forward(h, d)
        out, head_cache = layers.dense_forward(p["head.W"], p["head.b"], z, "sigmoid")
        return out, (td_cache, lstm_cache, dense_caches, split, head_cache)

    def backward(self, dout: np.ndarray, cache) -> dict[str, np.ndarray]:
        td_cache, lstm_cache, dense_caches, split, head_cache = cache
        g: dict[str, np.ndarray] = {}
        dz, g["head.W"], g["head.b"] = layers.dense_backward(dout, head_cache)
        dh, dd = layers.concat_backward(dz, split)
        for k in range(len(dense_caches) - 1, -1, -1):
            dd, g[f"dense{k}.W"], g[f"dense{k}.b"] = layers.dense_backward(dd, dense_caches[k])
        da, lg = layers.lstm_backward(dh, lstm_cache)
        g["lstm.W"], g["lstm.U"], g["lstm.b"] = lg["W"], lg["U"], lg["b"]
        _, g["td.W"], g["td.b"] = layers.time_distributed_backward(da, td_cache)
        return g

    def batch_inputs(self, ids: Sequence[str], frames: FeatureSet, videos: FeatureSet):
        cfg = self.config
        if frames.dim != cfg.frame_dim or videos.dim != cfg.video_dim:
            raise ShapeError(f"model expects frame/video dims {cfg.frame_dim}/{cfg.video_dim}, "
                             f"data has {frames.dim}/{videos.dim}")
        F = np.zeros((len(ids), cfg.max_frames, cfg.frame_dim))
        M = np.zeros((len(ids), cfg.max_frames), dtype=bool)
        V = np.zeros((len(ids), cfg.video_dim))
        for r, vid in enumerate(ids):
            if vid not in frames or vid not in videos:
                raise DataError(f"video {vid!r} lacks frame-level or video-level features")
            F[r], M[r] = pad_frames(frames[vid], cfg.max_frames)
            V[r] = videos[vid]
        return F, M, V

    def scores(self, ids: Sequence[str], frames: FeatureSet, videos: FeatureSet,
               chunk: int = 64) -> np.ndarray:
        out = []
        for s in range(0, len(ids), chunk):
            F, M, V = self.batch_inputs(ids[s:s + chunk], frames, videos)
            out.append(self.forward(F, M, V)[0])
        return np.concatenate(out) if out else np.zeros((0, len(self.candidates)))


def param_shapes(cfg: RegressionNetConfig) -> dict[str, tuple[int, ...]]:
    shapes = {
        "td.W": (cfg.td_dense_units, cfg.frame_dim),
        "td.b": (cfg.td_dense_units,),
        "lstm.W": (4 * cfg.lstm_units, cfg.td_dense_units),
        "lstm.U": (4 * cfg.lstm_units, cfg.lstm_units),
        "lstm.b": (4 * cfg.lstm_units,),
    }
    width = cfg.video_dim
    for k, units in enumerate(cfg.dense_units):
        shapes[f"dense{k}.W"] = (units, width)
        shapes[f"dense{k}.b"] = (units,)
        width = units
    shapes["head.W"] = (cfg.n_outputs, cfg.lstm_units + width)
    shapes["head.b"] = (cfg.n_outputs,)
    return shapes


def init_regression(cfg: RegressionNetConfig, candidates: Sequence[str]) -> RegressionModel:
    """Glorot-uniform weights, zero biases (LSTM forget gate at 1), seeded by ``cfg.seed``."""
    cfg.validate()
    if len(candidates) != cfg.n_outputs:
        raise ConfigError(f"{len(candidates)} candidates for {cfg.n_outputs} outputs")
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0]))
    p: dict[str, np.ndarray] = {}
    p["td.W"] = layers.glorot_uniform(rng, cfg.td_dense_units, cfg.frame_dim)
    p["td.b"] = np.zeros(cfg.td_dense_units)
    lstm = layers.lstm_init(rng, cfg.td_dense_units, cfg.lstm_units)
    p["lstm.W"], p["lstm.U"], p["lstm.b"] = lstm["W"], lstm["U"], lstm["b"]
    width = cfg.video_dim
    for k, units in enumerate(cfg.dense_units):
        p[f"dense{k}.W"] = layers.glorot_uniform(rng, units, width)
        p[f"dense{k}.b"] = np.zeros(units)
        width = units
    p["head.W"] = layers.glorot_uniform(rng, cfg.n_outputs, cfg.lstm_units + width)
    p["head.b"] = np.zeros(cfg.n_outputs)
    model = RegressionModel(cfg, list(candidates), p)
    model.adam = {k: AdamState.zeros_like(v) for k, v in p.items()}
    return model


def multi_hot(cands: Iterable[str], index: dict[str, int], n: int) -> np.ndarray:
    t = np.zeros(n)
    for c in cands:
        if c in index:
            t[index[c]] = 1.0
    return t


def build_and_train_regression(cfg: RegressionNetConfig, frames: FeatureSet, videos: FeatureSet,
                               rel: RelevanceTable, train_ids: Iterable[str]) -> RegressionModel:
    """Train on the queries of ``train_ids``; outputs index the sorted training videos.

    Queries with no relevant training video are skipped (their multi-hot target is empty).
    """
    train_ids = sorted(set(train_ids))
    for vid in train_ids:
        if vid not in frames or vid not in videos:
            raise DataError(f"training video {vid!r} lacks frame-level or video-level features")
    cfg = RegressionNetConfig.from_dict({**cfg.to_dict(), "frame_dim": frames.dim,
                                         "video_dim": videos.dim, "n_outputs": len(train_ids)})
    model = init_regression(cfg, train_ids)
    index = {v: i for i, v in enumerate(train_ids)}

    queries = []
    for q in train_ids:
        if q in rel and any(c in index for c in rel[q]):
            queries.append(q)
        else:
            log.warning("query %s has no relevant training video; skipped", q)
    if not queries and cfg.epochs > 0:
        raise DataError("no training query has a relevant training video")
    F, M, V = model.batch_inputs(queries, frames, videos)
    T = np.stack([multi_hot(rel[q], index, cfg.n_outputs) for q in queries]) if queries else None

    shuffle_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 1]))
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(queries))
        total, seen = 0.0, 0
        for s in range(0, len(order), cfg.batch_size):
            b = order[s:s + cfg.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                out, cache = model.forward(F[b], M[b], V[b])
            if not np.all(np.isfinite(out)):
                raise TrainingDiverged(f"non-finite network output at epoch {epoch + 1}")
            loss, dout = batch_loss(cfg.loss, out, T[b])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch + 1}")
            grads = model.backward(dout, cache)
            for k in model.params:
                model.params[k], model.adam[k] = adam_step(
                    model.params[k], grads[k], model.adam[k], cfg.learning_rate)
                if not np.all(np.isfinite(model.params[k])):
                    raise TrainingDiverged(f"parameter {k} became non-finite at epoch {epoch + 1}")
            total += loss * len(b)
            seen += len(b)
        mean = total / seen
        model.history.append(mean)
        log.info("epoch %d/%d loss %.6f", epoch + 1, cfg.epochs, mean)
    return model


def predict_regression(model: RegressionModel, frames_seq: np.ndarray, video_vec: np.ndarray,
                       k: int, query: str | None = None) -> RankingResult:
    """Top-``k`` candidates by output probability, the query itself excluded."""
    cfg = model.config
    F, M = pad_frames(frames_seq, cfg.max_frames)
    video_vec = np.asarray(video_vec, dtype=np.float64)
    if F.shape[1] != cfg.frame_dim or video_vec.shape != (cfg.video_dim,):
        raise ShapeError("query features do not match the model's input dims")
    out = model.forward(F[None], M[None], video_vec[None])[0][0]
    return rank_output(model.candidates, out, k, query)


def rank_output(candidates: Sequence[str], out: np.ndarray, k: int, query: str | None) -> RankingResult:
    if k < 1:
        raise ShapeError("K must be >= 1")
    if len(out) != len(candidates):
        raise ShapeError(f"{len(out)} outputs for {len(candidates)} candidates")
    keep = [i for i, c in enumerate(candidates) if c != query]
    return rank_by_score(query or "", [candidates[i] for i in keep], out[keep], ascending=False, k=k)


def predict_many(model: RegressionModel, queries: Sequence[str], frames: FeatureSet,
                 videos: FeatureSet, k: int) -> list[RankingResult]:
    out = model.scores(list(queries), frames, videos)
    return [rank_output(model.candidates, out[r], k, q) for r, q in enumerate(queries)]


# --- serialization ----------------------------------------------------------------

def dump_regression(m: RegressionModel) -> bytes:
    w = Writer()
    w.raw(MODEL_MAGIC)
    w.u16(MODEL_VERSION)
    w.json(m.config.to_dict())
    w.u32(len(m.candidates))
    for c in m.candidates:
        b = c.encode("utf-8")
        w.u16(len(b))
        w.raw(b)
    w.json(m.provenance)
    names = m.param_names()
    w.u32(len(names))
    for n in names:
        w.tensor(m.params[n])
    return w.getvalue()


def parse_regression(data: bytes) -> RegressionModel:
    r = Reader(data)
    r.expect_magic(MODEL_MAGIC)
    version = r.u16()
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported regression model version {version}")
    cfg = RegressionNetConfig.from_dict(r.json())
    candidates = []
    for _ in range(r.u32()):
        try:
            candidates.append(r.raw(r.u16()).decode("utf-8"))
        except UnicodeDecodeError:
            raise FormatError("candidate id is not valid UTF-8") from None
    provenance = r.json()
    model = RegressionModel(cfg, candidates, {}, provenance=provenance)
    names = model.param_names()
    if r.u32() != len(names):
        raise FormatError("parameter count does not match the config")
    for n in names:
        model.params[n] = r.tensor().astype(np.float64)
    r.expect_end()
    expected = param_shapes(cfg)
    if len(candidates) != cfg.n_outputs or any(model.params[n].shape != expected[n] for n in names):
        raise FormatError("parameter shapes do not match the config")
    model.adam = {k: AdamState.zeros_like(v) for k, v in model.params.items()}
    return model


def save_regression(m: RegressionModel, path) -> None:
    write_file(path, dump_regression(m))


def load_regression(path) -> RegressionModel:
    return parse_regression(read_file(path))
