"""Train / load / rank dispatch across the four model variants."""

from __future__ import annotations

import logging
from dataclasses import replace
from typing import Sequence

from ._binio import read_file, write_file
from .config import RunConfig
from .dataset import Dataset
from .deeplda import DeepLdaModel, dump_deeplda, parse_deeplda, rank_all_lda, train_deeplda
from .errors import FormatError, ShapeError
from .evaluation import RankingResult, rank_by_score
from .neuralnet.regression import (
    RegressionModel,
    build_and_train_regression,
    dump_regression,
    parse_regression,
    predict_many,
)
from .pairwise_rf import ForestModel, dump_forest, fit_forest, parse_forest, sample_pairs
from .distances import pair_features

log = logging.getLogger(__name__)

Model = ForestModel | RegressionModel | DeepLdaModel


def train(cfg: RunConfig, data: Dataset) -> Model:
    train_ids = sorted(data.split.train)
    if cfg.model == "rf":
        rc = cfg.rf
        pairs = sample_pairs(data.relevance, data.videos, train_ids, rc.seed)
        log.info("sampled %d balanced pairs", len(pairs))
        model = fit_forest(pairs, rc.n_trees, rc.max_depth, rc.min_samples_leaf,
                           rc.features_per_split, rc.seed)
    elif cfg.model in ("reg_cosine", "reg_poisson"):
        loss = "cosine_proximity" if cfg.model == "reg_cosine" else "poisson"
        model = build_and_train_regression(replace(cfg.reg, loss=loss), data.frames, data.videos,
                                           data.relevance, train_ids)
    else:
        model = train_deeplda(cfg.deeplda, data.videos, data.relevance, train_ids)
    model.provenance = cfg.effective()
    return model


def dump_model(model: Model) -> bytes:
    if isinstance(model, ForestModel):
        return dump_forest(model)
    if isinstance(model, RegressionModel):
        return dump_regression(model)
    return dump_deeplda(model)


def parse_model(data: bytes) -> Model:
    magic = data[:4]
    parsers = {b"ICBF": parse_forest, b"ICBR": parse_regression, b"ICBL": parse_deeplda}
    if magic not in parsers:
        raise FormatError(f"unknown model magic {magic!r}")
    return parsers[magic](data)


def save_model(model: Model, path) -> None:
    write_file(path, dump_model(model))


def load_model(path) -> Model:
    return parse_model(read_file(path))


def rank(model: Model, data: Dataset, queries: Sequence[str], k: int) -> list[RankingResult]:
    """Top-``k`` rankings for ``queries``; the candidate pool is every other video
    (for the regression model: its fixed output space)."""
    videos = data.videos
    if isinstance(model, RegressionModel):
        return predict_many(model, list(queries), data.frames, videos, k)
    if isinstance(model, DeepLdaModel):
        if videos.dim != model.config.input_dim:
            raise ShapeError(f"model expects {model.config.input_dim}-d video features, data has {videos.dim}")
        return rank_all_lda(model, queries, videos.ids(), videos, k)
    pool = sorted(videos.ids())
    out = []
    for q in queries:
        cands = [c for c in pool if c != q]
        scores = model.predict(pair_features(videos[q], videos.matrix(cands)))
        out.append(rank_by_score(q, cands, scores, ascending=True, k=k))
    return out
