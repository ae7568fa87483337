"""Three-stage anime embedding pipeline.

Stage A builds one vector per title out of the ratings given by the heaviest
raters. Stage 1 compresses those to d dimensions with a masked autoencoder,
the genre one-hot block is appended, and stage 2 re-encodes the concatenation
down to d with an exact-reconstruction autoencoder (no output activation,
unmasked loss). The result is one d-dimensional hybrid vector per title.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from .autonet import (
    AutoencoderModel,
    TrainConfig,
    build_model,
    forward_batch,
    train,
    weights_to_bytes,
)
from .dataset import N_PREFIX, GenreMatrix, RatingMatrix


class EmbeddingError(Exception):
    pass


@dataclass(frozen=True)
class AnimeVector:
    anime_id: int
    values: np.ndarray
    stage: str   # "ratings" (length m), "appended" (d + g), "final" (d)


@dataclass
class EmbeddingSet:
    """Final d-dimensional vector per title plus pipeline provenance."""
    vectors: dict[int, np.ndarray]
    provenance: dict

    @property
    def dim(self) -> int:
        return len(next(iter(self.vectors.values())))

    def ordered_ids(self) -> list[int]:
        return sorted(self.vectors)

    def as_array(self) -> np.ndarray:
        """Catalog matrix in ascending anime_id order."""
        return np.stack([self.vectors[a] for a in self.ordered_ids()])


def stage1_train_config(config: TrainConfig) -> TrainConfig:
    """Stage 1 always trains masked with selu hidden and relu output."""
    return replace(config, loss_masking="masked", hidden_activation="selu",
                   final_activation="relu")


def stage2_train_config(config: TrainConfig) -> TrainConfig:
    """Stage 2 reproduces exact inputs: no output activation, unmasked."""
    return replace(config, loss_masking="unmasked", hidden_activation="selu",
                   final_activation="none")


def select_top_users(matrix: RatingMatrix, t: int) -> list[int]:
    """Rows of users with strictly more than t rated titles.

    Ordered by descending rating count, ties broken by ascending user_id.
    """
    if t < 0:
        raise EmbeddingError("t must be non-negative")
    counts = (matrix.item_block() > 0).sum(axis=1)
    picked = [(int(-counts[i]), matrix.user_ids[i], i)
              for i in range(len(counts)) if counts[i] > t]
    if not picked:
        raise EmbeddingError(
            f"no user has more than t={t} ratings; lower t")
    picked.sort()
    return [row for _, _, row in picked]


def build_anime_vectors(matrix: RatingMatrix,
                        top_rows: list[int]) -> list[AnimeVector]:
    """Stage-A vectors: per title, the ratings from each selected user."""
    if not top_rows:
        raise EmbeddingError("top user selection is empty")
    block = matrix.item_block()[top_rows, :]   # m x n_items
    return [AnimeVector(anime_id, block[:, j].copy(), "ratings")
            for j, anime_id in enumerate(matrix.anime_ids)]


def _encode_with(model: AutoencoderModel, ids, data) -> dict[int, np.ndarray]:
    _, bottlenecks = forward_batch(model, data)
    return {a: bottlenecks[i].copy() for i, a in enumerate(ids)}


def stage1_encode(vectors, config: TrainConfig, return_model=False):
    """Train the masked rating autoencoder, return bottleneck per title."""
    cfg = stage1_train_config(config)
    ids = [v.anime_id for v in vectors]
    data = np.stack([np.asarray(v.values, dtype=np.float64)
                     for v in vectors])
    model = build_model(cfg.layer_dims(data.shape[1]),
                        hidden_activation=cfg.hidden_activation,
                        final_activation=cfg.final_activation,
                        seed=cfg.seed, final_bias=3.0)
    model, _ = train(model, data, cfg)
    encoded = _encode_with(model, ids, data)
    return (encoded, model) if return_model else encoded


def append_genres(embeddings: dict[int, np.ndarray],
                  genre_matrix: GenreMatrix) -> dict[int, np.ndarray]:
    """Concatenate each learned vector with its genre one-hot row."""
    rows = {a: i for i, a in enumerate(genre_matrix.anime_ids)}
    out = {}
    for anime_id, vec in embeddings.items():
        if anime_id not in rows:
            raise EmbeddingError(f"no genre row for anime {anime_id}")
        out[anime_id] = np.concatenate(
            [vec, genre_matrix.values[rows[anime_id]]])
    return out


def stage2_encode(vectors: dict[int, np.ndarray], config: TrainConfig,
                  provenance: dict | None = None,
                  return_model=False):
    """Train the exact-reconstruction autoencoder, return the EmbeddingSet."""
    cfg = stage2_train_config(config)
    ids = sorted(vectors)
    data = np.stack([np.asarray(vectors[a], dtype=np.float64) for a in ids])
    model = build_model(cfg.layer_dims(data.shape[1]),
                        hidden_activation=cfg.hidden_activation,
                        final_activation=cfg.final_activation,
                        seed=cfg.seed)
    model, _ = train(model, data, cfg)
    prov = dict(provenance or {})
    prov.setdefault("d", cfg.bottleneck_dim)
    prov["stage2_seed"] = cfg.seed
    prov["stage2_sha256"] = hashlib.sha256(
        weights_to_bytes(model)).hexdigest()
    embset = EmbeddingSet(_encode_with(model, ids, data), prov)
    return (embset, model) if return_model else embset


def embed_catalog(matrix: RatingMatrix, genre_matrix: GenreMatrix, t: int,
                  stage1_config: TrainConfig,
                  stage2_config: TrainConfig) -> EmbeddingSet:
    """Run the full stage A -> 1 -> append -> 2 pipeline over a catalog."""
    if stage1_config.bottleneck_dim != stage2_config.bottleneck_dim:
        raise EmbeddingError("stage 1 and stage 2 must share the same d")
    top_rows = select_top_users(matrix, t)
    vectors = build_anime_vectors(matrix, top_rows)
    stage1, model1 = stage1_encode(vectors, stage1_config, return_model=True)
    appended = append_genres(stage1, genre_matrix)
    g = len(genre_matrix.genres)
    provenance = {
        "t": t,
        "m": len(top_rows),
        "d": stage2_config.bottleneck_dim,
        "g": g,
        "stage1_seed": stage1_config.seed,
        "stage1_sha256": hashlib.sha256(weights_to_bytes(model1)).hexdigest(),
        "genres": list(genre_matrix.genres),
    }
    return stage2_encode(appended, stage2_config, provenance)
