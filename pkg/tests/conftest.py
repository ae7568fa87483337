"""Shared fixtures: a small synthetic corpus with planted taste structure
and a fully built knowledge base, constructed once per session."""
import shutil

import numpy as np
import pytest

from animerec import knowledgebase as kbmod
from animerec.autonet import (
    TrainConfig,
    build_model,
    forward_batch,
    masked_rmse,
    train,
)
from animerec.dataset import (
    build_matrices,
    cleanse,
    parse_catalog,
    split_train_test,
)
from animerec.embedding import embed_catalog
from animerec.knowledgebase import KnowledgeBase
from animerec.spectral import cluster_catalog

GENRE_BLOCKS = [
    ("Action", "Shounen"),
    ("Comedy", "SliceOfLife"),
    ("Drama", "Romance"),
    ("Mecha", "SciFi"),
]
STUDIOS = ["Bones", "Ghibli", "Madhouse", "Trigger"]
SOURCES = ["manga", "original", "novel"]

N_TITLES = 40
N_USERS = 60
REFERENCE_YEAR = 2020


def corpus_rows(seed=0):
    """Two opposed taste groups over four genre blocks of ten titles."""
    rng = np.random.default_rng(seed)
    anime_rows = []
    for anime_id in range(1, N_TITLES + 1):
        block = (anime_id - 1) // 10
        genres = "|".join(GENRE_BLOCKS[block])
        studio = STUDIOS[anime_id % len(STUDIOS)]
        source = SOURCES[anime_id % len(SOURCES)]
        mean = round(float(rng.uniform(5.5, 8.5)), 2)
        members = int(rng.integers(200, 5000))
        anime_rows.append(
            f"{anime_id},Title {anime_id},{genres},{studio},{source},"
            f"{mean},{members}\n")
    # one title with no studio: cleansing fodder
    anime_rows.append("41,Orphan,Action,,manga,6.0,999\n")

    user_rows = []
    rating_rows = []
    ts = 1000
    for user_id in range(1, N_USERS + 1):
        gender = "M" if rng.random() < 0.5 else "F"
        birth_year = int(rng.integers(1980, 2012))
        user_rows.append(f"{user_id},{gender},{birth_year}\n")
        group = user_id % 2       # taste group: loves blocks 0-1 or 2-3
        n_rated = int(rng.integers(18, 32))
        rated = rng.choice(N_TITLES, size=n_rated, replace=False) + 1
        for anime_id in rated:
            block = (anime_id - 1) // 10
            loved = (block < 2) == (group == 0)
            base = 8.5 if loved else 2.5
            score = int(np.clip(round(base + rng.normal(0, 1.0)), 1, 10))
            roll = rng.random()
            if roll < 0.04:
                status, score = "plan_to_watch", 0
            elif roll < 0.08:
                status = "dropped"
            else:
                status = "watched"
            rating_rows.append(
                f"{user_id},{anime_id},{score},{status},{ts}\n")
            ts += 1
    return anime_rows, user_rows, rating_rows


def write_corpus(directory):
    directory.mkdir(parents=True, exist_ok=True)
    anime_rows, user_rows, rating_rows = corpus_rows()
    a = directory / "anime.csv"
    u = directory / "users.csv"
    r = directory / "ratings.csv"
    a.write_text("anime_id,name,genres,studio,source,mean_score,members\n"
                 + "".join(anime_rows), encoding="utf-8")
    u.write_text("user_id,gender,birth_year\n" + "".join(user_rows),
                 encoding="utf-8")
    r.write_text("user_id,anime_id,score,status,timestamp\n"
                 + "".join(rating_rows), encoding="utf-8")
    return a, u, r


def primary_train_config(seed=1):
    return TrainConfig(epochs=150, learning_rate=0.01, batch_size=16,
                       seed=seed, hidden_dims=(24,), bottleneck_dim=8)


def stage_configs(seed1=2, seed2=3):
    s1 = TrainConfig(epochs=120, learning_rate=0.01, batch_size=16,
                     seed=seed1, hidden_dims=(16,), bottleneck_dim=4)
    s2 = TrainConfig(epochs=120, learning_rate=0.01, batch_size=16,
                     seed=seed2, hidden_dims=(16,), bottleneck_dim=4)
    return s1, s2


def build_fixture_kb(corpus_dir, kb_dir, seed=1):
    """Full pipeline over the synthetic corpus, persisted to kb_dir."""
    files = (corpus_dir / "anime.csv", corpus_dir / "users.csv",
             corpus_dir / "ratings.csv")
    titles, users, ratings = parse_catalog(*files,
                                           reference_year=REFERENCE_YEAR)
    titles, users, ratings = cleanse(titles, users, ratings,
                                     min_ratings_per_user=10)
    matrix, genre_matrix = build_matrices(titles, users, ratings)

    cfg = primary_train_config(seed)
    train_matrix, heldout = split_train_test(matrix, 0.05, seed=seed)
    model = build_model(cfg.layer_dims(matrix.values.shape[1]),
                        seed=cfg.seed, final_bias=3.0)
    model, history = train(model, train_matrix.values, cfg)
    outputs, _ = forward_batch(model, train_matrix.values)
    rows, cols = zip(*sorted(heldout))
    heldout_rmse = masked_rmse(matrix.values[rows, cols],
                               np.clip(outputs[rows, cols], 0, 10))

    embeddings = embed_catalog(matrix, genre_matrix, t=10,
                               stage1_config=stage_configs()[0],
                               stage2_config=stage_configs()[1])
    clusters, candidates = cluster_catalog(embeddings, k_neighbors=6,
                                           min_cluster_size=3, k_max=10,
                                           seed=seed)
    kb = KnowledgeBase(
        catalog=titles, rating_matrix=matrix, genre_matrix=genre_matrix,
        model=model, model_meta={"heldout_rmse": float(heldout_rmse),
                                 "final_loss": history[-1]},
        embeddings=embeddings, clusters=clusters,
        build={"seed": seed, "t": 10, "k_candidates": candidates,
               "min_ratings_per_user": 10, "holdout": 0.05})
    kbmod.save(kb, kb_dir)
    return kb


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    directory = tmp_path_factory.mktemp("corpus")
    write_corpus(directory)
    return directory


@pytest.fixture(scope="session")
def master_kb_dir(tmp_path_factory, corpus_dir):
    directory = tmp_path_factory.mktemp("kb-master") / "kb"
    build_fixture_kb(corpus_dir, directory)
    return directory


@pytest.fixture
def kb_dir(master_kb_dir, tmp_path):
    """Private copy of the master KB for tests that mutate state."""
    target = tmp_path / "kb"
    shutil.copytree(master_kb_dir, target)
    return target
