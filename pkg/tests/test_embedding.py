"""Three-stage embedding pipeline tests."""
import numpy as np
import pytest

from animerec.autonet import TrainConfig, forward_batch, masked_mse, unmasked_mse
from animerec.dataset import N_PREFIX, GenreMatrix, RatingMatrix
from animerec.embedding import (
    EmbeddingError,
    append_genres,
    build_anime_vectors,
    embed_catalog,
    select_top_users,
    stage1_encode,
    stage1_train_config,
    stage2_encode,
    stage2_train_config,
)


def matrix_with_counts(counts):
    """One user per (user_id, rating_count) pair over enough items."""
    n_items = max(counts.values()) + 5
    user_ids = sorted(counts)
    values = np.zeros((len(user_ids), N_PREFIX + n_items))
    for i, uid in enumerate(user_ids):
        values[i, N_PREFIX:N_PREFIX + counts[uid]] = 7
    return RatingMatrix(values, user_ids, list(range(1, n_items + 1)))


# --- top-user selection --------------------------------------------------------

def test_select_top_users_count_and_order():
    rm = matrix_with_counts({1: 50, 2: 10, 3: 80})
    rows = select_top_users(rm, 20)
    assert [rm.user_ids[r] for r in rows] == [3, 1]
    assert len(rows) == 2


def test_select_top_users_threshold_is_strict():
    rm = matrix_with_counts({1: 20, 2: 21})
    rows = select_top_users(rm, 20)
    assert [rm.user_ids[r] for r in rows] == [2]


def test_select_top_users_tie_breaks_ascending_id():
    rm = matrix_with_counts({9: 30, 4: 30, 7: 30})
    rows = select_top_users(rm, 5)
    assert [rm.user_ids[r] for r in rows] == [4, 7, 9]


def test_select_top_users_empty_is_fatal():
    rm = matrix_with_counts({1: 3, 2: 4})
    with pytest.raises(EmbeddingError):
        select_top_users(rm, 100)


def test_select_top_users_t_zero_selects_everyone():
    rm = matrix_with_counts({1: 1, 2: 2, 3: 3})
    rows = select_top_users(rm, 0)
    assert sorted(rm.user_ids[r] for r in rows) == [1, 2, 3]


# --- stage-A vectors -----------------------------------------------------------

def small_matrix():
    # 3 users x 3 items; user 30 is sparse
    values = np.zeros((3, N_PREFIX + 3))
    values[0, N_PREFIX:] = [7, 4, 0]
    values[1, N_PREFIX:] = [0, 9, 2]
    values[2, N_PREFIX:] = [0, 0, 1]
    return RatingMatrix(values, [10, 20, 30], [101, 102, 103])


def test_anime_vector_is_rating_column():
    rm = small_matrix()
    vectors = build_anime_vectors(rm, [0, 1])
    by_id = {v.anime_id: v for v in vectors}
    np.testing.assert_array_equal(by_id[101].values, [7, 0])
    assert by_id[101].stage == "ratings"


def test_anime_vectors_transpose_rating_block():
    rm = small_matrix()
    vectors = build_anime_vectors(rm, [0, 1])
    stacked = np.stack([v.values for v in vectors])
    np.testing.assert_array_equal(stacked,
                                  rm.item_block()[[0, 1], :].T)


def test_anime_unrated_by_top_users_gets_zero_vector():
    values = np.zeros((2, N_PREFIX + 2))
    values[0, N_PREFIX] = 8
    values[1, N_PREFIX] = 6
    rm = RatingMatrix(values, [1, 2], [11, 12])
    vectors = build_anime_vectors(rm, [0, 1])
    np.testing.assert_array_equal(vectors[1].values, [0, 0])


def test_top_user_order_respected_in_vectors():
    rm = small_matrix()
    forward_order = build_anime_vectors(rm, [0, 1])
    reverse_order = build_anime_vectors(rm, [1, 0])
    np.testing.assert_array_equal(forward_order[0].values[::-1],
                                  reverse_order[0].values)


# --- stage 1 -------------------------------------------------------------------

def rank1_vectors(n_titles=20, m=6, seed=0):
    rng = np.random.default_rng(seed)
    u = rng.uniform(1.0, 3.0, size=n_titles)
    v = rng.uniform(1.0, 3.0, size=m)
    dense = np.clip(np.round(np.outer(u, v)), 1, 10).astype(float)
    dense[rng.random(dense.shape) < 0.2] = 0.0
    from animerec.embedding import AnimeVector
    return [AnimeVector(100 + i, dense[i], "ratings")
            for i in range(n_titles)], dense


def stage1_cfg(**kw):
    base = dict(epochs=200, learning_rate=0.01, batch_size=8, seed=1,
                hidden_dims=(8,), bottleneck_dim=2)
    base.update(kw)
    return TrainConfig(**base)


def test_stage1_config_is_forced_masked_selu_relu():
    cfg = stage1_train_config(stage1_cfg(loss_masking="unmasked",
                                         final_activation="none",
                                         hidden_activation="tanh"))
    assert cfg.loss_masking == "masked"
    assert cfg.hidden_activation == "selu"
    assert cfg.final_activation == "relu"


def test_stage1_reconstruction_on_rank1_fixture():
    vectors, dense = rank1_vectors()
    encoded, model = stage1_encode(vectors, stage1_cfg(), return_model=True)
    out, _ = forward_batch(model, dense)
    losses = [masked_mse(dense[i], out[i]) for i in range(len(dense))]
    assert float(np.mean(losses)) < 0.5
    assert len(encoded) == len(vectors)
    assert all(len(v) == 2 for v in encoded.values())


def test_stage1_identical_inputs_identical_embeddings():
    vectors, _ = rank1_vectors()
    from animerec.embedding import AnimeVector
    clone = AnimeVector(999, vectors[0].values.copy(), "ratings")
    encoded = stage1_encode(vectors + [clone], stage1_cfg())
    np.testing.assert_array_equal(encoded[100], encoded[999])


# --- genre append ----------------------------------------------------------------

def toy_genres():
    values = np.array([[1.0, 0.0, 0.0],
                       [0.0, 1.0, 1.0]])
    return GenreMatrix(values, [5, 6], ["Action", "Drama", "Sports"])


def test_append_genres_concatenates_after_learned_part():
    gm = toy_genres()
    out = append_genres({5: np.array([0.3, -0.1])}, gm)
    np.testing.assert_array_equal(out[5], [0.3, -0.1, 1.0, 0.0, 0.0])


def test_append_zero_embedding_zero_genres():
    gm = GenreMatrix(np.zeros((1, 3)), [5], ["A", "B", "C"])
    out = append_genres({5: np.zeros(2)}, gm)
    np.testing.assert_array_equal(out[5], np.zeros(5))


def test_append_genres_output_length_is_d_plus_g():
    gm = toy_genres()
    out = append_genres({5: np.array([1.0, 2.0]), 6: np.array([3.0, 4.0])},
                        gm)
    assert all(len(v) == 2 + 3 for v in out.values())


def test_append_genres_missing_row_fatal():
    gm = toy_genres()
    with pytest.raises(EmbeddingError):
        append_genres({7: np.zeros(2)}, gm)


# --- stage 2 -------------------------------------------------------------------

def subspace_vectors(n=30, ambient=8, rank=3, seed=2, noise=0.01):
    rng = np.random.default_rng(seed)
    basis = rng.normal(size=(rank, ambient))
    coords = rng.normal(size=(n, rank))
    data = coords @ basis + noise * rng.normal(size=(n, ambient))
    return {200 + i: data[i] for i in range(n)}, data


def stage2_cfg(**kw):
    base = dict(epochs=400, learning_rate=0.01, batch_size=8, seed=3,
                hidden_dims=(6,), bottleneck_dim=3)
    base.update(kw)
    return TrainConfig(**base)


def test_stage2_config_is_forced_unmasked_none():
    cfg = stage2_train_config(stage2_cfg(loss_masking="masked",
                                         final_activation="relu"))
    assert cfg.loss_masking == "unmasked"
    assert cfg.final_activation == "none"


def test_stage2_reconstructs_subspace_data():
    vectors, data = subspace_vectors()
    # PCA oracle: rank-3 truncation already explains the data, so an
    # autoencoder with d=3 has a reachable optimum well under the bound
    centered = data - data.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    pca_recon = centered @ vt[:3].T @ vt[:3] + data.mean(axis=0)
    pca_mse = float(np.mean((data - pca_recon) ** 2))
    assert pca_mse < 0.01

    embset, model = stage2_encode(vectors, stage2_cfg(), return_model=True)
    ids = sorted(vectors)
    ordered = np.stack([vectors[a] for a in ids])
    out, _ = forward_batch(model, ordered)
    assert unmasked_mse(ordered.ravel(), out.ravel()) < 0.05
    assert set(embset.vectors) == set(vectors)
    assert all(len(v) == 3 for v in embset.vectors.values())


def test_stage2_identical_inputs_identical_outputs():
    vectors, _ = subspace_vectors(n=10)
    vectors[999] = vectors[200].copy()
    embset = stage2_encode(vectors, stage2_cfg(epochs=30))
    np.testing.assert_array_equal(embset.vectors[200], embset.vectors[999])


def test_stage2_provenance_carried_and_extended():
    vectors, _ = subspace_vectors(n=10)
    embset = stage2_encode(vectors, stage2_cfg(epochs=5),
                           provenance={"t": 4, "m": 6, "g": 3})
    assert embset.provenance["t"] == 4
    assert embset.provenance["stage2_seed"] == 3
    assert len(embset.provenance["stage2_sha256"]) == 64


# --- full pipeline ---------------------------------------------------------------

def pipeline_fixture(seed=0, n_users=12, n_items=10, n_genres=4):
    rng = np.random.default_rng(seed)
    values = np.zeros((n_users, N_PREFIX + n_items))
    values[:, N_PREFIX:] = rng.integers(0, 11, size=(n_users, n_items))
    rm = RatingMatrix(values, list(range(1, n_users + 1)),
                      list(range(101, 101 + n_items)))
    gvals = (rng.random((n_items, n_genres)) < 0.4).astype(float)
    gm = GenreMatrix(gvals, rm.anime_ids,
                     [f"G{j}" for j in range(n_genres)])
    return rm, gm


def quick_cfgs():
    s1 = TrainConfig(epochs=40, learning_rate=0.01, batch_size=8, seed=1,
                     hidden_dims=(6,), bottleneck_dim=2)
    s2 = TrainConfig(epochs=40, learning_rate=0.01, batch_size=8, seed=2,
                     hidden_dims=(6,), bottleneck_dim=2)
    return s1, s2


def test_embed_catalog_covers_every_title_once():
    rm, gm = pipeline_fixture()
    s1, s2 = quick_cfgs()
    embset = embed_catalog(rm, gm, t=2, stage1_config=s1, stage2_config=s2)
    assert sorted(embset.vectors) == rm.anime_ids
    assert embset.dim == 2
    prov = embset.provenance
    assert prov["t"] == 2 and prov["g"] == 4
    assert prov["m"] >= 1
    assert len(prov["stage1_sha256"]) == len(prov["stage2_sha256"]) == 64
    assert prov["genres"] == gm.genres


def test_embed_catalog_deterministic():
    rm, gm = pipeline_fixture(seed=5)
    s1, s2 = quick_cfgs()
    e1 = embed_catalog(rm, gm, t=2, stage1_config=s1, stage2_config=s2)
    e2 = embed_catalog(rm, gm, t=2, stage1_config=s1, stage2_config=s2)
    for a in e1.vectors:
        np.testing.assert_array_equal(e1.vectors[a], e2.vectors[a])
    assert e1.provenance == e2.provenance


def test_embed_catalog_rejects_mismatched_d():
    rm, gm = pipeline_fixture()
    s1, s2 = quick_cfgs()
    s2 = TrainConfig(epochs=5, learning_rate=0.01, batch_size=8, seed=2,
                     hidden_dims=(6,), bottleneck_dim=3)
    with pytest.raises(EmbeddingError):
        embed_catalog(rm, gm, t=2, stage1_config=s1, stage2_config=s2)


def test_genre_signal_survives_final_embedding():
    # linear probe from final embeddings to the genre block should beat
    # the same probe from row-shuffled embeddings
    rm, gm = pipeline_fixture(seed=7, n_users=20, n_items=16, n_genres=3)
    s1 = TrainConfig(epochs=150, learning_rate=0.01, batch_size=8, seed=1,
                     hidden_dims=(8,), bottleneck_dim=4)
    s2 = TrainConfig(epochs=150, learning_rate=0.01, batch_size=8, seed=2,
                     hidden_dims=(8,), bottleneck_dim=4)
    embset = embed_catalog(rm, gm, t=2, stage1_config=s1, stage2_config=s2)
    E = embset.as_array()
    G = gm.values
    ones = np.ones((len(E), 1))
    X = np.hstack([E, ones])

    def probe_sse(X, G):
        coef, *_ = np.linalg.lstsq(X, G, rcond=None)
        return float(((X @ coef - G) ** 2).sum())

    rng = np.random.default_rng(0)
    shuffled = X.copy()
    rng.shuffle(shuffled[:, :-1])
    assert probe_sse(X, G) < probe_sse(shuffled, G)
