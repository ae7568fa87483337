"""Knowledge base persistence.

One directory holds every precomputed artifact the serving path needs:
catalog, rating/genre matrices, the trained rating model, embeddings,
clusters with their opposite map, and per-session profile logs. A manifest
records a sha256 per artifact plus a self-hash, so any byte flip anywhere
fails the load. Saves are atomic (build a temp directory, swap it in) and
deterministic: identical artifacts serialize to identical bytes.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import shutil
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autonet import (
    AutoencoderModel,
    checkpoint_manifest,
    model_from_bytes,
    weights_to_bytes,
)
from .dataset import N_PREFIX, AnimeTitle, GenreMatrix, RatingMatrix
from .embedding import EmbeddingSet
from .hybridfilter import UserProfile
from .spectral import ClusterModel

KB_FORMAT = "animerec-kb-v1"

CATALOG_FILE = "catalog.csv"
MATRIX_MANIFEST = "matrix.manifest.json"
MATRIX_BLOB = "matrix.f32"
GENRES_MANIFEST = "genres.manifest.json"
GENRES_BLOB = "genres.f32"
EMBED_MANIFEST = "embeddings.manifest.json"
EMBED_BLOB = "embeddings.f32"
CLUSTERS_FILE = "clusters.json"
MODEL_MANIFEST = "model.manifest.json"
MODEL_BLOB = "model.f32"
MANIFEST_FILE = "manifest.json"
PROFILES_DIR = "profiles"


class KnowledgeBaseError(Exception):
    pass


class ProfileNotFound(KnowledgeBaseError):
    pass


@dataclass
class KnowledgeBase:
    """In-memory view of the artifact store; later stages may be absent."""
    catalog: list[AnimeTitle]
    rating_matrix: RatingMatrix | None = None
    genre_matrix: GenreMatrix | None = None
    model: AutoencoderModel | None = None
    model_meta: dict = field(default_factory=dict)
    embeddings: EmbeddingSet | None = None
    clusters: ClusterModel | None = None
    build: dict = field(default_factory=dict)

    def titles_by_id(self) -> dict[int, AnimeTitle]:
        return {t.anime_id: t for t in self.catalog}


def validate(kb: KnowledgeBase) -> None:
    """Eager cross-reference checks; raises on any inconsistency."""
    if not kb.catalog:
        raise KnowledgeBaseError("knowledge base has an empty catalog")
    catalog_ids = [t.anime_id for t in kb.catalog]
    if len(set(catalog_ids)) != len(catalog_ids):
        raise KnowledgeBaseError("duplicate anime_id in catalog")
    id_set = set(catalog_ids)
    if kb.rating_matrix is not None:
        if set(kb.rating_matrix.anime_ids) != id_set:
            raise KnowledgeBaseError(
                "rating matrix columns do not match the catalog")
        items = kb.rating_matrix.item_block()
        if items.min() < 0 or items.max() > 10:
            raise KnowledgeBaseError("rating matrix entries out of range")
    if kb.genre_matrix is not None:
        if set(kb.genre_matrix.anime_ids) != id_set:
            raise KnowledgeBaseError(
                "genre matrix rows do not match the catalog")
    if kb.embeddings is not None:
        if set(kb.embeddings.vectors) != id_set:
            raise KnowledgeBaseError(
                "embedding ids do not match the catalog")
        if (kb.genre_matrix is not None
                and kb.embeddings.provenance.get("genres") is not None
                and list(kb.embeddings.provenance["genres"])
                != list(kb.genre_matrix.genres)):
            raise KnowledgeBaseError(
                "embeddings were built against a different genre "
                "vocabulary than the stored genre matrix")
    if kb.clusters is not None:
        if set(kb.clusters.assignment) != id_set:
            raise KnowledgeBaseError(
                "cluster assignment does not cover the catalog")
        if set(kb.clusters.opposite) != id_set:
            raise KnowledgeBaseError(
                "opposite-cluster map does not cover the catalog")
    if kb.model is not None and kb.rating_matrix is not None:
        expected = N_PREFIX + len(kb.rating_matrix.anime_ids)
        if kb.model.input_dim != expected:
            raise KnowledgeBaseError(
                f"model input dim {kb.model.input_dim} does not match "
                f"matrix width {expected}")


def _canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False).encode("utf-8")


def _f32_bytes(array: np.ndarray) -> bytes:
    return np.ascontiguousarray(array, dtype="<f4").tobytes()


def _catalog_csv_bytes(catalog) -> bytes:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["anime_id", "name", "genres", "studio", "source",
                     "mean_score", "members"])
    for t in sorted(catalog, key=lambda t: t.anime_id):
        mean = "" if t.mean_score is None else repr(float(t.mean_score))
        writer.writerow([t.anime_id, t.name, "|".join(sorted(t.genres)),
                         t.studio, t.source, mean, t.members])
    return buf.getvalue().encode("utf-8")


def _catalog_from_bytes(raw: bytes) -> list[AnimeTitle]:
    reader = csv.reader(io.StringIO(raw.decode("utf-8")))
    header = next(reader)
    if header[0] != "anime_id":
        raise KnowledgeBaseError("catalog.csv header is malformed")
    out = []
    for row in reader:
        genres = frozenset(g for g in row[2].split("|") if g)
        mean = float(row[5]) if row[5] else None
        out.append(AnimeTitle(int(row[0]), row[1], genres, row[3], row[4],
                              mean, int(row[6])))
    return out


def _artifact_bytes(kb: KnowledgeBase) -> dict[str, bytes]:
    """Serialize every present artifact to its canonical byte form."""
    files: dict[str, bytes] = {CATALOG_FILE: _catalog_csv_bytes(kb.catalog)}
    if kb.rating_matrix is not None:
        rm = kb.rating_matrix
        files[MATRIX_MANIFEST] = _canonical_json({
            "format": KB_FORMAT, "user_ids": rm.user_ids,
            "anime_ids": rm.anime_ids,
            "shape": list(rm.values.shape), "prefix": N_PREFIX})
        files[MATRIX_BLOB] = _f32_bytes(rm.values)
    if kb.genre_matrix is not None:
        gm = kb.genre_matrix
        files[GENRES_MANIFEST] = _canonical_json({
            "format": KB_FORMAT, "genres": gm.genres,
            "anime_ids": gm.anime_ids, "shape": list(gm.values.shape)})
        files[GENRES_BLOB] = _f32_bytes(gm.values)
    if kb.model is not None:
        files[MODEL_MANIFEST] = _canonical_json(
            checkpoint_manifest(kb.model, kb.model_meta))
        files[MODEL_BLOB] = weights_to_bytes(kb.model)
    if kb.embeddings is not None:
        es = kb.embeddings
        ids = es.ordered_ids()
        files[EMBED_MANIFEST] = _canonical_json({
            "format": KB_FORMAT, "anime_ids": ids, "d": es.dim,
            "provenance": es.provenance})
        files[EMBED_BLOB] = _f32_bytes(es.as_array())
    if kb.clusters is not None:
        cm = kb.clusters
        files[CLUSTERS_FILE] = _canonical_json({
            "format": KB_FORMAT, "k": cm.k,
            "min_cluster_size": cm.min_cluster_size, "seed": cm.seed,
            "assignment": [[a, cm.assignment[a]]
                           for a in sorted(cm.assignment)],
            "opposite": [[a, cm.opposite[a]] for a in sorted(cm.opposite)],
            "centroid": [float(x) for x in cm.centroid]})
    return files


def save(kb: KnowledgeBase, directory) -> str:
    """Write the KB atomically; returns the manifest self-hash."""
    validate(kb)
    directory = Path(directory)
    files = _artifact_bytes(kb)
    hashes = {name: hashlib.sha256(data).hexdigest()
              for name, data in sorted(files.items())}
    manifest = {"format": KB_FORMAT, "artifacts": hashes, "build": kb.build}
    manifest["self"] = hashlib.sha256(_canonical_json(manifest)).hexdigest()

    parent = directory.parent
    parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=directory.name + ".tmp-", dir=parent))
    try:
        for name, data in files.items():
            (tmp / name).write_bytes(data)
        (tmp / MANIFEST_FILE).write_bytes(
            json.dumps(manifest, sort_keys=True, indent=1).encode("utf-8"))
        (tmp / PROFILES_DIR).mkdir()
        if (directory / PROFILES_DIR).is_dir():
            # session logs survive re-saves of the precomputed artifacts
            shutil.copytree(directory / PROFILES_DIR, tmp / PROFILES_DIR,
                            dirs_exist_ok=True)
        if directory.exists():
            graveyard = parent / (directory.name + ".old")
            if graveyard.exists():
                shutil.rmtree(graveyard)
            os.replace(directory, graveyard)
            os.replace(tmp, directory)
            shutil.rmtree(graveyard)
        else:
            os.replace(tmp, directory)
    except Exception:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return manifest["self"]


def _read_manifest(directory: Path) -> dict:
    path = directory / MANIFEST_FILE
    if not path.exists():
        raise KnowledgeBaseError(f"no knowledge base at {directory} "
                                 f"(missing {MANIFEST_FILE})")
    manifest = json.loads(path.read_bytes())
    claimed = manifest.pop("self", None)
    actual = hashlib.sha256(_canonical_json(manifest)).hexdigest()
    if claimed != actual:
        raise KnowledgeBaseError("corrupt knowledge base: manifest "
                                 "self-hash mismatch")
    return manifest


def load(directory) -> KnowledgeBase:
    """Read and fully validate a stored knowledge base."""
    directory = Path(directory)
    manifest = _read_manifest(directory)
    raw: dict[str, bytes] = {}
    for name, expected in manifest["artifacts"].items():
        path = directory / name
        if not path.exists():
            raise KnowledgeBaseError(f"missing artifact: {name}")
        data = path.read_bytes()
        if hashlib.sha256(data).hexdigest() != expected:
            raise KnowledgeBaseError(f"corrupt knowledge base: {name} "
                                     "hash mismatch")
        raw[name] = data

    if CATALOG_FILE not in raw:
        raise KnowledgeBaseError("missing artifact: " + CATALOG_FILE)
    kb = KnowledgeBase(catalog=_catalog_from_bytes(raw[CATALOG_FILE]),
                       build=manifest.get("build", {}))
    if MATRIX_MANIFEST in raw:
        meta = json.loads(raw[MATRIX_MANIFEST])
        shape = tuple(meta["shape"])
        values = np.frombuffer(raw[MATRIX_BLOB], dtype="<f4").astype(
            np.float64).reshape(shape)
        kb.rating_matrix = RatingMatrix(values, meta["user_ids"],
                                        meta["anime_ids"])
    if GENRES_MANIFEST in raw:
        meta = json.loads(raw[GENRES_MANIFEST])
        values = np.frombuffer(raw[GENRES_BLOB], dtype="<f4").astype(
            np.float64).reshape(tuple(meta["shape"]))
        kb.genre_matrix = GenreMatrix(values, meta["anime_ids"],
                                      meta["genres"])
    if MODEL_MANIFEST in raw:
        meta = json.loads(raw[MODEL_MANIFEST])
        kb.model = model_from_bytes(meta, raw[MODEL_BLOB])
        kb.model_meta = meta.get("meta", {})
    if EMBED_MANIFEST in raw:
        meta = json.loads(raw[EMBED_MANIFEST])
        ids = meta["anime_ids"]
        values = np.frombuffer(raw[EMBED_BLOB], dtype="<f4").astype(
            np.float64).reshape(len(ids), meta["d"])
        kb.embeddings = EmbeddingSet(
            {a: values[i] for i, a in enumerate(ids)}, meta["provenance"])
    if CLUSTERS_FILE in raw:
        meta = json.loads(raw[CLUSTERS_FILE])
        kb.clusters = ClusterModel(
            assignment={a: c for a, c in meta["assignment"]},
            k=meta["k"], min_cluster_size=meta["min_cluster_size"],
            centroid=np.asarray(meta["centroid"], dtype=np.float64),
            opposite={a: c for a, c in meta["opposite"]},
            seed=meta["seed"])
    validate(kb)
    return kb


# --- profile logs -------------------------------------------------------------
# One JSON-lines file per session. Events append; loading replays them, so a
# re-rate collapses to a single entry at its new temporal position.

def _profile_path(directory, session_id: str) -> Path:
    if not session_id or "/" in session_id or session_id.startswith("."):
        raise KnowledgeBaseError(f"invalid session id {session_id!r}")
    return Path(directory) / PROFILES_DIR / f"{session_id}.jsonl"


def _append_event(directory, session_id: str, event: dict) -> None:
    path = _profile_path(directory, session_id)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh:
        fh.write(json.dumps(event, sort_keys=True) + "\n")


def create_profile(directory, session_id: str, gender: int,
                   age_category: int) -> UserProfile:
    _append_event(directory, session_id,
                  {"op": "create", "gender": gender,
                   "age_category": age_category})
    return UserProfile(session_id, gender, age_category)


def append_rating(directory, session_id: str, anime_id: int, score: int,
                  timestamp: int) -> None:
    _append_event(directory, session_id,
                  {"op": "rate", "anime_id": anime_id, "score": score,
                   "ts": timestamp})


def append_feedback(directory, session_id: str, score: int,
                    timestamp: int) -> None:
    _append_event(directory, session_id,
                  {"op": "feedback", "score": score, "ts": timestamp})


def load_profile(directory, session_id: str) -> UserProfile:
    profile, _ = load_profile_with_feedback(directory, session_id)
    return profile


def load_profile_with_feedback(directory, session_id: str):
    """Replay a session log; returns (UserProfile, feedback score list)."""
    path = _profile_path(directory, session_id)
    if not path.exists():
        raise ProfileNotFound(f"unknown session {session_id!r}")
    profile = None
    feedback = []
    for lineno, line in enumerate(path.read_text("utf-8").splitlines(), 1):
        if not line.strip():
            continue
        event = json.loads(line)
        op = event.get("op")
        if op == "create":
            profile = UserProfile(session_id, event["gender"],
                                  event["age_category"])
        elif op == "rate":
            if profile is None:
                raise KnowledgeBaseError(
                    f"{path}:{lineno}: rating before profile creation")
            profile.rate(event["anime_id"], event["score"], event["ts"])
        elif op == "feedback":
            feedback.append(event["score"])
        else:
            raise KnowledgeBaseError(f"{path}:{lineno}: unknown event {op!r}")
    if profile is None:
        raise KnowledgeBaseError(f"{path}: no create event")
    return profile, feedback


def store_profile(directory, profile: UserProfile) -> None:
    """Persist a whole profile as a fresh compacted log."""
    path = _profile_path(directory, profile.session_id)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [json.dumps({"op": "create", "gender": profile.gender,
                         "age_category": profile.age_category},
                        sort_keys=True)]
    for anime_id, score, ts in profile.ratings:
        lines.append(json.dumps({"op": "rate", "anime_id": anime_id,
                                 "score": score, "ts": ts}, sort_keys=True))
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def list_sessions(directory) -> list[str]:
    root = Path(directory) / PROFILES_DIR
    if not root.is_dir():
        return []
    return sorted(p.stem for p in root.glob("*.jsonl"))
