"""Corpus parsing, cleansing and matrix construction.

Reads the three CSV corpora (titles, users, ratings), applies the cleansing
rules, and encodes everything into the two dense matrices the rest of the
pipeline works from: the user-anime rating matrix with its demographic prefix
columns, and the anime-genre indicator matrix.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

UNKNOWN = "UNKNOWN"
STATUSES = ("watched", "dropped", "plan_to_watch", "other")

# demographic prefix layout: [gender, cat2, cat3, cat4, cat5]
N_PREFIX = 5


class DatasetError(Exception):
    pass


@dataclass(frozen=True)
class AnimeTitle:
    anime_id: int
    name: str
    genres: frozenset[str]
    studio: str
    source: str
    mean_score: float | None
    members: int


@dataclass(frozen=True)
class UserRecord:
    user_id: int
    gender: int          # 0 = male, 1 = female
    age_category: int    # 1..5


@dataclass(frozen=True)
class RatingEntry:
    user_id: int
    anime_id: int
    score: int           # 1..10, or 0 for unrated
    status: str
    timestamp: int


@dataclass
class RatingMatrix:
    """Users x (demographic prefix + items) matrix with id <-> index maps."""
    values: np.ndarray
    user_ids: list[int]
    anime_ids: list[int]
    user_row: dict[int, int] = field(init=False)
    anime_col: dict[int, int] = field(init=False)

    def __post_init__(self):
        self.user_row = {u: i for i, u in enumerate(self.user_ids)}
        # column indices are into the full matrix, prefix included
        self.anime_col = {a: N_PREFIX + j for j, a in enumerate(self.anime_ids)}

    @property
    def n_items(self) -> int:
        return len(self.anime_ids)

    def item_block(self) -> np.ndarray:
        """View of the item rating columns (prefix stripped)."""
        return self.values[:, N_PREFIX:]

    def copy(self) -> "RatingMatrix":
        return RatingMatrix(self.values.copy(), list(self.user_ids),
                            list(self.anime_ids))


@dataclass
class GenreMatrix:
    values: np.ndarray      # n_titles x n_genres, entries 0/1
    anime_ids: list[int]
    genres: list[str]

    def row_of(self, anime_id: int) -> np.ndarray:
        return self.values[self.anime_ids.index(anime_id)]


def age_to_category(age: int) -> int:
    """Band an age into the five demographic categories."""
    if age < 11:
        return 1
    if age < 16:
        return 2
    if age < 20:
        return 3
    if age < 27:
        return 4
    return 5


def _note(errors: list | None, msg: str) -> None:
    log.warning("%s", msg)
    if errors is not None:
        errors.append(msg)


def _open_checked(path, expected_header, kind):
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"{kind} file not found: {path}")
    fh = path.open(newline="", encoding="utf-8")
    reader = csv.reader(fh)
    try:
        header = next(reader)
    except StopIteration:
        fh.close()
        raise DatasetError(f"{kind} file is empty: {path}")
    if [h.strip() for h in header] != expected_header:
        fh.close()
        raise DatasetError(
            f"{kind} header mismatch: expected {expected_header}, "
            f"got {header}")
    return fh, reader


def _parse_anime(path, errors):
    header = ["anime_id", "name", "genres", "studio", "source",
              "mean_score", "members"]
    fh, reader = _open_checked(path, header, "anime")
    titles = []
    with fh:
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                if len(row) != len(header):
                    raise ValueError(f"expected {len(header)} fields")
                anime_id = int(row[0])
                if anime_id <= 0:
                    raise ValueError("anime_id must be positive")
                name = row[1]
                genres = frozenset(
                    g.strip() for g in row[2].split("|") if g.strip())
                studio = row[3].strip() or UNKNOWN
                source = row[4].strip() or UNKNOWN
                mean_raw = row[5].strip()
                mean_score = None
                if mean_raw:
                    mean_score = float(mean_raw)
                    if not (1.0 <= mean_score <= 10.0):
                        raise ValueError("mean_score out of [1,10]")
                members = int(row[6])
                if members < 0:
                    raise ValueError("members must be non-negative")
            except ValueError as exc:
                _note(errors, f"anime row {lineno}: {exc}")
                continue
            titles.append(AnimeTitle(anime_id, name, genres, studio,
                                     source, mean_score, members))
    return titles


def _parse_users(path, reference_year, errors):
    fh, reader = _open_checked(path, ["user_id", "gender", "birth_year"],
                               "users")
    users = []
    with fh:
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                if len(row) != 3:
                    raise ValueError("expected 3 fields")
                user_id = int(row[0])
                if user_id <= 0:
                    raise ValueError("user_id must be positive")
                gender_raw = row[1].strip().upper()
                if gender_raw not in ("M", "F"):
                    raise ValueError(f"gender {row[1]!r} not in M/F")
                birth_year = int(row[2])
                age = reference_year - birth_year
                if age < 0:
                    raise ValueError("birth year in the future")
            except ValueError as exc:
                _note(errors, f"users row {lineno}: {exc}")
                continue
            users.append(UserRecord(user_id, 0 if gender_raw == "M" else 1,
                                    age_to_category(age)))
    return users


def _parse_ratings(path, errors):
    fh, reader = _open_checked(
        path, ["user_id", "anime_id", "score", "status", "timestamp"],
        "ratings")
    out = []
    with fh:
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                if len(row) != 5:
                    raise ValueError("expected 5 fields")
                user_id = int(row[0])
                anime_id = int(row[1])
                score = int(row[2])
                if not (0 <= score <= 10):
                    raise ValueError(f"score {score} out of range")
                status = row[3].strip()
                if status not in STATUSES:
                    raise ValueError(f"unknown status {status!r}")
                timestamp = int(row[4])
            except ValueError as exc:
                _note(errors, f"ratings row {lineno}: {exc}")
                continue
            out.append(RatingEntry(user_id, anime_id, score, status,
                                   timestamp))
    return out


def parse_catalog(anime_file, users_file, ratings_file, reference_year=2020,
                  errors: list | None = None):
    """Parse the three corpora into record sequences.

    Malformed rows are excluded, logged, and (when an `errors` list is
    passed) collected there, one message per bad row. Missing files and
    malformed headers raise DatasetError.
    """
    titles = _parse_anime(anime_file, errors)
    users = _parse_users(users_file, reference_year, errors)
    ratings = _parse_ratings(ratings_file, errors)
    return titles, users, ratings


def cleanse(titles, users, ratings, min_ratings_per_user: int = 20):
    """Apply the corpus cleansing rules, in a fixed order.

    (a) titles with UNKNOWN studio or source go, along with their ratings
    (c) plan_to_watch entries are discarded outright
    (d) dropped entries get the lowest score, 1
    (b) users are thresholded on how many titles they actually rated

    Ratings pointing at ids absent from the title/user lists are dropped as
    part of (a) so referential integrity holds on the output.
    """
    if min_ratings_per_user < 1:
        raise DatasetError("min_ratings_per_user must be positive")

    kept_titles = [t for t in titles
                   if t.studio != UNKNOWN and t.source != UNKNOWN]
    title_ids = {t.anime_id for t in kept_titles}
    user_ids = {u.user_id for u in users}
    step_a = [r for r in ratings
              if r.anime_id in title_ids and r.user_id in user_ids]
    step_c = [r for r in step_a if r.status != "plan_to_watch"]
    step_d = [RatingEntry(r.user_id, r.anime_id, 1, r.status, r.timestamp)
              if r.status == "dropped" else r
              for r in step_c]

    rated_count: dict[int, int] = {}
    for r in step_d:
        if r.score > 0:
            rated_count[r.user_id] = rated_count.get(r.user_id, 0) + 1
    kept_users = [u for u in users
                  if rated_count.get(u.user_id, 0) >= min_ratings_per_user]
    kept_user_ids = {u.user_id for u in kept_users}
    step_b = [r for r in step_d if r.user_id in kept_user_ids]

    if not kept_titles or not kept_users or not step_b:
        raise DatasetError(
            "cleansing left an empty corpus "
            f"(titles={len(kept_titles)}, users={len(kept_users)}, "
            f"ratings={len(step_b)})")
    return kept_titles, kept_users, step_b


def build_matrices(titles, users, ratings, errors: list | None = None):
    """Encode cleansed records into the rating and genre matrices.

    Rows and columns are ordered by ascending user_id / anime_id, genre
    columns alphabetically, so the construction is reproducible. Duplicate
    (user, anime) pairs resolve to the entry with the latest timestamp and
    the collision count is reported.
    """
    titles = sorted(titles, key=lambda t: t.anime_id)
    users = sorted(users, key=lambda u: u.user_id)
    anime_ids = [t.anime_id for t in titles]
    user_ids = [u.user_id for u in users]

    # latest-timestamp wins for duplicate pairs
    latest: dict[tuple[int, int], RatingEntry] = {}
    dup_count = 0
    for r in ratings:
        key = (r.user_id, r.anime_id)
        prev = latest.get(key)
        if prev is None:
            latest[key] = r
        else:
            dup_count += 1
            if r.timestamp >= prev.timestamp:
                latest[key] = r
    if dup_count:
        _note(errors, f"{dup_count} duplicate (user, anime) rating pairs "
                      "resolved by latest timestamp")

    values = np.zeros((len(users), N_PREFIX + len(anime_ids)))
    for i, u in enumerate(users):
        values[i, 0] = u.gender
        if u.age_category >= 2:      # category 1 is the all-zeros baseline
            values[i, u.age_category - 1] = 1.0
    rating_matrix = RatingMatrix(values, user_ids, anime_ids)
    for r in latest.values():
        row = rating_matrix.user_row[r.user_id]
        col = rating_matrix.anime_col[r.anime_id]
        values[row, col] = r.score

    vocab = sorted(set().union(*[t.genres for t in titles]) if titles
                   else set())
    gvals = np.zeros((len(titles), len(vocab)))
    gcol = {g: j for j, g in enumerate(vocab)}
    for i, t in enumerate(titles):
        for g in t.genres:
            gvals[i, gcol[g]] = 1.0
    genre_matrix = GenreMatrix(gvals, anime_ids, vocab)
    return rating_matrix, genre_matrix


def split_train_test(test: RatingMatrix, holdout_fraction: float,
                     seed: int):
    """Zero out a per-user fraction of rated cells, rounding up.

    Returns (train, heldout) where heldout is the set of (row, col)
    positions (full-matrix coordinates) that were zeroed. Demographic
    prefix columns are never candidates.
    """
    if not (0.0 < holdout_fraction < 1.0):
        raise DatasetError("holdout_fraction must be in (0, 1)")
    rng = np.random.default_rng(seed)
    train = test.copy()
    heldout: set[tuple[int, int]] = set()
    for row in range(train.values.shape[0]):
        nz = np.flatnonzero(train.values[row, N_PREFIX:]) + N_PREFIX
        if len(nz) == 0:
            continue
        k = math.ceil(holdout_fraction * len(nz))
        picked = rng.choice(nz, size=k, replace=False)
        for col in picked:
            train.values[row, col] = 0.0
            heldout.add((row, int(col)))
    return train, heldout


def load_movielens_100k(path, errors: list | None = None) -> RatingMatrix:
    """Load the tab-separated benchmark ratings file into a RatingMatrix.

    `path` may be the dataset directory (holding u.data) or the ratings
    file itself. Demographic prefix columns are all zero; scores keep
    their native 1..5 scale.
    """
    path = Path(path)
    data_file = path / "u.data" if path.is_dir() else path
    if not data_file.exists():
        raise DatasetError(f"ratings file not found: {data_file}")
    latest: dict[tuple[int, int], tuple[int, int]] = {}
    dup_count = 0
    with data_file.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DatasetError(
                    f"{data_file}:{lineno}: expected 4 tab-separated fields")
            user, item, rating, ts = (int(parts[0]), int(parts[1]),
                                      int(parts[2]), int(parts[3]))
            key = (user, item)
            if key in latest:
                dup_count += 1
                if ts >= latest[key][1]:
                    latest[key] = (rating, ts)
            else:
                latest[key] = (rating, ts)
    if dup_count:
        _note(errors, f"{dup_count} duplicate (user, item) lines resolved "
                      "by latest timestamp")
    user_ids = sorted({u for u, _ in latest})
    item_ids = sorted({i for _, i in latest})
    values = np.zeros((len(user_ids), N_PREFIX + len(item_ids)))
    matrix = RatingMatrix(values, user_ids, item_ids)
    for (user, item), (rating, _) in latest.items():
        values[matrix.user_row[user], matrix.anime_col[item]] = rating
    return matrix
