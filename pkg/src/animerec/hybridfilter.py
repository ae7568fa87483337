"""Hybrid recommendation filter.

Joins the collaborative path (predicted ratings for everything the user has
not rated) with the content path (cluster membership around the last few
rated titles). Titles inside the selected clusters come back as "similar",
the best of everything outside them as "you may like". Profiles with no
ratings fall back to per-genre popularity champions.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .spectral import ClusterModel

DEFAULT_LIKE_THRESHOLD = 7
LIST_LIMIT = 10
SEED_TITLES = 3


class FilterError(Exception):
    pass


@dataclass
class UserProfile:
    """Session demographics plus temporally ordered ratings."""
    session_id: str
    gender: int
    age_category: int
    ratings: list[tuple[int, int, int]] = field(default_factory=list)
    # each entry is (anime_id, score, timestamp), oldest first

    def rate(self, anime_id: int, score: int, timestamp: int) -> None:
        """Add or replace a rating; a re-rate moves the title to the end."""
        if not (isinstance(score, int) and 1 <= score <= 10):
            raise FilterError(f"score must be an integer in [1,10], "
                              f"got {score!r}")
        self.ratings = [r for r in self.ratings if r[0] != anime_id]
        self.ratings.append((anime_id, score, timestamp))

    def rated_ids(self) -> set[int]:
        return {anime_id for anime_id, _, _ in self.ratings}


@dataclass
class Recommendations:
    similar: list[tuple[int, float]]
    may_like: list[tuple[int, float]]


def choose_cluster(rating: int, anime_id: int, model: ClusterModel,
                   like_threshold: int = DEFAULT_LIKE_THRESHOLD) -> int:
    """Own cluster for a liked title, logically opposite otherwise.

    The threshold itself counts as liked.
    """
    if not (1 <= rating <= 10):
        raise FilterError(f"rating {rating} out of [1,10]")
    if rating >= like_threshold:
        return model.assignment[anime_id]
    return model.opposite[anime_id]


def _ranked(ids, predictions, members_of, limit):
    entries = sorted(
        ids, key=lambda a: (-predictions[a], -members_of[a], a))
    return [(a, float(predictions[a])) for a in entries[:limit]]


def recommend(profile: UserProfile, predictions: dict[int, float],
              model: ClusterModel, catalog,
              genre_matrix=None,
              like_threshold: int = DEFAULT_LIKE_THRESHOLD,
              limit: int = LIST_LIMIT) -> Recommendations:
    """Build the two ranked lists for a profile.

    predictions maps every catalog anime_id to a predicted rating. Lists are
    sorted by predicted rating descending, ties by popularity (members)
    descending then anime_id ascending, and both exclude everything the
    user has rated. An empty profile routes to cold_start.
    """
    if not profile.ratings:
        return cold_start(catalog, genre_matrix, limit)
    rated = profile.rated_ids()
    members_of = {t.anime_id: t.members for t in catalog}

    cluster_members: dict[int, set[int]] = {}
    for anime_id, cluster in model.assignment.items():
        cluster_members.setdefault(cluster, set()).add(anime_id)

    chosen: set[int] = set()
    for anime_id, score, _ in profile.ratings[-SEED_TITLES:]:
        chosen |= cluster_members[
            choose_cluster(score, anime_id, model, like_threshold)]

    unrated = {t.anime_id for t in catalog} - rated
    similar = _ranked(unrated & chosen, predictions, members_of, limit)
    may_like = _ranked(unrated - chosen, predictions, members_of, limit)
    return Recommendations(similar, may_like)


def cold_start(catalog, genre_matrix=None,
               limit: int = LIST_LIMIT) -> Recommendations:
    """Per-genre popularity champions for profiles with no ratings yet.

    Each genre nominates its most popular title (members, then mean_score,
    then lower anime_id); champions are ranked by the same key and split
    into the two lists. Entries carry 0.0 in the predicted-rating slot
    since nothing was predicted.
    """
    if not catalog:
        raise FilterError("cold start needs a non-empty catalog")
    if genre_matrix is not None:
        vocabulary = list(genre_matrix.genres)
    else:
        vocabulary = sorted(set().union(*[t.genres for t in catalog]))

    def popularity_key(title):
        mean = title.mean_score if title.mean_score is not None else 0.0
        return (-title.members, -mean, title.anime_id)

    champions = {}
    for genre in vocabulary:
        carriers = [t for t in catalog if genre in t.genres]
        if carriers:
            best = min(carriers, key=popularity_key)
            champions[best.anime_id] = best
    ranked = sorted(champions.values(), key=popularity_key)
    similar = [(t.anime_id, 0.0) for t in ranked[:limit]]
    may_like = [(t.anime_id, 0.0) for t in ranked[limit:2 * limit]]
    return Recommendations(similar, may_like)
