"""HTTP face of the recommender: sessions, search, ratings, lists.

The app serves one immutable knowledge base. Per-session state lives in
memory; every mutation is also appended to a JSONL log under the store's
profiles/ directory so feedback analysis can run offline later.
"""

from __future__ import annotations

import asyncio
import logging
import time
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .autonet import predict_ratings
from .dataset import RatingMatrix, age_to_category
from .hybridfilter import UserProfile, cold_start, recommend
from .knowledgebase import (KnowledgeBase, append_feedback, append_rating,
                            create_profile, load)

log = logging.getLogger(__name__)

GENDER_CODES = {"male": 0, "female": 1}
DEFAULT_SEARCH_LIMIT = 20


class ServiceError(Exception):
    pass


class ApiError(Exception):
    """Carries an HTTP status plus the {code, message} error body."""

    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class Session:
    profile: UserProfile
    created_at: float
    version: int = 0          # bumped by every rating write
    clock: int = 0            # per-session event timestamps
    cached: tuple[int, dict[int, float]] | None = None
    lock: asyncio.Lock = field(default_factory=asyncio.Lock)


def _require_int(value, name: str, low=None, high=None) -> int:
    # bool is an int subclass but never a valid payload value
    if isinstance(value, bool) or not isinstance(value, int):
        raise ApiError(400, "bad_request", f"{name} must be an integer")
    if (low is not None and value < low) or (high is not None and value > high):
        span = f"[{low}, {high}]" if high is not None else f">= {low}"
        raise ApiError(400, "bad_request", f"{name} must be {span}, got {value}")
    return value


def _profile_row(profile: UserProfile, matrix: RatingMatrix) -> np.ndarray:
    """Encode a live session exactly like a training row.

    Demographic prefix [gender, cat2..cat5] with category 1 as the all-zero
    baseline, then ratings aligned to the training column order.
    """
    row = np.zeros(matrix.values.shape[1])
    row[0] = profile.gender
    if profile.age_category >= 2:
        row[profile.age_category - 1] = 1.0
    for anime_id, score, _ in profile.ratings:
        row[matrix.anime_col[anime_id]] = score
    return row


def predictions_for(kb: KnowledgeBase, profile: UserProfile) -> dict[int, float]:
    """Predicted rating for every catalog title given one profile."""
    out = predict_ratings(kb.model, _profile_row(profile, kb.rating_matrix))
    cols = kb.rating_matrix.anime_col
    return {a: float(out[cols[a]]) for a in kb.rating_matrix.anime_ids}


def create_app(kb: KnowledgeBase, directory) -> FastAPI:
    """Build the FastAPI app around one loaded knowledge base.

    directory is the artifact store the profile logs are written under.
    """
    if kb.rating_matrix is None or kb.model is None or kb.clusters is None:
        raise ServiceError("knowledge base is missing trained artifacts")
    titles = kb.titles_by_id()
    assignment = kb.clusters.assignment
    sessions: dict[str, Session] = {}

    app = FastAPI(title="animerec", docs_url=None, redoc_url=None)
    app.state.kb = kb
    app.state.sessions = sessions

    @app.exception_handler(ApiError)
    async def _api_error(request: Request, exc: ApiError):
        return JSONResponse({"code": exc.code, "message": exc.message},
                            status_code=exc.status)

    @app.exception_handler(RequestValidationError)
    async def _bad_params(request: Request, exc: RequestValidationError):
        return JSONResponse({"code": "bad_request",
                             "message": "malformed parameters"},
                            status_code=400)

    async def _json_body(request: Request) -> dict:
        try:
            body = await request.json()
        except Exception:
            raise ApiError(400, "bad_request", "body must be valid JSON")
        if not isinstance(body, dict):
            raise ApiError(400, "bad_request", "body must be a JSON object")
        return body

    def _get_session(session_id: str) -> Session:
        session = sessions.get(session_id)
        if session is None:
            raise ApiError(404, "unknown_session",
                           f"no session {session_id!r}")
        return session

    def _title_json(t) -> dict:
        return {"anime_id": t.anime_id, "name": t.name,
                "genres": sorted(t.genres), "members": t.members,
                "mean_score": t.mean_score}

    def _entry(anime_id: int, predicted: float) -> dict:
        t = titles[anime_id]
        return {"anime_id": anime_id, "name": t.name,
                "predicted_rating": float(predicted),
                "cluster": assignment[anime_id],
                "genres": sorted(t.genres), "members": t.members}

    @app.post("/api/session", status_code=201)
    async def create_session(request: Request):
        body = await _json_body(request)
        age = _require_int(body.get("age"), "age", low=0)
        gender = body.get("gender")
        if gender not in GENDER_CODES:
            raise ApiError(400, "bad_request",
                           "gender must be 'male' or 'female'")
        session_id = uuid.uuid4().hex
        profile = create_profile(directory, session_id,
                                 GENDER_CODES[gender], age_to_category(age))
        sessions[session_id] = Session(profile, created_at=time.time())
        log.info("session %s created", session_id)
        return {"session_id": session_id}

    @app.get("/api/anime")
    async def search_anime(query: str = "", limit: int = DEFAULT_SEARCH_LIMIT):
        needle = query.strip().lower()
        if not needle:
            raise ApiError(400, "bad_request", "query must be non-empty")
        if limit < 1:
            raise ApiError(400, "bad_request", "limit must be >= 1")
        hits = [t for t in kb.catalog if needle in t.name.lower()]
        hits.sort(key=lambda t: (-t.members, t.anime_id))
        return {"results": [_title_json(t) for t in hits[:limit]]}

    @app.post("/api/session/{session_id}/ratings", status_code=204)
    async def submit_rating(session_id: str, request: Request):
        session = _get_session(session_id)
        body = await _json_body(request)
        anime_id = _require_int(body.get("anime_id"), "anime_id")
        score = _require_int(body.get("score"), "score", low=1, high=10)
        if anime_id not in titles:
            raise ApiError(404, "unknown_anime",
                           f"no anime with id {anime_id}")
        async with session.lock:
            session.clock += 1
            session.profile.rate(anime_id, score, session.clock)
            append_rating(directory, session_id, anime_id, score,
                          session.clock)
            session.version += 1
            session.cached = None
        return Response(status_code=204)

    @app.get("/api/session/{session_id}/recommendations")
    async def get_recommendations(session_id: str):
        session = _get_session(session_id)
        async with session.lock:
            if not session.profile.ratings:
                recs = cold_start(kb.catalog, kb.genre_matrix)
            else:
                if session.cached is None or session.cached[0] != session.version:
                    session.cached = (session.version,
                                      predictions_for(kb, session.profile))
                recs = recommend(session.profile, session.cached[1],
                                 kb.clusters, kb.catalog, kb.genre_matrix)
        return {"similar": [_entry(a, p) for a, p in recs.similar],
                "may_like": [_entry(a, p) for a, p in recs.may_like]}

    @app.post("/api/session/{session_id}/feedback", status_code=204)
    async def submit_feedback(session_id: str, request: Request):
        session = _get_session(session_id)
        body = await _json_body(request)
        score = _require_int(body.get("list_score"), "list_score",
                             low=1, high=10)
        async with session.lock:
            session.clock += 1
            append_feedback(directory, session_id, score, session.clock)
        return Response(status_code=204)

    return app


def load_app(directory) -> FastAPI:
    """Load a knowledge base from disk and wrap it in the app."""
    return create_app(load(directory), directory)
