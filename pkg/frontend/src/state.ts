import type { AnimeSummary, Recommendations } from "./api.js";

/**
 * Guards against stale async responses: every new request takes a token,
 * and only the holder of the newest token may commit its result.
 */
export class RequestSequencer {
  private counter = 0;

  next(): number {
    this.counter += 1;
    return this.counter;
  }

  isCurrent(token: number): boolean {
    return token > 0 && token === this.counter;
  }
}

export interface RatingRecord {
  animeId: number;
  score: number;
}

export type Stage = "onboarding" | "browsing";

export interface AppState {
  stage: Stage;
  sessionId: string | null;
  ratings: RatingRecord[];
  searchQuery: string;
  searchResults: AnimeSummary[];
  searchPending: boolean;
  lists: Recommendations | null;
  listsPending: boolean;
  feedbackConfirmed: boolean;
  error: string | null;
}

export function initialState(): AppState {
  return {
    stage: "onboarding",
    sessionId: null,
    ratings: [],
    searchQuery: "",
    searchResults: [],
    searchPending: false,
    lists: null,
    listsPending: false,
    feedbackConfirmed: false,
    error: null,
  };
}

/** Mirror of the server semantics: re-rating replaces and moves to the end. */
export function recordRating(
  state: AppState,
  animeId: number,
  score: number,
): void {
  state.ratings = state.ratings.filter((r) => r.animeId !== animeId);
  state.ratings.push({ animeId, score });
}

export function ratedIds(state: AppState): Set<number> {
  return new Set(state.ratings.map((r) => r.animeId));
}
