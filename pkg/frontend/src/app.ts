import { ApiError } from "./api.js";
import type {
  AnimeSummary,
  Gender,
  Recommendations,
} from "./api.js";
import { render } from "./render.js";
import type { Handlers } from "./render.js";
import {
  AppState,
  RequestSequencer,
  initialState,
  recordRating,
} from "./state.js";

/** The slice of the client the app needs; Client satisfies it. */
export interface ApiClient {
  createSession(age: number, gender: Gender): Promise<string>;
  searchAnime(query: string, limit?: number): Promise<AnimeSummary[]>;
  rateAnime(sessionId: string, animeId: number, score: number): Promise<void>;
  recommendations(sessionId: string): Promise<Recommendations>;
  sendFeedback(sessionId: string, listScore: number): Promise<void>;
}

export interface App {
  state: AppState;
  /** Resolves once every operation in flight at call time has settled. */
  settle(): Promise<void>;
}

export function createApp(root: HTMLElement, client: ApiClient): App {
  const state = initialState();
  const searchSeq = new RequestSequencer();
  const listsSeq = new RequestSequencer();
  const pending = new Set<Promise<void>>();

  const draw = () => render(root, state, handlers);

  function track(work: () => Promise<void>): void {
    const job = work()
      .catch((err: unknown) => {
        state.error = err instanceof ApiError
          ? `${err.code}: ${err.message}`
          : String(err);
        draw();
      })
      .finally(() => {
        pending.delete(job);
      });
    pending.add(job);
  }

  async function refreshLists(): Promise<void> {
    if (state.sessionId === null) return;
    const token = listsSeq.next();
    state.listsPending = true;
    draw();
    const lists = await client.recommendations(state.sessionId);
    if (!listsSeq.isCurrent(token)) return;
    state.lists = lists;
    state.listsPending = false;
    draw();
  }

  const handlers: Handlers = {
    onStart(age, gender) {
      track(async () => {
        state.error = null;
        if (!Number.isInteger(age) || age < 0) {
          state.error = "age must be a non-negative whole number";
          draw();
          return;
        }
        state.sessionId = await client.createSession(age, gender);
        state.stage = "browsing";
        draw();
        await refreshLists();
      });
    },

    onSearch(query) {
      track(async () => {
        state.error = null;
        state.searchQuery = query;
        if (query.trim() === "") {
          state.searchResults = [];
          state.searchPending = false;
          draw();
          return;
        }
        const token = searchSeq.next();
        state.searchPending = true;
        draw();
        const results = await client.searchAnime(query);
        if (!searchSeq.isCurrent(token)) return;
        state.searchResults = results;
        state.searchPending = false;
        draw();
      });
    },

    onRate(animeId, score) {
      track(async () => {
        if (state.sessionId === null) return;
        state.error = null;
        await client.rateAnime(state.sessionId, animeId, score);
        recordRating(state, animeId, score);
        state.feedbackConfirmed = false;
        draw();
        await refreshLists();
      });
    },

    onFeedback(score) {
      track(async () => {
        if (state.sessionId === null) return;
        state.error = null;
        await client.sendFeedback(state.sessionId, score);
        state.feedbackConfirmed = true;
        draw();
      });
    },
  };

  draw();

  return {
    state,
    async settle() {
      while (pending.size > 0) {
        await Promise.all([...pending]);
      }
    },
  };
}
