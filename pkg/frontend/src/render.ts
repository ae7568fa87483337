import type { Gender, ListEntry } from "./api.js";
import type { AppState } from "./state.js";

export interface Handlers {
  onStart(age: number, gender: Gender): void;
  onSearch(query: string): void;
  onRate(animeId: number, score: number): void;
  onFeedback(score: number): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  for (const [key, value] of Object.entries(attrs)) {
    node.setAttribute(key, value);
  }
  if (text !== undefined) node.textContent = text;
  return node;
}

function scoreSelect(className: string): HTMLSelectElement {
  const select = el("select", { class: className });
  for (let score = 10; score >= 1; score--) {
    const option = el("option", { value: String(score) }, String(score));
    select.appendChild(option);
  }
  select.value = "8";
  return select;
}

function onboarding(handlers: Handlers): HTMLElement {
  const box = el("section", { id: "onboarding" });
  box.appendChild(el("h2", {}, "Tell us about yourself"));
  const age = el("input", { id: "age", type: "number", min: "0", value: "20" });
  const gender = el("select", { id: "gender" });
  gender.appendChild(el("option", { value: "female" }, "female"));
  gender.appendChild(el("option", { value: "male" }, "male"));
  const start = el("button", { id: "start" }, "Start");
  start.addEventListener("click", () => {
    handlers.onStart(Number(age.value), gender.value as Gender);
  });
  const row = el("div", { class: "row" });
  row.appendChild(el("label", {}, "Age"));
  row.appendChild(age);
  row.appendChild(el("label", {}, "Gender"));
  row.appendChild(gender);
  row.appendChild(start);
  box.appendChild(row);
  return box;
}

function searchPanel(state: AppState, handlers: Handlers): HTMLElement {
  const box = el("section", { id: "search" });
  box.appendChild(el("h2", {}, "Find anime to rate"));
  const input = el("input", { id: "search-input", type: "text" });
  input.value = state.searchQuery;
  const button = el("button", { id: "search-button" }, "Search");
  button.addEventListener("click", () => handlers.onSearch(input.value));
  input.addEventListener("keydown", (event) => {
    if (event.key === "Enter") handlers.onSearch(input.value);
  });
  const row = el("div", { class: "row" });
  row.appendChild(input);
  row.appendChild(button);
  box.appendChild(row);

  const results = el("ul", { id: "search-results" });
  for (const hit of state.searchResults) {
    const item = el("li", { class: "search-result" });
    item.dataset.animeId = String(hit.anime_id);
    item.appendChild(el("span", { class: "result-name" }, hit.name));
    item.appendChild(
      el("span", { class: "result-meta" },
         `${hit.genres.join(", ")} · ${hit.members} members`),
    );
    const pick = scoreSelect("score-pick");
    const rate = el("button", { class: "rate" }, "Rate");
    rate.addEventListener("click", () => {
      handlers.onRate(hit.anime_id, Number(pick.value));
    });
    item.appendChild(pick);
    item.appendChild(rate);
    results.appendChild(item);
  }
  if (state.searchPending) {
    results.appendChild(el("li", { class: "pending" }, "searching…"));
  }
  box.appendChild(results);
  return box;
}

function listPanel(id: string, heading: string,
                   entries: ListEntry[]): HTMLElement {
  const box = el("section", { id });
  box.appendChild(el("h2", {}, heading));
  const list = el("ol", { class: "entries" });
  for (const entry of entries) {
    const item = el("li", { class: "entry" });
    item.dataset.animeId = String(entry.anime_id);
    item.appendChild(el("span", { class: "entry-name" }, entry.name));
    item.appendChild(
      el("span", { class: "entry-predicted" },
         entry.predicted_rating.toFixed(2)),
    );
    item.appendChild(
      el("span", { class: "entry-cluster" }, `cluster ${entry.cluster}`),
    );
    list.appendChild(item);
  }
  if (entries.length === 0) {
    box.appendChild(el("p", { class: "empty" }, "(nothing yet)"));
  }
  box.appendChild(list);
  return box;
}

function feedbackPanel(state: AppState, handlers: Handlers): HTMLElement {
  const box = el("section", { id: "feedback" });
  box.appendChild(el("h2", {}, "How good are these lists?"));
  const pick = scoreSelect("feedback-score");
  const send = el("button", { id: "send-feedback" }, "Send");
  send.addEventListener("click", () => handlers.onFeedback(Number(pick.value)));
  const row = el("div", { class: "row" });
  row.appendChild(pick);
  row.appendChild(send);
  box.appendChild(row);
  if (state.feedbackConfirmed) {
    box.appendChild(el("p", { id: "feedback-thanks" }, "Thanks, recorded."));
  }
  return box;
}

export function render(
  root: HTMLElement,
  state: AppState,
  handlers: Handlers,
): void {
  root.textContent = "";
  root.appendChild(el("h1", {}, "animerec"));
  if (state.error !== null) {
    root.appendChild(el("div", { id: "error", role: "alert" }, state.error));
  }
  if (state.stage === "onboarding") {
    root.appendChild(onboarding(handlers));
    return;
  }
  root.appendChild(
    el("p", { id: "rated-count" }, `${state.ratings.length} rated`),
  );
  root.appendChild(searchPanel(state, handlers));
  if (state.lists !== null) {
    const lists = el("div", { id: "lists" });
    if (state.listsPending) lists.dataset.pending = "1";
    lists.appendChild(
      listPanel("similar", "Similar Anime", state.lists.similar),
    );
    lists.appendChild(
      listPanel("may-like", "Anime You May Like", state.lists.may_like),
    );
    root.appendChild(lists);
  }
  root.appendChild(feedbackPanel(state, handlers));
}
