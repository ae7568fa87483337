import { beforeEach, describe, expect, it } from "vitest";

import { Client } from "../src/api.js";
import type { AnimeSummary, Recommendations } from "../src/api.js";
import { createApp } from "../src/app.js";
import type { ApiClient, App } from "../src/app.js";
import { FakeServer } from "./fakeserver.js";

function mount(): HTMLElement {
  document.body.innerHTML = '<div id="app"></div>';
  return document.getElementById("app")!;
}

function setup(): { server: FakeServer; root: HTMLElement; app: App } {
  const server = new FakeServer();
  const root = mount();
  const app = createApp(root, new Client("", server.fetch));
  return { server, root, app };
}

function field<T extends HTMLElement>(root: HTMLElement, selector: string): T {
  const node = root.querySelector(selector);
  if (node === null) throw new Error(`missing element ${selector}`);
  return node as T;
}

async function start(app: App, root: HTMLElement, age = 21,
                     gender = "male"): Promise<void> {
  field<HTMLInputElement>(root, "#age").value = String(age);
  field<HTMLSelectElement>(root, "#gender").value = gender;
  field<HTMLButtonElement>(root, "#start").click();
  await app.settle();
}

async function rateViaSearch(app: App, root: HTMLElement, name: string,
                             score: number): Promise<void> {
  field<HTMLInputElement>(root, "#search-input").value = name;
  field<HTMLButtonElement>(root, "#search-button").click();
  await app.settle();
  const hit = [...root.querySelectorAll("li.search-result")].find(
    (li) => li.querySelector(".result-name")?.textContent === name,
  );
  if (hit === undefined) throw new Error(`no search hit named ${name}`);
  (hit.querySelector("select.score-pick") as HTMLSelectElement).value =
    String(score);
  (hit.querySelector("button.rate") as HTMLButtonElement).click();
  await app.settle();
}

function panelRows(root: HTMLElement, panelId: string) {
  return [...root.querySelectorAll(`#${panelId} li.entry`)].map((li) => ({
    anime_id: Number((li as HTMLLIElement).dataset.animeId),
    name: li.querySelector(".entry-name")?.textContent ?? "",
    predicted: li.querySelector(".entry-predicted")?.textContent ?? "",
    cluster: li.querySelector(".entry-cluster")?.textContent ?? "",
  }));
}

/** The rendered lists must mirror the API payload exactly, in order. */
function expectRendered(root: HTMLElement, payload: Recommendations): void {
  const panels: Array<["similar" | "may_like", string]> = [
    ["similar", "similar"],
    ["may_like", "may-like"],
  ];
  for (const [key, panelId] of panels) {
    expect(panelRows(root, panelId)).toEqual(
      payload[key].map((entry) => ({
        anime_id: entry.anime_id,
        name: entry.name,
        predicted: entry.predicted_rating.toFixed(2),
        cluster: `cluster ${entry.cluster}`,
      })),
    );
  }
}

beforeEach(() => {
  document.body.innerHTML = "";
});

describe("onboarding", () => {
  it("renders the profile form first and no lists", () => {
    const { root } = setup();
    expect(root.querySelector("#onboarding")).not.toBeNull();
    expect(root.querySelector("#lists")).toBeNull();
  });

  it("creates a session and shows the cold-start lists verbatim", async () => {
    const { server, root, app } = setup();
    await start(app, root, 18, "female");
    expect(server.ratings.has("s1")).toBe(true);
    expect(root.querySelector("#onboarding")).toBeNull();
    expectRendered(root, server.recommendations("s1"));
  });

  it("rejects a negative age locally without calling the API", async () => {
    const { server, root, app } = setup();
    await start(app, root, -3);
    expect(root.querySelector("#error")?.textContent).toContain("age");
    expect(server.ratings.size).toBe(0);
    expect(root.querySelector("#onboarding")).not.toBeNull();
  });
});

describe("scripted session", () => {
  it("rates five titles, renders both lists verbatim, reacts to two more, "
     + "and records feedback", async () => {
    const { server, root, app } = setup();
    await start(app, root);

    const firstFive: Array<[string, number]> = [
      ["Show 1", 9],
      ["Show 2", 8],
      ["Show 5", 3],
      ["Show 7", 10],
      ["Show 9", 2],
    ];
    for (const [name, score] of firstFive) {
      await rateViaSearch(app, root, name, score);
    }
    expect([...server.ratings.get("s1")!.entries()]).toEqual([
      [1, 9], [2, 8], [5, 3], [7, 10], [9, 2],
    ]);
    expect(field<HTMLElement>(root, "#rated-count").textContent)
      .toBe("5 rated");

    const afterFive = server.recommendations("s1");
    expectRendered(root, afterFive);
    const shown = new Set(
      [...afterFive.similar, ...afterFive.may_like].map((e) => e.anime_id),
    );
    for (const rated of [1, 2, 5, 7, 9]) {
      expect(shown.has(rated)).toBe(false);
    }

    await rateViaSearch(app, root, "Show 4", 2);
    await rateViaSearch(app, root, "Show 11", 9);
    const afterSeven = server.recommendations("s1");
    expect(afterSeven).not.toEqual(afterFive);
    expectRendered(root, afterSeven);

    field<HTMLSelectElement>(root, "#feedback .feedback-score").value = "8";
    field<HTMLButtonElement>(root, "#send-feedback").click();
    await app.settle();
    expect(server.feedback.get("s1")).toEqual([8]);
    expect(root.querySelector("#feedback-thanks")).not.toBeNull();
  });

  it("re-rating a title keeps the count and updates the server", async () => {
    const { server, root, app } = setup();
    await start(app, root);
    await rateViaSearch(app, root, "Show 3", 9);
    await rateViaSearch(app, root, "Show 6", 4);
    await rateViaSearch(app, root, "Show 3", 2);
    expect([...server.ratings.get("s1")!.entries()]).toEqual([
      [6, 4], [3, 2],
    ]);
    expect(field<HTMLElement>(root, "#rated-count").textContent)
      .toBe("2 rated");
  });

  it("surfaces service errors in the banner and keeps state", async () => {
    const { server, root, app } = setup();
    await start(app, root);
    await rateViaSearch(app, root, "Show 1", 9);
    server.ratings.delete("s1");
    await rateViaSearch(app, root, "Show 2", 8).catch(() => undefined);
    const banner = root.querySelector("#error");
    expect(banner?.textContent).toContain("unknown_session");
    expect(field<HTMLElement>(root, "#rated-count").textContent)
      .toBe("1 rated");
  });

  it("searching matches the fake service ordering", async () => {
    const { server, root, app } = setup();
    await start(app, root);
    field<HTMLInputElement>(root, "#search-input").value = "show 1";
    field<HTMLButtonElement>(root, "#search-button").click();
    await app.settle();
    const rendered = [...root.querySelectorAll("li.search-result")].map(
      (li) => li.querySelector(".result-name")?.textContent,
    );
    const expected = server.titles
      .filter((t) => t.name.toLowerCase().includes("show 1"))
      .sort((a, b) => b.members - a.members || a.anime_id - b.anime_id)
      .map((t) => t.name);
    expect(rendered).toEqual(expected);
  });
});

describe("stale responses", () => {
  it("drops a slow recommendation response that a newer one overtook",
     async () => {
    const hit: AnimeSummary = {
      anime_id: 1,
      name: "Show 1",
      genres: ["Comedy"],
      members: 1000,
      mean_score: 7,
    };
    const entry = (animeId: number, predicted: number) => ({
      anime_id: animeId,
      name: `Show ${animeId}`,
      predicted_rating: predicted,
      cluster: 0,
      genres: ["Comedy"],
      members: 1000,
    });
    const cold: Recommendations = { similar: [entry(2, 0)], may_like: [] };
    const stale: Recommendations = { similar: [entry(3, 8.5)], may_like: [] };
    const fresh: Recommendations = { similar: [entry(4, 6.5)], may_like: [] };

    const waiting: Array<(lists: Recommendations) => void> = [];
    const stub: ApiClient = {
      createSession: async () => "sX",
      searchAnime: async () => [hit],
      rateAnime: async () => undefined,
      sendFeedback: async () => undefined,
      recommendations: () =>
        new Promise<Recommendations>((resolve) => {
          waiting.push(resolve);
        }),
    };

    const root = mount();
    const app = createApp(root, stub);
    const pump = () => new Promise((resolve) => setTimeout(resolve, 0));

    field<HTMLButtonElement>(root, "#start").click();
    await pump();
    expect(waiting).toHaveLength(1);
    waiting[0]!(cold);
    await pump();
    expectRendered(root, cold);

    field<HTMLInputElement>(root, "#search-input").value = "Show 1";
    field<HTMLButtonElement>(root, "#search-button").click();
    await pump();
    const rateButton = () =>
      root.querySelector("li.search-result button.rate") as HTMLButtonElement;
    rateButton().click();
    await pump();
    expect(waiting).toHaveLength(2);

    rateButton().click();
    await pump();
    expect(waiting).toHaveLength(3);

    waiting[2]!(fresh);      // newest request answers first
    await pump();
    expectRendered(root, fresh);

    waiting[1]!(stale);      // the overtaken response must be ignored
    await pump();
    expectRendered(root, fresh);
    await app.settle();
  });
});
