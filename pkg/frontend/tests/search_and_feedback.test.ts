import { afterEach, beforeEach, describe, expect, it, vi } from "vitest";

import { ApiClient, type FetchLike } from "../src/api.js";
import { createApp, SEARCH_DEBOUNCE_MS } from "../src/main.js";
import { MockServer } from "./mock_server.js";

function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}

function typeInto(input: HTMLInputElement, value: string): void {
  input.value = value;
  input.dispatchEvent(new Event("input"));
}

describe("search box", () => {
  let server: MockServer;
  let root: HTMLElement;

  beforeEach(() => {
    server = new MockServer();
    server.profiles.set(1, [0]);
    document.body.innerHTML = `<div id="root"></div>`;
    root = document.getElementById("root")!;
  });

  afterEach(() => {
    vi.useRealTimers();
  });

  it("debounces keystrokes into a single request", async () => {
    const app = createApp(root, new ApiClient("", server.fetch));
    await app.start(1);
    await flush();

    vi.useFakeTimers();
    const box = root.querySelector<HTMLInputElement>("#search-box")!;
    typeInto(box, "e");
    vi.advanceTimersByTime(SEARCH_DEBOUNCE_MS / 2);
    typeInto(box, "et");
    vi.advanceTimersByTime(SEARCH_DEBOUNCE_MS / 2);
    typeInto(box, "eta");
    await vi.advanceTimersByTimeAsync(SEARCH_DEBOUNCE_MS + 10);
    vi.useRealTimers();
    await flush();

    const searches = server.requests.filter(
      (r) => r.method === "GET" && r.path.startsWith("/items/search"),
    );
    expect(searches).toHaveLength(1);
    expect(searches[0].path).toContain("q=eta");
    const suggestions = Array.from(root.querySelectorAll("#suggestions .suggestion"));
    expect(suggestions.map((s) => s.textContent)).toContain("Eta");
  });

  it("discards stale search responses", async () => {
    const gateOrder: Array<() => void> = [];
    const delayed: FetchLike = (input, init) => {
      const url = String(input);
      if (url.includes("/items/search") && url.includes("q=alpha")) {
        // hold the first query's response until after the second resolves
        return new Promise((resolve) => {
          gateOrder.push(() => resolve(server.fetch(input, init)));
        });
      }
      return server.fetch(input, init);
    };
    const app = createApp(root, new ApiClient("", delayed));
    await app.start(1);
    await flush();

    vi.useFakeTimers();
    const box = root.querySelector<HTMLInputElement>("#search-box")!;
    typeInto(box, "alpha");
    await vi.advanceTimersByTimeAsync(SEARCH_DEBOUNCE_MS + 10);
    typeInto(box, "zeta");
    await vi.advanceTimersByTimeAsync(SEARCH_DEBOUNCE_MS + 10);
    vi.useRealTimers();
    await flush(); // "zeta" response applies
    gateOrder.forEach((release) => release()); // stale "alpha" arrives late
    await flush();

    const suggestions = Array.from(root.querySelectorAll("#suggestions .suggestion"));
    expect(suggestions.map((s) => s.textContent)).toEqual(["Zeta"]);
  });

  it("choosing a suggestion logs the query and opens similar items", async () => {
    const app = createApp(root, new ApiClient("", server.fetch));
    await app.start(1);
    await flush();
    vi.useFakeTimers();
    typeInto(root.querySelector<HTMLInputElement>("#search-box")!, "zeta");
    await vi.advanceTimersByTimeAsync(SEARCH_DEBOUNCE_MS + 10);
    vi.useRealTimers();
    await flush();

    root.querySelector<HTMLButtonElement>("#suggestions .suggestion")!.click();
    await flush();
    await flush();

    const queries = server.feedbackEvents("search_query");
    expect(queries).toHaveLength(1);
    expect((queries[0] as { payload: string }).payload).toBe("zeta");
    expect(document.getElementById("similar-items")!.textContent).toContain(
      "Items similar to Zeta",
    );
  });
});

describe("feedback buttons and panels", () => {
  let server: MockServer;
  let root: HTMLElement;

  beforeEach(async () => {
    server = new MockServer();
    server.profiles.set(1, [0]);
    document.body.innerHTML = `<div id="root"></div>`;
    root = document.getElementById("root")!;
    const app = createApp(root, new ApiClient("", server.fetch));
    await app.start(1);
    await flush();
  });

  it("like logs one event and moves the item into the cloud", async () => {
    const like = root.querySelector<HTMLButtonElement>("#recs .like")!;
    const item = Number(like.dataset.item);
    like.click();
    await flush();
    await flush();
    expect(server.feedbackEvents("like")).toHaveLength(1);
    const names = Array.from(root.querySelectorAll("#cloud .tag")).map(
      (t) => t.textContent,
    );
    expect(names).toContain(server.catalog[item].name);
    const recNames = Array.from(root.querySelectorAll("#recs .rec-name")).map(
      (b) => b.textContent,
    );
    expect(recNames).not.toContain(server.catalog[item].name);
  });

  it("dislike logs one event and leaves the profile alone", async () => {
    const before = Array.from(root.querySelectorAll("#profile li")).length;
    root.querySelector<HTMLButtonElement>("#recs .dislike")!.click();
    await flush();
    expect(server.feedbackEvents("dislike")).toHaveLength(1);
    expect(Array.from(root.querySelectorAll("#profile li"))).toHaveLength(before);
  });

  it("removing a profile item issues one mutation", async () => {
    root.querySelector<HTMLButtonElement>("#profile .remove")!.click();
    await flush();
    await flush();
    const posts = server.requests.filter(
      (r) => r.method === "POST" && r.path === "/users/1/profile",
    );
    expect(posts).toHaveLength(1);
    expect((posts[0].body as { remove: number[] }).remove).toEqual([0]);
  });

  it("similar users panel renders neighbor histories and follow logs once", async () => {
    document.getElementById("similar-users-btn")!.click();
    await flush();
    const panel = document.getElementById("similar-users")!;
    expect(panel.textContent).toContain("user 2");
    expect(panel.textContent).toContain("Alpha");
    panel.querySelector<HTMLButtonElement>("button.follow")!.click();
    await flush();
    expect(server.feedbackEvents("follow_user")).toHaveLength(1);
  });

  it("service failure raises the error banner", async () => {
    server.failAll = true;
    root.querySelector<HTMLButtonElement>("#recs .like")!.click();
    await flush();
    const banner = document.getElementById("banner")!;
    expect(banner.classList.contains("hidden")).toBe(false);
    expect(banner.textContent).toContain("unreachable");
  });
});
