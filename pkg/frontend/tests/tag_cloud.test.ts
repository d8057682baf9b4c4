import { beforeEach, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { createApp } from "../src/main.js";
import { MockServer } from "./mock_server.js";

function flush(): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, 0));
}

describe("tag cloud", () => {
  let server: MockServer;
  let root: HTMLElement;

  beforeEach(() => {
    server = new MockServer();
    server.profiles.set(1, [0, 3]); // Alpha, Delta
    document.body.innerHTML = `<div id="root"></div>`;
    root = document.getElementById("root")!;
  });

  it("renders exactly the payload font sizes", async () => {
    const app = createApp(root, new ApiClient("", server.fetch));
    await app.start(1);
    await flush();
    const tags = Array.from(root.querySelectorAll<HTMLElement>("#cloud .tag"));
    expect(tags.map((t) => t.style.fontSize)).toEqual(["12px", "32px"]);
    expect(tags.map((t) => t.textContent)).toEqual(["Alpha", "Delta"]);
  });

  it("clicking a recommendation issues one interpretation request and one click event, and swaps the cloud", async () => {
    const app = createApp(root, new ApiClient("", server.fetch));
    await app.start(1);
    await flush();

    const recButton = root.querySelector<HTMLButtonElement>("#recs .rec-name")!;
    const target = Number(recButton.dataset.item);
    recButton.click();
    await flush();
    await flush();

    expect(server.count("GET", `/users/1/interpretation`)).toBe(1);
    const clicks = server.feedbackEvents("click_recommendation");
    expect(clicks).toHaveLength(1);
    expect((clicks[0] as { payload: number }).payload).toBe(target);

    const tags = Array.from(root.querySelectorAll<HTMLElement>("#cloud .tag"));
    expect(tags.map((t) => t.style.fontSize)).toEqual(["29.5px", "13.25px"]);
  });

  it("deselecting restores the static profile sizes without refetching", async () => {
    const app = createApp(root, new ApiClient("", server.fetch));
    await app.start(1);
    await flush();
    root.querySelector<HTMLButtonElement>("#recs .rec-name")!.click();
    await flush();
    await flush();

    const before = server.requests.length;
    root.querySelector<HTMLButtonElement>("#cloud-back")!.click();
    await flush();
    const tags = Array.from(root.querySelectorAll<HTMLElement>("#cloud .tag"));
    expect(tags.map((t) => t.style.fontSize)).toEqual(["12px", "32px"]);
    expect(server.requests.length).toBe(before); // pure view change
  });

  it("clicking a cloud tag opens the similar-items panel", async () => {
    const app = createApp(root, new ApiClient("", server.fetch));
    await app.start(1);
    await flush();
    root.querySelector<HTMLElement>("#cloud .tag")!.click();
    await flush();
    expect(server.count("GET", "/items/0/similar")).toBe(1);
    const panel = document.getElementById("similar-items")!;
    expect(panel.classList.contains("hidden")).toBe(false);
    expect(panel.textContent).toContain("Items similar to Alpha");
  });
});
