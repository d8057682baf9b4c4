/**
 * App controller: wires the API client, the view-state store, and the DOM.
 *
 * Every user action the system logs goes through exactly one /feedback call
 * or one profile mutation; concurrent responses are applied with a
 * stale-response guard per surface.
 */

import { ApiClient } from "./api.js";
import {
  appSkeleton,
  renderAll,
  type Handlers,
} from "./components.js";
import { StaleGate, Store } from "./state.js";

export const SEARCH_DEBOUNCE_MS = 150;
export const RECOMMENDATION_COUNT = 10;
export const BOOTSTRAP_COUNT = 12;

export class App implements Handlers {
  readonly store = new Store();
  private searchGate = new StaleGate();
  private interpGate = new StaleGate();
  private similarItemsGate = new StaleGate();
  private searchTimer: ReturnType<typeof setTimeout> | null = null;
  private lastQuery = "";

  constructor(
    private readonly root: HTMLElement,
    private readonly api: ApiClient,
  ) {
    root.innerHTML = appSkeleton();
    this.store.subscribe((state) => renderAll(root, state, this));
    root
      .querySelector("#search-box")!
      .addEventListener("input", (event) =>
        this.onSearchInput((event.target as HTMLInputElement).value),
      );
    root
      .querySelector("#similar-users-btn")!
      .addEventListener("click", () => this.onShowSimilarUsers());
  }

  private fail(err: unknown): void {
    this.store.update({ error: err instanceof Error ? err.message : String(err) });
  }

  async start(user: number): Promise<void> {
    this.store.update({ user });
    await this.refresh();
  }

  /** Pull recommendations (or the bootstrap picker) plus the live profile. */
  async refresh(): Promise<void> {
    const user = this.store.get().user;
    if (user === null) return;
    try {
      const recs = await this.api.recommendations(user, RECOMMENDATION_COUNT);
      if (recs.cold_start) {
        const choices = await this.api.bootstrapItems(BOOTSTRAP_COUNT);
        this.store.update({
          coldStart: true,
          bootstrapChoices: choices.items,
          selectedBootstrap: new Set(),
          recommendations: [],
          staticCloud: [],
          cloud: { mode: "profile", target: null, entries: [] },
          error: null,
        });
        return;
      }
      const profile = await this.api.profile(user);
      const cloudEntries = recs.interpretation?.entries ?? [];
      this.store.update({
        coldStart: false,
        profile: profile.items,
        recommendations: recs.items,
        staticCloud: cloudEntries,
        cloud: { mode: "profile", target: null, entries: cloudEntries },
        selectedRecommendation: null,
        error: null,
      });
    } catch (err) {
      this.fail(err);
    }
  }

  onToggleBootstrap(item: number): void {
    const state = this.store.get();
    const selected = new Set(state.selectedBootstrap);
    if (selected.has(item)) {
      selected.delete(item);
    } else {
      selected.add(item);
      if (state.user !== null) {
        // selection is a logged behavior even before submitting
        this.api.feedback(state.user, "bootstrap_select", item).catch(() => {});
      }
    }
    this.store.update({ selectedBootstrap: selected });
  }

  async onSubmitBootstrap(): Promise<void> {
    const state = this.store.get();
    if (state.user === null || state.selectedBootstrap.size === 0) return;
    try {
      await this.api.editProfile(state.user, {
        add: Array.from(state.selectedBootstrap).sort((a, b) => a - b),
      });
      await this.refresh();
    } catch (err) {
      this.fail(err);
    }
  }

  async onSelectRecommendation(item: number): Promise<void> {
    const state = this.store.get();
    if (state.user === null) return;
    if (state.selectedRecommendation === item) {
      this.onDeselect();
      return;
    }
    const ticket = this.interpGate.next();
    try {
      // exactly one logged click and one interpretation fetch per selection
      await this.api.feedback(state.user, "click_recommendation", item);
      const payload = await this.api.interpretation(state.user, item);
      if (!this.interpGate.isCurrent(ticket)) return;
      this.store.update({
        selectedRecommendation: item,
        cloud: { mode: "contribution", target: payload.target, entries: payload.entries },
        error: null,
      });
    } catch (err) {
      this.fail(err);
    }
  }

  onDeselect(): void {
    this.interpGate.next(); // invalidate any in-flight interpretation
    this.store.update({
      selectedRecommendation: null,
      cloud: { mode: "profile", target: null, entries: this.store.get().staticCloud },
    });
  }

  async onLike(item: number): Promise<void> {
    const user = this.store.get().user;
    if (user === null) return;
    try {
      await this.api.feedback(user, "like", item);
      await this.refresh(); // the liked item moves into the tag cloud
    } catch (err) {
      this.fail(err);
    }
  }

  async onDislike(item: number): Promise<void> {
    const user = this.store.get().user;
    if (user === null) return;
    try {
      await this.api.feedback(user, "dislike", item);
    } catch (err) {
      this.fail(err);
    }
  }

  async onRemoveProfileItem(item: number): Promise<void> {
    const user = this.store.get().user;
    if (user === null) return;
    try {
      await this.api.editProfile(user, { remove: [item] });
      await this.refresh();
    } catch (err) {
      this.fail(err);
    }
  }

  onSearchInput(q: string): void {
    this.lastQuery = q;
    if (this.searchTimer !== null) {
      clearTimeout(this.searchTimer);
    }
    const trimmed = q.trim();
    if (trimmed === "") {
      this.searchGate.next();
      this.store.update({ suggestions: [] });
      return;
    }
    this.searchTimer = setTimeout(() => {
      const ticket = this.searchGate.next();
      this.api
        .search(trimmed)
        .then((payload) => {
          if (!this.searchGate.isCurrent(ticket)) return; // stale response
          this.store.update({ suggestions: payload.suggestions.slice(0, 10) });
        })
        .catch((err) => this.fail(err));
    }, SEARCH_DEBOUNCE_MS);
  }

  async onChooseSuggestion(item: number): Promise<void> {
    const user = this.store.get().user;
    try {
      if (user !== null && this.lastQuery.trim() !== "") {
        await this.api.feedback(user, "search_query", this.lastQuery.trim());
      }
      this.store.update({ suggestions: [] });
      await this.loadSimilarItems(item);
    } catch (err) {
      this.fail(err);
    }
  }

  onCloudTagClick(item: number): void {
    void this.loadSimilarItems(item);
  }

  private async loadSimilarItems(item: number): Promise<void> {
    const ticket = this.similarItemsGate.next();
    try {
      const payload = await this.api.similarItems(item, 8);
      if (!this.similarItemsGate.isCurrent(ticket)) return;
      this.store.update({
        similarItemsFor: payload.item,
        similarItems: payload.neighbors,
        warning: payload.warning ?? null,
        error: null,
      });
    } catch (err) {
      this.fail(err);
    }
  }

  async onShowSimilarUsers(): Promise<void> {
    const user = this.store.get().user;
    if (user === null) return;
    try {
      const payload = await this.api.similarUsers(user, 5);
      this.store.update({ similarUsers: payload.neighbors, error: null });
    } catch (err) {
      this.fail(err);
    }
  }

  async onFollow(other: number): Promise<void> {
    const user = this.store.get().user;
    if (user === null) return;
    try {
      await this.api.feedback(user, "follow_user", other);
    } catch (err) {
      this.fail(err);
    }
  }
}

export function createApp(root: HTMLElement, api: ApiClient): App {
  return new App(root, api);
}

/** Browser entry point: a minimal login form, then the app. */
export function boot(document: Document): void {
  const mount = document.getElementById("app");
  if (!mount) return;
  mount.innerHTML = `
    <form id="login" class="panel">
      <label>user id <input id="login-user" type="number" value="0" min="0" /></label>
      <button type="submit">enter</button>
    </form>
    <div id="app-root"></div>`;
  const form = document.getElementById("login") as HTMLFormElement;
  form.addEventListener("submit", (event) => {
    event.preventDefault();
    const id = Number((document.getElementById("login-user") as HTMLInputElement).value);
    form.classList.add("hidden");
    const app = createApp(document.getElementById("app-root") as HTMLElement, new ApiClient(""));
    void app.start(id);
  });
}

// in a real browser this file is loaded as a module by index.html
if (typeof window !== "undefined" && typeof document !== "undefined" &&
    document.getElementById("app")) {
  boot(document);
}
