/**
 * DOM rendering. Pure functions from view state to panel contents; every
 * number displayed (scores, probabilities, similarities, font sizes) is
 * taken verbatim from API payloads.
 */

import type { ViewState } from "./state.js";

export interface Handlers {
  onToggleBootstrap(item: number): void;
  onSubmitBootstrap(): void;
  onSelectRecommendation(item: number): void;
  onDeselect(): void;
  onLike(item: number): void;
  onDislike(item: number): void;
  onRemoveProfileItem(item: number): void;
  onSearchInput(q: string): void;
  onChooseSuggestion(item: number): void;
  onCloudTagClick(item: number): void;
  onShowSimilarUsers(): void;
  onFollow(user: number): void;
}

export function appSkeleton(): string {
  return `
  <div id="banner" class="banner hidden" role="alert"></div>
  <div id="bootstrap" class="panel hidden"></div>
  <div class="columns">
    <section class="col">
      <div class="panel">
        <h2>Your profile</h2>
        <ul id="profile" class="profile-list"></ul>
        <button id="similar-users-btn" type="button">similar users</button>
      </div>
      <div class="panel">
        <h2>Find similar items</h2>
        <input id="search-box" type="search" placeholder="type an item name"
               autocomplete="off" />
        <ul id="suggestions" class="suggestions"></ul>
      </div>
    </section>
    <section class="col wide">
      <div class="panel">
        <h2 id="cloud-title">Why these recommendations</h2>
        <div id="cloud" class="cloud"></div>
      </div>
    </section>
    <section class="col">
      <div class="panel">
        <h2>Recommended for you</h2>
        <ol id="recs" class="rec-list"></ol>
      </div>
    </section>
  </div>
  <div id="similar-users" class="panel hidden"></div>
  <div id="similar-items" class="panel hidden"></div>
  `;
}

function esc(text: string): string {
  const div = document.createElement("div");
  div.textContent = text;
  return div.innerHTML;
}

export function renderBanner(el: HTMLElement, state: ViewState): void {
  if (state.error) {
    el.textContent = state.error;
    el.classList.remove("hidden");
  } else {
    el.textContent = "";
    el.classList.add("hidden");
  }
}

export function renderBootstrap(el: HTMLElement, state: ViewState, h: Handlers): void {
  if (!state.coldStart) {
    el.classList.add("hidden");
    el.innerHTML = "";
    return;
  }
  el.classList.remove("hidden");
  const boxes = state.bootstrapChoices
    .map((ref) => {
      const checked = state.selectedBootstrap.has(ref.item) ? "checked" : "";
      return `<label class="pick"><input type="checkbox" data-item="${ref.item}" ${checked}/> ${esc(ref.name)}</label>`;
    })
    .join("");
  el.innerHTML = `
    <h2>Pick a few items you like</h2>
    <div class="picks">${boxes}</div>
    <button id="bootstrap-submit" type="button"
            ${state.selectedBootstrap.size === 0 ? "disabled" : ""}>
      Get recommendations
    </button>`;
  el.querySelectorAll<HTMLInputElement>("input[data-item]").forEach((box) => {
    box.addEventListener("change", () => h.onToggleBootstrap(Number(box.dataset.item)));
  });
  el.querySelector("#bootstrap-submit")?.addEventListener("click", () =>
    h.onSubmitBootstrap(),
  );
}

export function renderProfile(el: HTMLElement, state: ViewState, h: Handlers): void {
  el.innerHTML = state.profile
    .map(
      (ref) =>
        `<li>${esc(ref.name)} <button class="remove" data-item="${ref.item}" title="remove">x</button></li>`,
    )
    .join("");
  el.querySelectorAll<HTMLButtonElement>("button.remove").forEach((btn) => {
    btn.addEventListener("click", () => h.onRemoveProfileItem(Number(btn.dataset.item)));
  });
}

export function renderCloud(el: HTMLElement, state: ViewState, h: Handlers): void {
  const title = document.getElementById("cloud-title");
  if (title) {
    title.textContent =
      state.cloud.mode === "contribution" && state.cloud.target
        ? `Why we recommend ${state.cloud.target.name}`
        : "Why these recommendations";
  }
  const tags = state.cloud.entries
    .map(
      (entry) =>
        // font size comes straight from the payload, no client-side scaling
        `<span class="tag" data-item="${entry.item}" style="font-size:${entry.font_size}px">${esc(entry.name)}</span>`,
    )
    .join(" ");
  const back =
    state.cloud.mode === "contribution"
      ? `<button id="cloud-back" type="button">back to profile view</button>`
      : "";
  el.innerHTML = tags + back;
  el.querySelectorAll<HTMLElement>("span.tag").forEach((tag) => {
    tag.addEventListener("click", () => h.onCloudTagClick(Number(tag.dataset.item)));
  });
  el.querySelector("#cloud-back")?.addEventListener("click", () => h.onDeselect());
}

export function renderRecommendations(
  el: HTMLElement,
  state: ViewState,
  h: Handlers,
): void {
  el.innerHTML = state.recommendations
    .map((rec) => {
      const selected = state.selectedRecommendation === rec.item ? "selected" : "";
      return `
      <li class="rec ${selected}" data-item="${rec.item}">
        <button class="rec-name" data-item="${rec.item}">${esc(rec.name)}</button>
        <span class="prob">${(rec.probability * 100).toFixed(1)}%</span>
        <button class="like" data-item="${rec.item}" title="like">+</button>
        <button class="dislike" data-item="${rec.item}" title="dislike">-</button>
      </li>`;
    })
    .join("");
  el.querySelectorAll<HTMLButtonElement>("button.rec-name").forEach((btn) => {
    btn.addEventListener("click", () =>
      h.onSelectRecommendation(Number(btn.dataset.item)),
    );
  });
  el.querySelectorAll<HTMLButtonElement>("button.like").forEach((btn) => {
    btn.addEventListener("click", () => h.onLike(Number(btn.dataset.item)));
  });
  el.querySelectorAll<HTMLButtonElement>("button.dislike").forEach((btn) => {
    btn.addEventListener("click", () => h.onDislike(Number(btn.dataset.item)));
  });
}

export function renderSuggestions(el: HTMLElement, state: ViewState, h: Handlers): void {
  el.innerHTML = state.suggestions
    .map(
      (ref) =>
        `<li><button class="suggestion" data-item="${ref.item}">${esc(ref.name)}</button></li>`,
    )
    .join("");
  el.querySelectorAll<HTMLButtonElement>("button.suggestion").forEach((btn) => {
    btn.addEventListener("click", () => h.onChooseSuggestion(Number(btn.dataset.item)));
  });
}

export function renderSimilarUsers(el: HTMLElement, state: ViewState, h: Handlers): void {
  if (state.similarUsers.length === 0) {
    el.classList.add("hidden");
    el.innerHTML = "";
    return;
  }
  el.classList.remove("hidden");
  const rows = state.similarUsers
    .map((entry) => {
      const history = entry.history.map((ref) => esc(ref.name)).join(", ");
      return `
      <li>
        <strong>user ${entry.user}</strong>
        <span class="sim">${entry.similarity.toFixed(3)}</span>
        <button class="follow" data-user="${entry.user}">follow</button>
        <div class="history">${history}</div>
      </li>`;
    })
    .join("");
  el.innerHTML = `<h2>Similar users</h2><ul>${rows}</ul>`;
  el.querySelectorAll<HTMLButtonElement>("button.follow").forEach((btn) => {
    btn.addEventListener("click", () => h.onFollow(Number(btn.dataset.user)));
  });
}

export function renderSimilarItems(el: HTMLElement, state: ViewState): void {
  if (!state.similarItemsFor) {
    el.classList.add("hidden");
    el.innerHTML = "";
    return;
  }
  el.classList.remove("hidden");
  const rows = state.similarItems
    .map(
      (entry) =>
        `<li>${esc(entry.name)} <span class="sim">${entry.similarity.toFixed(3)}</span></li>`,
    )
    .join("");
  const warning = state.warning ? `<p class="warning">${esc(state.warning)}</p>` : "";
  el.innerHTML = `<h2>Items similar to ${esc(state.similarItemsFor.name)}</h2>
    <ul>${rows}</ul>${warning}`;
}

export function renderAll(root: HTMLElement, state: ViewState, h: Handlers): void {
  renderBanner(root.querySelector("#banner")!, state);
  renderBootstrap(root.querySelector("#bootstrap")!, state, h);
  renderProfile(root.querySelector("#profile")!, state, h);
  renderCloud(root.querySelector("#cloud")!, state, h);
  renderRecommendations(root.querySelector("#recs")!, state, h);
  renderSuggestions(root.querySelector("#suggestions")!, state, h);
  renderSimilarUsers(root.querySelector("#similar-users")!, state, h);
  renderSimilarItems(root.querySelector("#similar-items")!, state);
}
