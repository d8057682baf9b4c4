/**
 * Single view-state store with change notification, plus a stale-response
 * guard: concurrent in-flight requests are applied in arrival order and a
 * response is discarded when a newer request for the same surface has been
 * issued since.
 */

import type {
  ContributionEntry,
  ItemRef,
  Recommendation,
  SimilarItemEntry,
  SimilarUserEntry,
  TagCloudEntry,
} from "./api.js";

export interface CloudView {
  /** static profile weights or target-conditioned contributions */
  mode: "profile" | "contribution";
  target: ItemRef | null;
  entries: Array<TagCloudEntry | ContributionEntry>;
}

export interface ViewState {
  user: number | null;
  coldStart: boolean;
  bootstrapChoices: ItemRef[];
  selectedBootstrap: Set<number>;
  profile: ItemRef[];
  recommendations: Recommendation[];
  staticCloud: TagCloudEntry[];
  cloud: CloudView;
  selectedRecommendation: number | null;
  suggestions: ItemRef[];
  similarUsers: SimilarUserEntry[];
  similarItems: SimilarItemEntry[];
  similarItemsFor: ItemRef | null;
  warning: string | null;
  error: string | null;
}

export function initialState(): ViewState {
  return {
    user: null,
    coldStart: false,
    bootstrapChoices: [],
    selectedBootstrap: new Set(),
    profile: [],
    recommendations: [],
    staticCloud: [],
    cloud: { mode: "profile", target: null, entries: [] },
    selectedRecommendation: null,
    suggestions: [],
    similarUsers: [],
    similarItems: [],
    similarItemsFor: null,
    warning: null,
    error: null,
  };
}

export type Listener = (state: ViewState) => void;

export class Store {
  private state: ViewState = initialState();
  private listeners: Listener[] = [];

  get(): ViewState {
    return this.state;
  }

  subscribe(listener: Listener): void {
    this.listeners.push(listener);
  }

  update(patch: Partial<ViewState>): void {
    this.state = { ...this.state, ...patch };
    for (const listener of this.listeners) {
      listener(this.state);
    }
  }
}

/** Monotonic ticket counter; only the most recent ticket is current. */
export class StaleGate {
  private latest = 0;

  next(): number {
    this.latest += 1;
    return this.latest;
  }

  isCurrent(ticket: number): boolean {
    return ticket === this.latest;
  }
}
