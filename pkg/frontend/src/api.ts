/**
 * Typed client for the recommendation service HTTP API.
 *
 * All scores, weights, and font sizes used by the UI come from these
 * payloads; the client performs no model math of its own.
 */

export interface ItemRef {
  item: number;
  name: string;
}

export interface TagCloudEntry {
  item: number;
  name: string;
  weight: number;
  font_size: number;
}

export interface ProfileInterpretation {
  entries: TagCloudEntry[];
}

export interface Recommendation {
  item: number;
  name: string;
  score: number;
  probability: number;
}

export interface RecommendationsResponse {
  user: number;
  cold_start: boolean;
  bootstrap?: string;
  items: Recommendation[];
  interpretation: ProfileInterpretation | null;
  snapshot_version: string;
}

export interface ContributionEntry {
  item: number;
  name: string;
  contribution: number;
  font_size: number;
}

export interface InterpretationResponse {
  user: number;
  target: ItemRef;
  bias_part: number;
  entries: ContributionEntry[];
  total_score: number;
  probability: number;
  snapshot_version: string;
}

export interface ProfileResponse {
  user: number;
  items: ItemRef[];
  size: number;
  warning?: string;
}

export interface SimilarUserEntry {
  user: number;
  similarity: number;
  history: ItemRef[];
}

export interface SimilarUsersResponse {
  user: number;
  neighbors: SimilarUserEntry[];
}

export interface SimilarItemEntry {
  item: number;
  name: string;
  similarity: number;
}

export interface SimilarItemsResponse {
  item: ItemRef;
  threshold: number;
  neighbors: SimilarItemEntry[];
  warning?: string;
}

export interface SearchResponse {
  suggestions: ItemRef[];
  warning?: string;
}

export type FeedbackKind =
  | "add_item"
  | "remove_item"
  | "like"
  | "dislike"
  | "click_recommendation"
  | "search_query"
  | "bootstrap_select"
  | "follow_user";

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(message: string, readonly status?: number) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchFn(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(`service unreachable: ${String(err)}`);
    }
    if (!response.ok) {
      let detail = "";
      try {
        detail = JSON.stringify(await response.json());
      } catch {
        /* body was not JSON */
      }
      throw new ApiError(`${response.status} on ${path} ${detail}`, response.status);
    }
    return (await response.json()) as T;
  }

  bootstrapItems(k: number): Promise<{ items: ItemRef[] }> {
    return this.request(`/bootstrap/items?k=${k}`);
  }

  profile(user: number): Promise<ProfileResponse> {
    return this.request(`/users/${user}/profile`);
  }

  editProfile(
    user: number,
    changes: { add?: number[]; remove?: number[] },
  ): Promise<ProfileResponse> {
    return this.request(`/users/${user}/profile`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(changes),
    });
  }

  recommendations(user: number, n: number): Promise<RecommendationsResponse> {
    return this.request(`/users/${user}/recommendations?n=${n}`);
  }

  interpretation(user: number, target: number): Promise<InterpretationResponse> {
    return this.request(`/users/${user}/interpretation?target=${target}`);
  }

  similarUsers(user: number, k: number): Promise<SimilarUsersResponse> {
    return this.request(`/users/${user}/similar-users?k=${k}`);
  }

  similarItems(item: number, k: number): Promise<SimilarItemsResponse> {
    return this.request(`/items/${item}/similar?k=${k}`);
  }

  search(q: string): Promise<SearchResponse> {
    return this.request(`/items/search?q=${encodeURIComponent(q)}`);
  }

  feedback(
    user: number,
    kind: FeedbackKind,
    payload: number | string,
  ): Promise<{ ok: boolean }> {
    return this.request(`/feedback`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ user, kind, payload }),
    });
  }
}
