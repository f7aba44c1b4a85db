/** Typed client for the solver service HTTP API. */

export interface SolveResponse {
  solution: number[] | number[][];
  objectives: number[];
  scalarized_cost: number;
  latency_ms: number;
  snapshot_version: number;
}

export interface FrontEntry {
  lambda: number[];
  objectives: number[];
}

export interface FrontResponse {
  entries: FrontEntry[];
  normalized_hv: number | null;
  reference_point: number[];
  snapshot_version: number;
}

export interface AdaptResponse {
  hv_curve: number[];
  snapshot_version: number;
}

export interface HealthResponse {
  checkpoint_meta: Record<string, unknown>;
  snapshot_version: number;
  instances: number;
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ExplorerClient {
  constructor(
    private base: string,
    private fetchFn: FetchLike = (url, init) => fetch(url, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(`${this.base}${path}`, init);
    const body = await resp.json();
    if (!resp.ok) {
      throw new ApiError(resp.status, (body as { error?: string }).error ?? resp.statusText);
    }
    return body as T;
  }

  registerInstance(record: Record<string, unknown>): Promise<{ id: number }> {
    return this.request("/instances", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(record),
    });
  }

  solve(id: number, lambda: number[], mode: "greedy" | "sample" = "greedy", aug = false): Promise<SolveResponse> {
    const lam = lambda.join(",");
    return this.request(`/instances/${id}/solve?lambda=${lam}&mode=${mode}&aug=${aug ? 1 : 0}`);
  }

  front(id: number, weights: { grid: number } | { dasdennis: number }): Promise<FrontResponse> {
    return this.request(`/instances/${id}/front`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ weights }),
    });
  }

  adapt(id: number, steps: number, lr: number): Promise<AdaptResponse> {
    return this.request(`/instances/${id}/adapt`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ steps, lr }),
    });
  }

  health(): Promise<HealthResponse> {
    return this.request("/health");
  }
}
