import type {
  ConfigDoc,
  OutcomeResponse,
  PosteriorPayload,
  Recommendation,
  TrialListItem,
  TrialView,
} from "./types";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

export class ApiError extends Error {
  constructor(
    readonly code: string,
    readonly status: number,
    message: string,
    readonly detail?: unknown,
  ) {
    super(message);
  }
}

/** Thin typed wrapper over the service endpoints. */
export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (...args) => fetch(...args),
    private readonly token: string | null = null,
  ) {}

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const headers: Record<string, string> = { "content-type": "application/json" };
    if (this.token) headers["authorization"] = `Bearer ${this.token}`;
    const resp = await this.fetchImpl(this.baseUrl + path, {
      method,
      headers,
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    const text = await resp.text();
    const parsed = text ? JSON.parse(text) : null;
    if (!resp.ok) {
      const err = parsed ?? {};
      throw new ApiError(err.code ?? "bad_request", resp.status,
        err.message ?? `request failed with ${resp.status}`, err.detail);
    }
    return parsed as T;
  }

  createTrial(config: ConfigDoc, covariates?: number[]): Promise<TrialView> {
    const body = covariates && covariates.length > 0 ? { config, covariates } : config;
    return this.request<TrialView>("POST", "/api/trials", body);
  }

  listTrials(): Promise<TrialListItem[]> {
    return this.request<TrialListItem[]>("GET", "/api/trials");
  }

  getTrial(id: string): Promise<TrialView> {
    return this.request<TrialView>("GET", `/api/trials/${id}`);
  }

  enroll(id: string, expectedVersion: number, covariates?: number[]): Promise<TrialView> {
    const body: Record<string, unknown> = { expected_version: expectedVersion };
    if (covariates && covariates.length > 0) body["covariates"] = covariates;
    return this.request<TrialView>("POST", `/api/trials/${id}/patients`, body);
  }

  postOutcome(
    id: string,
    patientId: string,
    dlt: 0 | 1,
    expectedVersion: number,
  ): Promise<OutcomeResponse> {
    return this.request<OutcomeResponse>(
      "POST",
      `/api/trials/${id}/patients/${patientId}/outcome`,
      { dlt, expected_version: expectedVersion },
    );
  }

  recommendation(id: string, covariates?: number[]): Promise<Recommendation> {
    const query = covariates && covariates.length > 0
      ? `?covariates=${covariates.join(",")}`
      : "";
    return this.request<Recommendation>("GET", `/api/trials/${id}/recommendation${query}`);
  }

  posterior(
    id: string,
    opts: { covariates?: number[]; samples?: number; curveSamples?: number } = {},
  ): Promise<PosteriorPayload> {
    const params: string[] = [];
    if (opts.covariates && opts.covariates.length > 0) {
      params.push(`covariates=${opts.covariates.join(",")}`);
    }
    if (opts.samples !== undefined) params.push(`samples=${opts.samples}`);
    if (opts.curveSamples !== undefined) params.push(`curve_samples=${opts.curveSamples}`);
    const query = params.length > 0 ? `?${params.join("&")}` : "";
    return this.request<PosteriorPayload>("GET", `/api/trials/${id}/posterior${query}`);
  }

  exportTrial(id: string): Promise<unknown> {
    return this.request<unknown>("GET", `/api/trials/${id}/export`);
  }
}
