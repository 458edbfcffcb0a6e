// Typed client for the studio service. Every byte shown in the UI comes from
// these endpoints; the frontend never synthesizes pixels itself.

export interface ModelInfo {
  id: string;
  family: "gan" | "translator";
  kind: string;
  resolution: number;
  conditional?: boolean;
  classes?: string[];
}

export interface ImageRef {
  id: string;
  url: string;
}

export interface FrameRef extends ImageRef {
  t: number;
}

export interface SampleRequest {
  model_id: string;
  count: number;
  class_label?: string | number | null;
  truncation?: number;
  seed?: number | null;
}

export interface SampleResponse {
  images: ImageRef[];
  seed: number;
}

export interface ColorizeRequest {
  translator_id: string;
  silhouette_id?: string;
  png_base64?: string;
  variants: number;
  seed?: number | null;
}

export interface ColorizeResponse {
  images: ImageRef[];
  parent: string;
  seed: number;
  warning?: string;
}

export interface InterpolateResponse {
  frames: FrameRef[];
}

export interface BoardItem {
  id: string;
  note: string;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public code: string,
    message: string,
  ) {
    super(message);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private baseUrl: string = "",
    private fetchFn: FetchLike = (input, init) => fetch(input, init),
  ) {}

  imageUrl(ref: ImageRef): string {
    return this.baseUrl + ref.url;
  }

  private async request<T>(method: string, path: string, body?: unknown, signal?: AbortSignal): Promise<T> {
    const res = await this.fetchFn(this.baseUrl + path, {
      method,
      headers: body === undefined ? undefined : { "Content-Type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
      signal,
    });
    if (!res.ok) {
      let code = "http_error";
      let message = `${res.status}`;
      try {
        const payload = (await res.json()) as { code?: string; message?: string };
        code = payload.code ?? code;
        message = payload.message ?? message;
      } catch {
        // non-JSON error body; keep the status text
      }
      throw new ApiError(res.status, code, message);
    }
    return (await res.json()) as T;
  }

  listModels(signal?: AbortSignal): Promise<{ models: ModelInfo[] }> {
    return this.request("GET", "/api/models", undefined, signal);
  }

  sample(req: SampleRequest, signal?: AbortSignal): Promise<SampleResponse> {
    return this.request("POST", "/api/sample", req, signal);
  }

  colorize(req: ColorizeRequest, signal?: AbortSignal): Promise<ColorizeResponse> {
    return this.request("POST", "/api/colorize", req, signal);
  }

  interpolate(
    modelId: string,
    fromId: string,
    toId: string,
    steps: number,
    signal?: AbortSignal,
  ): Promise<InterpolateResponse> {
    return this.request("POST", "/api/interpolate", {
      model_id: modelId,
      from_id: fromId,
      to_id: toId,
      steps,
    }, signal);
  }

  getBoard(signal?: AbortSignal): Promise<{ items: BoardItem[] }> {
    return this.request("GET", "/api/board", undefined, signal);
  }

  putBoard(items: BoardItem[], signal?: AbortSignal): Promise<{ items: BoardItem[] }> {
    return this.request("PUT", "/api/board", { items }, signal);
  }
}
