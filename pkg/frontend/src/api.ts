/**
 * Typed client for the edit-service HTTP API.
 *
 * The UI performs no shading math: every pixel it shows comes back from
 * these endpoints as an image URL or response body.
 */

export interface ViewInfo {
  id: number;
  width: number;
  height: number;
}

export interface MaterialEntry {
  index: number;
  k_d: [number, number, number];
  k_m: number;
  k_r: number;
  display_color: string;
  overridden: boolean;
}

export interface EditPayload {
  index: number;
  k_d: [number, number, number];
  k_m: number;
  k_r: number;
  bbox?: [number, number, number, number];
  view?: number;
}

export interface ApiError {
  code: string;
  message: string;
}

export class ApiClient {
  constructor(private base: string = "") {}

  private async getJson<T>(path: string): Promise<T> {
    const res = await fetch(this.base + path);
    if (!res.ok) throw await this.asError(res);
    return (await res.json()) as T;
  }

  private async postJson<T>(path: string, body: unknown): Promise<T> {
    const res = await fetch(this.base + path, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!res.ok) throw await this.asError(res);
    return (await res.json()) as T;
  }

  private async asError(res: Response): Promise<ApiError> {
    try {
      const body = (await res.json()) as ApiError;
      return { code: body.code ?? `http_${res.status}`, message: body.message ?? "" };
    } catch {
      return { code: `http_${res.status}`, message: res.statusText };
    }
  }

  views(): Promise<ViewInfo[]> {
    return this.getJson<ViewInfo[]>("/api/views");
  }

  materials(): Promise<MaterialEntry[]> {
    return this.getJson<MaterialEntry[]>("/api/materials");
  }

  select(view: number, x: number, y: number): Promise<{ index: number }> {
    return this.postJson<{ index: number }>("/api/select", { view, x, y });
  }

  edit(payload: EditPayload): Promise<{ ok: boolean }> {
    return this.postJson<{ ok: boolean }>("/api/edit", payload);
  }

  relightPreset(preset: string): Promise<{ ok: boolean }> {
    return this.postJson<{ ok: boolean }>("/api/relight", { preset });
  }

  relightIntensity(intensity: number): Promise<{ ok: boolean }> {
    return this.postJson<{ ok: boolean }>("/api/relight", { intensity });
  }

  reset(): Promise<{ ok: boolean }> {
    return this.postJson<{ ok: boolean }>("/api/reset", {});
  }

  /** Image URLs are handed straight to <img>; the browser does the fetch. */
  renderUrl(view: number, branch: string, stamp: number): string {
    return `${this.base}/api/render?view=${view}&branch=${branch}&t=${stamp}`;
  }

  segmentationUrl(view: number, stamp: number): string {
    return `${this.base}/api/segmentation?view=${view}&t=${stamp}`;
  }

  regionUrl(view: number, index: number, stamp: number): string {
    return `${this.base}/api/region?view=${view}&index=${index}&t=${stamp}`;
  }
}
