/** Typed client for the udfcloth service API. */

export interface GenerateResponse {
  session_id: string;
  mesh_url: string;
  chamfer_score: number;
}

export interface EditResponse {
  mesh_url: string;
  chamfer_before: number;
  chamfer_after: number;
  diverged: boolean;
}

export interface ResetResponse {
  mesh_url: string;
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

async function raise(resp: Response): Promise<never> {
  let code = `http_${resp.status}`;
  let message = resp.statusText;
  try {
    const body = await resp.json();
    code = body.code ?? code;
    message = body.message ?? message;
  } catch {
    // non-JSON error body: keep the status text
  }
  throw new ApiError(resp.status, code, message);
}

export class Client {
  constructor(private readonly base: string = '') {}

  generateUrl(): string {
    return `${this.base}/api/generate`;
  }

  captureUrl(sessionId: string): string {
    return `${this.base}/api/session/${encodeURIComponent(sessionId)}/capture`;
  }

  editUrl(sessionId: string): string {
    return `${this.base}/api/session/${encodeURIComponent(sessionId)}/edit`;
  }

  resetUrl(sessionId: string): string {
    return `${this.base}/api/session/${encodeURIComponent(sessionId)}/reset`;
  }

  modelUrl(sessionId: string): string {
    return `${this.base}/api/session/${encodeURIComponent(sessionId)}/model.obj`;
  }

  async generate(png: Uint8Array | Blob): Promise<GenerateResponse> {
    const resp = await fetch(this.generateUrl(), {
      method: 'POST',
      headers: { 'content-type': 'image/png' },
      body: png instanceof Blob ? png : new Blob([png as BlobPart]),
    });
    if (!resp.ok) await raise(resp);
    return resp.json();
  }

  async capture(sessionId: string, azimuthDeg: number, elevationDeg: number): Promise<Blob> {
    const resp = await fetch(this.captureUrl(sessionId), {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: JSON.stringify({ azimuth: azimuthDeg, elevation: elevationDeg }),
    });
    if (!resp.ok) await raise(resp);
    return resp.blob();
  }

  async edit(sessionId: string, png: Uint8Array | Blob): Promise<EditResponse> {
    const resp = await fetch(this.editUrl(sessionId), {
      method: 'POST',
      headers: { 'content-type': 'image/png' },
      body: png instanceof Blob ? png : new Blob([png as BlobPart]),
    });
    if (!resp.ok) await raise(resp);
    return resp.json();
  }

  async reset(sessionId: string): Promise<ResetResponse> {
    const resp = await fetch(this.resetUrl(sessionId), { method: 'POST' });
    if (!resp.ok) await raise(resp);
    return resp.json();
  }

  async fetchModel(sessionId: string): Promise<string> {
    const resp = await fetch(this.modelUrl(sessionId));
    if (!resp.ok) await raise(resp);
    return resp.text();
  }
}
