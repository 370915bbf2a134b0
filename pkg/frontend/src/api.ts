// Typed client for the segmentation service /v1 API. Every displayed mask
// comes from these payloads; the client never computes masks itself.

export type Rle = [number, number][]

export interface SessionInfo {
  session_id: string
  n_faces: number
  n_points: number
  features_ready?: boolean
  feature_extractions?: number
}

export interface PromptResponse {
  prompt_id: number
  snapped_index: number
  point: [number, number, number]
  masks: Rle[]
  ious: number[]
  argmax: number
  timing_ms: number
}

export interface AnnotationResponse {
  n_parts: number
  part_areas: number[]
}

export interface LabelsResponse {
  n_parts: number
  labels: number[]
  per: 'face' | 'point'
}

export interface HierarchyResponse {
  level: number
  max_level: number
  labels: number[]
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message)
  }
}

async function asJson<T>(resp: Response): Promise<T> {
  const body = await resp.json().catch(() => ({}))
  if (!resp.ok) {
    throw new ApiError(resp.status, (body as { error?: string }).error ?? resp.statusText)
  }
  return body as T
}

export class Client {
  constructor(private base = '') {}

  private url(path: string): string {
    return `${this.base}/v1${path}`
  }

  async uploadMesh(data: ArrayBuffer | string, contentType: string): Promise<SessionInfo> {
    const resp = await fetch(this.url('/meshes'), {
      method: 'POST',
      headers: { 'Content-Type': contentType },
      body: data,
    })
    return asJson<SessionInfo>(resp)
  }

  async computeFeatures(sid: string): Promise<{ computed: boolean; timing_ms: number }> {
    return asJson(await fetch(this.url(`/sessions/${sid}/features`), { method: 'POST' }))
  }

  async prompt(sid: string, p: [number, number, number]): Promise<PromptResponse> {
    const resp = await fetch(this.url(`/sessions/${sid}/prompt`), {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ x: p[0], y: p[1], z: p[2] }),
    })
    return asJson<PromptResponse>(resp)
  }

  async select(sid: string, promptRef: number, head: number): Promise<{ n_parts: number }> {
    const resp = await fetch(this.url(`/sessions/${sid}/select`), {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ prompt_ref: promptRef, head }),
    })
    return asJson(resp)
  }

  async autoseg(sid: string, options: { n_prompts?: number; t_nms?: number; seed?: number } = {}):
      Promise<AnnotationResponse> {
    const resp = await fetch(this.url(`/sessions/${sid}/autoseg`), {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(options),
    })
    return asJson<AnnotationResponse>(resp)
  }

  async multiprompt(sid: string, points: [number, number, number][]): Promise<AnnotationResponse> {
    const resp = await fetch(this.url(`/sessions/${sid}/multiprompt`), {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ points }),
    })
    return asJson<AnnotationResponse>(resp)
  }

  async hierarchy(sid: string, level: number): Promise<HierarchyResponse> {
    return asJson(await fetch(this.url(`/sessions/${sid}/hierarchy?level=${level}`)))
  }

  async colors(sid: string): Promise<{ colors: [number, number, number][] }> {
    return asJson(await fetch(this.url(`/sessions/${sid}/colors`)))
  }

  async labels(sid: string): Promise<LabelsResponse> {
    return asJson(await fetch(this.url(`/sessions/${sid}/labels`)))
  }

  async points(sid: string): Promise<{ points: [number, number, number][] }> {
    return asJson(await fetch(this.url(`/sessions/${sid}/points`)))
  }
}
