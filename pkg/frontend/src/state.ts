// Viewer state and the pure update logic behind the UI. Everything displayed
// derives from the last server responses (single source of truth); three.js
// rendering consumes the overlays built here.

import type { Client, PromptResponse, SessionInfo } from './api'
import { rleDecode } from './rle'
import { labelColor } from './palette'

export type DisplayMode = 'labels' | 'features' | 'candidates'

export interface CandidateOverlay {
  head: number
  mask: Uint8Array
  iou: number
  selectedByModel: boolean
}

export interface ViewerState {
  session: SessionInfo | null
  featuresReady: boolean
  busy: string | null
  mode: DisplayMode
  prompt: PromptResponse | null      // at most one active prompt
  candidates: CandidateOverlay[]
  faceLabels: number[] | null
  pointColors: [number, number, number][] | null
  hierarchyLevel: number
  hierarchyMax: number
  lastError: string | null
}

export function initialState(): ViewerState {
  return {
    session: null,
    featuresReady: false,
    busy: null,
    mode: 'candidates',
    prompt: null,
    candidates: [],
    faceLabels: null,
    pointColors: null,
    hierarchyLevel: 0,
    hierarchyMax: 0,
    lastError: null,
  }
}

export function candidatesFromPrompt(resp: PromptResponse, nPoints: number): CandidateOverlay[] {
  return resp.masks.map((runs, head) => ({
    head,
    mask: rleDecode(runs, nPoints),
    iou: resp.ious[head],
    selectedByModel: head === resp.argmax,
  }))
}

/** Drives the service; keeps ViewerState consistent with the last response. */
export class SessionController {
  state: ViewerState = initialState()
  onChange: (state: ViewerState) => void = () => {}

  constructor(private api: Client) {}

  private update(patch: Partial<ViewerState>) {
    this.state = { ...this.state, ...patch }
    this.onChange(this.state)
  }

  async load(data: ArrayBuffer | string, contentType: string) {
    this.update({ busy: 'uploading' })
    try {
      const session = await this.api.uploadMesh(data, contentType)
      this.update({ ...initialState(), session, busy: 'extracting features' })
      await this.api.computeFeatures(session.session_id)
      this.update({ featuresReady: true, busy: null })
    } catch (err) {
      this.update({ busy: null, lastError: String(err) })
      throw err
    }
  }

  /** A surface click. Misses (null) are a no-op; one POST per hit. */
  async pickPrompt(point: [number, number, number] | null): Promise<PromptResponse | null> {
    if (!point || !this.state.session || !this.state.featuresReady || this.state.busy) {
      return null
    }
    const sid = this.state.session.session_id
    const resp = await this.api.prompt(sid, point)
    this.update({
      prompt: resp,
      mode: 'candidates',
      candidates: candidatesFromPrompt(resp, this.state.session.n_points),
    })
    return resp
  }

  async selectHead(head: number) {
    if (!this.state.prompt || !this.state.session) return
    await this.api.select(this.state.session.session_id, this.state.prompt.prompt_id, head)
    const labels = await this.api.labels(this.state.session.session_id)
    this.update({ faceLabels: labels.labels })
  }

  async autoseg(): Promise<number> {
    if (!this.state.session) throw new Error('no session')
    this.update({ busy: 'auto-segmenting' })
    try {
      const out = await this.api.autoseg(this.state.session.session_id)
      const labels = await this.api.labels(this.state.session.session_id)
      this.update({
        busy: null,
        mode: 'labels',
        faceLabels: labels.labels,
        hierarchyLevel: 0,
        hierarchyMax: Math.max(out.n_parts - 1, 0),
      })
      return out.n_parts
    } catch (err) {
      this.update({ busy: null, lastError: String(err) })
      throw err
    }
  }

  async setHierarchyLevel(level: number) {
    if (!this.state.session) return
    const out = await this.api.hierarchy(this.state.session.session_id, level)
    this.update({
      hierarchyLevel: out.level,
      hierarchyMax: out.max_level,
      faceLabels: out.labels,
      mode: 'labels',
    })
  }

  async showFeatureColors() {
    if (!this.state.session) return
    const out = await this.api.colors(this.state.session.session_id)
    this.update({ pointColors: out.colors, mode: 'features' })
  }
}

/** Per-point RGB for the current overlay mode. */
export function overlayColors(state: ViewerState, nPoints: number): Float32Array {
  const rgb = new Float32Array(nPoints * 3).fill(0.42)
  if (state.mode === 'features' && state.pointColors) {
    state.pointColors.forEach((c, i) => rgb.set(c, i * 3))
  } else if (state.mode === 'candidates') {
    for (const cand of state.candidates) {
      const color = labelColor(cand.head + 1)
      const strength = cand.selectedByModel ? 1.0 : 0.45
      for (let i = 0; i < nPoints; i++) {
        if (cand.mask[i]) {
          rgb[3 * i] = color[0] * strength
          rgb[3 * i + 1] = color[1] * strength
          rgb[3 * i + 2] = color[2] * strength
        }
      }
    }
  }
  return rgb
}
