import { describe, expect, it, vi } from 'vitest'
import type { Client, PromptResponse } from '../src/api'
import { SessionController, candidatesFromPrompt, overlayColors } from '../src/state'

function fakePrompt(): PromptResponse {
  return {
    prompt_id: 0,
    snapped_index: 5,
    point: [0.1, 0.2, 0.3],
    masks: [[[0, 3]], [[2, 2]], [[5, 1]]],
    ious: [0.4, 0.9, 0.1],
    argmax: 1,
    timing_ms: 3,
  }
}

function fakeClient(overrides: Partial<Client> = {}): Client {
  return {
    uploadMesh: vi.fn(async () => ({ session_id: 's1', n_faces: 12, n_points: 8 })),
    computeFeatures: vi.fn(async () => ({ computed: true, timing_ms: 1 })),
    prompt: vi.fn(async () => fakePrompt()),
    select: vi.fn(async () => ({ n_parts: 1 })),
    autoseg: vi.fn(async () => ({ n_parts: 3, part_areas: [0.5, 0.3, 0.2] })),
    multiprompt: vi.fn(async () => ({ n_parts: 2, part_areas: [0.6, 0.4] })),
    hierarchy: vi.fn(async (_, level: number) => ({ level, max_level: 2, labels: [1, 1, 2] })),
    colors: vi.fn(async () => ({ colors: [[1, 0, 0]] })),
    labels: vi.fn(async () => ({ n_parts: 3, labels: [1, 2, 3], per: 'face' as const })),
    points: vi.fn(async () => ({ points: [[0, 0, 0]] })),
    ...overrides,
  } as unknown as Client
}

describe('candidatesFromPrompt', () => {
  it('builds three overlays whose IoUs equal the payload', () => {
    const resp = fakePrompt()
    const cands = candidatesFromPrompt(resp, 8)
    expect(cands.length).toBe(3)
    expect(cands.map((c) => c.iou)).toEqual(resp.ious)
    expect(cands[1].selectedByModel).toBe(true)
    expect([...cands[0].mask]).toEqual([1, 1, 1, 0, 0, 0, 0, 0])
  })
})

describe('SessionController', () => {
  it('load uploads then computes features', async () => {
    const api = fakeClient()
    const c = new SessionController(api)
    await c.load('v 0 0 0', 'model/obj')
    expect(api.uploadMesh).toHaveBeenCalledOnce()
    expect(api.computeFeatures).toHaveBeenCalledWith('s1')
    expect(c.state.featuresReady).toBe(true)
  })

  it('background click (null pick) sends no request', async () => {
    const api = fakeClient()
    const c = new SessionController(api)
    await c.load('v 0 0 0', 'model/obj')
    const out = await c.pickPrompt(null)
    expect(out).toBeNull()
    expect(api.prompt).not.toHaveBeenCalled()
  })

  it('surface click posts exactly one prompt and stores three candidates', async () => {
    const api = fakeClient()
    const c = new SessionController(api)
    await c.load('v 0 0 0', 'model/obj')
    await c.pickPrompt([0.1, 0.2, 0.3])
    expect(api.prompt).toHaveBeenCalledTimes(1)
    expect(c.state.candidates.length).toBe(3)
    expect(c.state.mode).toBe('candidates')
  })

  it('prompting before features is a no-op', async () => {
    const api = fakeClient()
    const c = new SessionController(api)
    const out = await c.pickPrompt([0, 0, 0])
    expect(out).toBeNull()
    expect(api.prompt).not.toHaveBeenCalled()
  })

  it('selectHead forwards the clicked head and refreshes labels', async () => {
    const api = fakeClient()
    const c = new SessionController(api)
    await c.load('v 0 0 0', 'model/obj')
    await c.pickPrompt([0, 0, 0])
    await c.selectHead(2)
    expect(api.select).toHaveBeenCalledWith('s1', 0, 2)
    expect(c.state.faceLabels).toEqual([1, 2, 3])
  })

  it('autoseg switches to label mode and seeds the hierarchy slider', async () => {
    const api = fakeClient()
    const c = new SessionController(api)
    await c.load('v 0 0 0', 'model/obj')
    const parts = await c.autoseg()
    expect(parts).toBe(3)
    expect(c.state.mode).toBe('labels')
    expect(c.state.hierarchyMax).toBe(2)
  })

  it('hierarchy level 0 returns the base annotation', async () => {
    const api = fakeClient()
    const c = new SessionController(api)
    await c.load('v 0 0 0', 'model/obj')
    await c.autoseg()
    await c.setHierarchyLevel(0)
    expect(c.state.faceLabels).toEqual([1, 1, 2])
    expect(c.state.hierarchyLevel).toBe(0)
  })

  it('feature mode stores server-provided colors untouched', async () => {
    const api = fakeClient()
    const c = new SessionController(api)
    await c.load('v 0 0 0', 'model/obj')
    await c.showFeatureColors()
    expect(c.state.mode).toBe('features')
    expect(c.state.pointColors).toEqual([[1, 0, 0]])
    const rgb = overlayColors(c.state, 1)
    expect([...rgb]).toEqual([1, 0, 0])
  })

  it('surfaces server errors without throwing away the session', async () => {
    const api = fakeClient({
      autoseg: vi.fn(async () => {
        throw new Error('boom')
      }),
    })
    const c = new SessionController(api)
    await c.load('v 0 0 0', 'model/obj')
    await expect(c.autoseg()).rejects.toThrow('boom')
    expect(c.state.lastError).toContain('boom')
    expect(c.state.session).not.toBeNull()
    expect(c.state.busy).toBeNull()
  })
})
