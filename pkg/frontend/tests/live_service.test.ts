// End-to-end against a real service: spawns `partseg serve` on an ephemeral
// port, uploads a mesh, and drives the same controller the UI uses. Skipped
// automatically when python/partseg is not available.

import { afterAll, beforeAll, describe, expect, it } from 'vitest'
import { spawn, spawnSync, type ChildProcess } from 'node:child_process'
import { mkdtempSync, writeFileSync } from 'node:fs'
import { tmpdir } from 'node:os'
import { join } from 'node:path'
import { Client } from '../src/api'
import { SessionController, candidatesFromPrompt } from '../src/state'
import { legendFromLabels } from '../src/palette'

const PY = process.env.PARTSEG_PYTHON ?? 'python3'

function cubeObj(): string {
  const lines: string[] = []
  for (const sx of [-1, 1]) for (const sy of [-1, 1]) for (const sz of [-1, 1]) {
    lines.push(`v ${0.4 * sx} ${0.4 * sy} ${0.4 * sz}`)
  }
  const faces = [
    [0, 1, 3], [0, 3, 2], [4, 6, 7], [4, 7, 5],
    [0, 4, 5], [0, 5, 1], [2, 3, 7], [2, 7, 6],
    [0, 2, 6], [0, 6, 4], [1, 5, 7], [1, 7, 3],
  ]
  for (const [a, b, c] of faces) lines.push(`f ${a + 1} ${b + 1} ${c + 1}`)
  return lines.join('\n') + '\n'
}

const available = spawnSync(PY, ['-c', 'import partseg'], { timeout: 30000 }).status === 0

describe.skipIf(!available)('live service', () => {
  let proc: ChildProcess
  let base = ''

  beforeAll(async () => {
    const dir = mkdtempSync(join(tmpdir(), 'partseg-live-'))
    const weights = join(dir, 'w.bin')
    const make = spawnSync(PY, ['-c',
      'import numpy as np\n'
      + 'from partseg.network import SegmentorWeights\n'
      + `SegmentorWeights.create(d=8, seed=0, dtype=np.float32).save(${JSON.stringify(weights)})\n`,
    ], { timeout: 60000 })
    expect(make.status).toBe(0)

    proc = spawn(PY, ['-m', 'partseg.cli', 'serve', '--weights', weights,
      '--port', '0', '--n-points', '500'])
    base = await new Promise<string>((resolve, reject) => {
      const timer = setTimeout(() => reject(new Error('service did not start')), 30000)
      proc.stdout!.on('data', (chunk: Buffer) => {
        const match = /serving on (http:\/\/[^/\s]+)/.exec(chunk.toString())
        if (match) {
          clearTimeout(timer)
          resolve(match[1])
        }
      })
    })
  }, 60000)

  afterAll(() => {
    proc?.kill()
  })

  it('scripted click: three overlays with IoUs equal to the /prompt payload', async () => {
    const api = new Client(base)
    const controller = new SessionController(api)
    await controller.load(cubeObj(), 'model/obj')
    expect(controller.state.featuresReady).toBe(true)

    const resp = await controller.pickPrompt([0, 0, 0.4])
    expect(resp).not.toBeNull()
    expect(controller.state.candidates.length).toBe(3)
    controller.state.candidates.forEach((cand, head) => {
      expect(cand.iou).toBe(resp!.ious[head])
    })
    const rebuilt = candidatesFromPrompt(resp!, controller.state.session!.n_points)
    rebuilt.forEach((cand, i) => {
      expect([...cand.mask]).toEqual([...controller.state.candidates[i].mask])
    })
  }, 60000)

  it('autoseg renders a legend whose part count equals the returned n_parts', async () => {
    const api = new Client(base)
    const controller = new SessionController(api)
    await controller.load(cubeObj(), 'model/obj')
    const nParts = await controller.autoseg()
    const legend = legendFromLabels(controller.state.faceLabels!)
    expect(legend.length).toBe(nParts)
  }, 60000)

  it('prompt round trip completes under 500 ms locally', async () => {
    const api = new Client(base)
    const controller = new SessionController(api)
    await controller.load(cubeObj(), 'model/obj')
    await controller.pickPrompt([0.1, 0, 0.4])     // warm-up
    const t0 = performance.now()
    await controller.pickPrompt([0, 0.1, 0.4])
    const ms = performance.now() - t0
    expect(ms).toBeLessThan(500)
  }, 60000)
})
