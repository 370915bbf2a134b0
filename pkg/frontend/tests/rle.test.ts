import { describe, expect, it } from 'vitest'
import { rleCount, rleDecode } from '../src/rle'

describe('rleDecode', () => {
  it('decodes runs into a boolean mask', () => {
    const mask = rleDecode([[0, 2], [5, 3]], 10)
    expect([...mask]).toEqual([1, 1, 0, 0, 0, 1, 1, 1, 0, 0])
  })

  it('handles empty runs', () => {
    expect([...rleDecode([], 4)]).toEqual([0, 0, 0, 0])
  })

  it('clips runs that overrun the mask', () => {
    const mask = rleDecode([[3, 10]], 5)
    expect([...mask]).toEqual([0, 0, 0, 1, 1])
  })

  it('counts set points', () => {
    expect(rleCount([[0, 2], [5, 3]])).toBe(5)
  })

  it('round-trips a random mask through encode-like runs', () => {
    const n = 200
    const truth = Array.from({ length: n }, (_, i) => (i * 7) % 13 < 4)
    const runs: [number, number][] = []
    let start = -1
    for (let i = 0; i <= n; i++) {
      const v = i < n && truth[i]
      if (v && start < 0) start = i
      if (!v && start >= 0) {
        runs.push([start, i - start])
        start = -1
      }
    }
    const mask = rleDecode(runs, n)
    truth.forEach((v, i) => expect(!!mask[i]).toBe(v))
  })
})
