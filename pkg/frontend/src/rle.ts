import type { Rle } from './api'

// Decode [[start, length], ...] runs into a boolean mask over point indices.
export function rleDecode(runs: Rle, n: number): Uint8Array {
  const mask = new Uint8Array(n)
  for (const [start, length] of runs) {
    const end = Math.min(start + length, n)
    for (let i = start; i < end; i++) mask[i] = 1
  }
  return mask
}

export function rleCount(runs: Rle): number {
  return runs.reduce((acc, [, length]) => acc + length, 0)
}
