// Deterministic label colors: label k maps to a fixed HSL rotation, so the
// same annotation always renders the same way.

export function labelColor(label: number): [number, number, number] {
  if (label <= 0) return [0.42, 0.42, 0.42]
  const hue = (label * 137.508) % 360 // golden-angle rotation
  return hslToRgb(hue / 360, 0.62, 0.55)
}

export function hslToRgb(h: number, s: number, l: number): [number, number, number] {
  const q = l < 0.5 ? l * (1 + s) : l + s - l * s
  const p = 2 * l - q
  const f = (t: number) => {
    t = ((t % 1) + 1) % 1
    if (t < 1 / 6) return p + (q - p) * 6 * t
    if (t < 1 / 2) return q
    if (t < 2 / 3) return p + (q - p) * (2 / 3 - t) * 6
    return p
  }
  return [f(h + 1 / 3), f(h), f(h - 1 / 3)]
}

export interface LegendEntry {
  label: number
  color: [number, number, number]
  count: number
}

// One legend row per distinct positive label, ordered by label id.
export function legendFromLabels(labels: number[]): LegendEntry[] {
  const counts = new Map<number, number>()
  for (const label of labels) {
    if (label > 0) counts.set(label, (counts.get(label) ?? 0) + 1)
  }
  return [...counts.entries()]
    .sort((a, b) => a[0] - b[0])
    .map(([label, count]) => ({ label, color: labelColor(label), count }))
}
