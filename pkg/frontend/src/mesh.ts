// Just enough OBJ/PLY parsing to render the uploaded file locally.
// The server stays the source of truth for sampling and prediction.

export interface ParsedMesh {
  vertices: Float32Array
  faces: Uint32Array
}

export function parseObj(text: string): ParsedMesh {
  const vertices: number[] = []
  const faces: number[] = []
  for (const raw of text.split('\n')) {
    const line = raw.trim()
    if (line.startsWith('v ')) {
      const parts = line.split(/\s+/)
      vertices.push(+parts[1], +parts[2], +parts[3])
    } else if (line.startsWith('f ')) {
      const idx = line.split(/\s+/).slice(1).map((tok) => {
        const i = parseInt(tok.split('/')[0], 10)
        return i > 0 ? i - 1 : vertices.length / 3 + i
      })
      for (let i = 1; i + 1 < idx.length; i++) {
        faces.push(idx[0], idx[i], idx[i + 1])
      }
    }
  }
  return { vertices: new Float32Array(vertices), faces: new Uint32Array(faces) }
}

export function parsePly(buffer: ArrayBuffer): ParsedMesh {
  const bytes = new Uint8Array(buffer)
  const headerEnd = findHeaderEnd(bytes)
  const header = new TextDecoder().decode(bytes.slice(0, headerEnd))
  const lines = header.split('\n').map((l) => l.trim())
  const binary = lines.some((l) => l.startsWith('format binary_little_endian'))
  let nVerts = 0
  let nFaces = 0
  const vertexProps: string[] = []
  let inVertex = false
  for (const line of lines) {
    if (line.startsWith('element vertex')) {
      nVerts = parseInt(line.split(/\s+/)[2], 10)
      inVertex = true
    } else if (line.startsWith('element face')) {
      nFaces = parseInt(line.split(/\s+/)[2], 10)
      inVertex = false
    } else if (line.startsWith('element')) {
      inVertex = false
    } else if (line.startsWith('property') && inVertex) {
      vertexProps.push(line.split(/\s+/).slice(-1)[0])
    }
  }
  const vertices = new Float32Array(nVerts * 3)
  const faces: number[] = []
  if (binary) {
    const view = new DataView(buffer, headerEnd)
    let off = 0
    const stride = vertexProps.length * 4 // float32 properties only
    for (let i = 0; i < nVerts; i++) {
      vertices[3 * i] = view.getFloat32(off, true)
      vertices[3 * i + 1] = view.getFloat32(off + 4, true)
      vertices[3 * i + 2] = view.getFloat32(off + 8, true)
      off += stride
    }
    for (let f = 0; f < nFaces; f++) {
      const count = view.getUint8(off)
      off += 1
      const idx: number[] = []
      for (let i = 0; i < count; i++) {
        idx.push(view.getInt32(off, true))
        off += 4
      }
      for (let i = 1; i + 1 < idx.length; i++) faces.push(idx[0], idx[i], idx[i + 1])
    }
  } else {
    const body = new TextDecoder().decode(bytes.slice(headerEnd))
    const tokens = body.split(/\s+/).filter((t) => t.length)
    let pos = 0
    for (let i = 0; i < nVerts; i++) {
      vertices[3 * i] = +tokens[pos]
      vertices[3 * i + 1] = +tokens[pos + 1]
      vertices[3 * i + 2] = +tokens[pos + 2]
      pos += vertexProps.length
    }
    for (let f = 0; f < nFaces; f++) {
      const count = +tokens[pos]
      pos += 1
      const idx = tokens.slice(pos, pos + count).map(Number)
      pos += count
      for (let i = 1; i + 1 < idx.length; i++) faces.push(idx[0], idx[i], idx[i + 1])
    }
  }
  return { vertices, faces: new Uint32Array(faces) }
}

function findHeaderEnd(bytes: Uint8Array): number {
  const marker = new TextEncoder().encode('end_header\n')
  outer: for (let i = 0; i < bytes.length - marker.length; i++) {
    for (let j = 0; j < marker.length; j++) {
      if (bytes[i + j] !== marker[j]) continue outer
    }
    return i + marker.length
  }
  throw new Error('not a PLY file: end_header missing')
}

// Normalize for display the same way the server does: bounding box into the
// unit cube centered at origin, so server point coordinates line up.
export function normalizeVertices(vertices: Float32Array): Float32Array {
  const lo = [Infinity, Infinity, Infinity]
  const hi = [-Infinity, -Infinity, -Infinity]
  for (let i = 0; i < vertices.length; i += 3) {
    for (let c = 0; c < 3; c++) {
      lo[c] = Math.min(lo[c], vertices[i + c])
      hi[c] = Math.max(hi[c], vertices[i + c])
    }
  }
  const extent = Math.max(hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]) || 1
  const out = new Float32Array(vertices.length)
  for (let i = 0; i < vertices.length; i += 3) {
    for (let c = 0; c < 3; c++) {
      out[i + c] = (vertices[i + c] - (lo[c] + hi[c]) / 2) / extent
    }
  }
  return out
}
