import { Client } from './api'
import { SessionController, overlayColors } from './state'
import { MeshViewer } from './viewer'
import { parseObj, parsePly, normalizeVertices } from './mesh'
import { labelColor, legendFromLabels } from './palette'

const api = new Client('')
const controller = new SessionController(api)
const viewer = new MeshViewer(document.getElementById('canvas')!)

const el = {
  file: document.getElementById('file') as HTMLInputElement,
  status: document.getElementById('status')!,
  error: document.getElementById('error')!,
  candidates: document.getElementById('candidates')!,
  autoseg: document.getElementById('autoseg') as HTMLButtonElement,
  colors: document.getElementById('colors') as HTMLButtonElement,
  hierarchy: document.getElementById('hierarchy')!,
  level: document.getElementById('level') as HTMLInputElement,
  levelLabel: document.getElementById('level-label')!,
  legend: document.getElementById('legend')!,
  partCount: document.getElementById('part-count')!,
}

let nPoints = 0

controller.onChange = (state) => {
  el.status.textContent = state.busy ?? (state.featuresReady
    ? 'ready; click the surface to prompt'
    : state.session ? 'features pending' : 'load an OBJ or PLY to begin')
  el.error.textContent = state.lastError ?? ''
  el.autoseg.disabled = !state.featuresReady || state.busy !== null
  el.colors.disabled = !state.featuresReady || state.busy !== null

  renderCandidates(state)
  if (state.mode === 'labels' && state.faceLabels) {
    viewer.setFaceLabels(state.faceLabels)
    viewer.setPointColors(null)
    renderLegend(state.faceLabels)
  } else if (state.mode === 'features' || state.mode === 'candidates') {
    viewer.setPointColors(overlayColors(state, nPoints))
  }
  if (state.hierarchyMax > 0) {
    el.hierarchy.style.display = 'block'
    el.level.max = String(state.hierarchyMax)
    el.level.value = String(state.hierarchyLevel)
    el.levelLabel.textContent = String(state.hierarchyLevel)
  }
}

function renderCandidates(state: typeof controller.state) {
  el.candidates.innerHTML = ''
  if (!state.prompt) return
  state.candidates.forEach((cand) => {
    const row = document.createElement('div')
    row.className = 'cand' + (cand.selectedByModel ? ' best' : '')
    const swatch = document.createElement('span')
    swatch.className = 'swatch'
    const [r, g, b] = labelColor(cand.head + 1)
    swatch.style.background = `rgb(${r * 255 | 0}, ${g * 255 | 0}, ${b * 255 | 0})`
    const text = document.createElement('span')
    text.textContent = `head ${cand.head} — predicted IoU ${cand.iou.toFixed(3)}`
    const pick = document.createElement('button')
    pick.textContent = 'select'
    pick.onclick = () => {
      controller.selectHead(cand.head).catch(showError)
    }
    row.append(swatch, text, pick)
    el.candidates.appendChild(row)
  })
}

function renderLegend(labels: number[]) {
  const entries = legendFromLabels(labels)
  el.partCount.textContent = `(${entries.length} parts)`
  el.legend.innerHTML = ''
  for (const entry of entries) {
    const row = document.createElement('div')
    const swatch = document.createElement('span')
    swatch.className = 'swatch'
    const [r, g, b] = entry.color
    swatch.style.background = `rgb(${r * 255 | 0}, ${g * 255 | 0}, ${b * 255 | 0})`
    const text = document.createElement('span')
    text.textContent = `part ${entry.label} — ${entry.count} faces`
    row.append(swatch, text)
    el.legend.appendChild(row)
  }
}

function showError(err: unknown) {
  el.error.textContent = String(err)
}

el.file.onchange = async () => {
  const file = el.file.files?.[0]
  if (!file) return
  const buffer = await file.arrayBuffer()
  const isPly = file.name.toLowerCase().endsWith('.ply')
  const parsed = isPly ? parsePly(buffer) : parseObj(new TextDecoder().decode(buffer))
  viewer.setGeometry(normalizeVertices(parsed.vertices), parsed.faces, new Float32Array(0))
  try {
    await controller.load(buffer, isPly ? 'application/ply' : 'model/obj')
    const sid = controller.state.session!.session_id
    const { points } = await api.points(sid)
    nPoints = points.length
    viewer.setGeometry(normalizeVertices(parsed.vertices), parsed.faces,
      new Float32Array(points.flat()))
  } catch (err) {
    showError(err)
  }
}

document.getElementById('canvas')!.addEventListener('click', (ev) => {
  const hit = viewer.pick(ev.clientX, ev.clientY)
  if (!hit) return                        // background click: no request
  viewer.showPrompt(hit.point)
  controller.pickPrompt(hit.point).catch(showError)
})

el.autoseg.onclick = () => {
  controller.autoseg().catch(showError)
}
el.colors.onclick = () => {
  controller.showFeatureColors().catch(showError)
}
el.level.oninput = () => {
  controller.setHierarchyLevel(parseInt(el.level.value, 10)).catch(showError)
}
