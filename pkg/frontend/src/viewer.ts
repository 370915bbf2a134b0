// three.js rendering: the uploaded mesh, a point-cloud overlay for masks and
// feature colors, face tinting for labels, and raycast picking.

import * as THREE from 'three'
import { OrbitControls } from 'three/examples/jsm/controls/OrbitControls.js'
import { labelColor } from './palette'

export interface PickResult {
  point: [number, number, number]
}

export class MeshViewer {
  private renderer: THREE.WebGLRenderer
  private scene = new THREE.Scene()
  private camera: THREE.PerspectiveCamera
  private controls: OrbitControls
  private raycaster = new THREE.Raycaster()
  private meshObject: THREE.Mesh | null = null
  private pointsObject: THREE.Points | null = null
  private promptMarker: THREE.Mesh

  constructor(private container: HTMLElement) {
    this.renderer = new THREE.WebGLRenderer({ antialias: true })
    this.renderer.setPixelRatio(Math.min(window.devicePixelRatio, 2))
    this.renderer.setSize(container.clientWidth, container.clientHeight)
    this.renderer.setClearColor(0x14161a)
    container.appendChild(this.renderer.domElement)

    const aspect = container.clientWidth / Math.max(container.clientHeight, 1)
    this.camera = new THREE.PerspectiveCamera(45, aspect, 0.01, 100)
    this.camera.position.set(1.2, 0.9, 1.2)
    this.controls = new OrbitControls(this.camera, this.renderer.domElement)
    this.controls.enableDamping = true

    this.scene.add(new THREE.HemisphereLight(0xffffff, 0x334, 1.0))
    const dir = new THREE.DirectionalLight(0xffffff, 1.4)
    dir.position.set(2, 3, 2)
    this.scene.add(dir)

    this.promptMarker = new THREE.Mesh(
      new THREE.SphereGeometry(0.012, 12, 12),
      new THREE.MeshBasicMaterial({ color: 0x3dff6e }),
    )
    this.promptMarker.visible = false
    this.scene.add(this.promptMarker)

    const animate = () => {
      requestAnimationFrame(animate)
      this.controls.update()
      this.renderer.render(this.scene, this.camera)
    }
    animate()
    window.addEventListener('resize', () => this.resize())
  }

  resize() {
    const w = this.container.clientWidth
    const h = Math.max(this.container.clientHeight, 1)
    this.camera.aspect = w / h
    this.camera.updateProjectionMatrix()
    this.renderer.setSize(w, h)
  }

  setGeometry(vertices: Float32Array, faces: Uint32Array, points: Float32Array) {
    if (this.meshObject) this.scene.remove(this.meshObject)
    if (this.pointsObject) this.scene.remove(this.pointsObject)

    const geo = new THREE.BufferGeometry()
    geo.setAttribute('position', new THREE.BufferAttribute(vertices, 3))
    geo.setIndex(new THREE.BufferAttribute(faces, 1))
    geo.computeVertexNormals()
    const mat = new THREE.MeshStandardMaterial({
      color: 0x8a97a8, flatShading: true, vertexColors: false,
      polygonOffset: true, polygonOffsetFactor: 1,
    })
    this.meshObject = new THREE.Mesh(geo, mat)
    this.scene.add(this.meshObject)

    const pgeo = new THREE.BufferGeometry()
    pgeo.setAttribute('position', new THREE.BufferAttribute(points, 3))
    const colors = new Float32Array(points.length).fill(0.45)
    pgeo.setAttribute('color', new THREE.BufferAttribute(colors, 3))
    this.pointsObject = new THREE.Points(
      pgeo, new THREE.PointsMaterial({ size: 0.008, vertexColors: true }))
    this.pointsObject.visible = false
    this.scene.add(this.pointsObject)
  }

  /** Per-point overlay (candidate masks / feature colors). */
  setPointColors(rgb: Float32Array | null) {
    if (!this.pointsObject) return
    if (rgb === null) {
      this.pointsObject.visible = false
      return
    }
    const attr = this.pointsObject.geometry.getAttribute('color') as THREE.BufferAttribute
    ;(attr.array as Float32Array).set(rgb)
    attr.needsUpdate = true
    this.pointsObject.visible = true
  }

  /** Per-face label tinting via non-indexed vertex colors. */
  setFaceLabels(labels: number[] | null) {
    if (!this.meshObject) return
    const mesh = this.meshObject
    if (labels === null) {
      ;(mesh.material as THREE.MeshStandardMaterial).vertexColors = false
      return
    }
    let geo = mesh.geometry as THREE.BufferGeometry
    if (geo.getIndex() !== null) {
      geo = geo.toNonIndexed()
      mesh.geometry = geo
      geo.computeVertexNormals()
    }
    const n = geo.getAttribute('position').count
    const colors = new Float32Array(n * 3)
    for (let f = 0; f < labels.length; f++) {
      const [r, g, b] = labelColor(labels[f])
      for (let v = 0; v < 3; v++) {
        colors.set([r, g, b], (f * 3 + v) * 3)
      }
    }
    geo.setAttribute('color', new THREE.BufferAttribute(colors, 3))
    const mat = mesh.material as THREE.MeshStandardMaterial
    mat.vertexColors = true
    mat.color.set(0xffffff)
    mat.needsUpdate = true
  }

  showPrompt(point: [number, number, number] | null) {
    if (point === null) {
      this.promptMarker.visible = false
    } else {
      this.promptMarker.position.set(...point)
      this.promptMarker.visible = true
    }
  }

  /** Raycast a client-space click; null when the background was hit. */
  pick(clientX: number, clientY: number): PickResult | null {
    if (!this.meshObject) return null
    const rect = this.renderer.domElement.getBoundingClientRect()
    const ndc = new THREE.Vector2(
      ((clientX - rect.left) / rect.width) * 2 - 1,
      -((clientY - rect.top) / rect.height) * 2 + 1,
    )
    this.raycaster.setFromCamera(ndc, this.camera)
    const hits = this.raycaster.intersectObject(this.meshObject)
    if (hits.length === 0) return null
    const p = hits[0].point
    return { point: [p.x, p.y, p.z] }
  }
}
