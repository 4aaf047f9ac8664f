/** three.js model viewer with a reproducible orbit camera. */

import * as THREE from 'three';

import { OrbitCamera } from './camera.js';
import { parseObj } from './objparse.js';

export class ModelViewer {
  readonly orbit = new OrbitCamera();
  private readonly renderer: THREE.WebGLRenderer;
  private readonly scene = new THREE.Scene();
  private readonly camera: THREE.OrthographicCamera;
  private mesh: THREE.Mesh | null = null;

  constructor(private readonly canvas: HTMLCanvasElement) {
    this.renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
    this.renderer.setSize(canvas.clientWidth, canvas.clientHeight, false);
    this.scene.background = new THREE.Color(0xf2f2f2);
    // frustum matches the service camera: [-1, 1] world span fills the view
    this.camera = new THREE.OrthographicCamera(-1, 1, 1, -1, 0.01, 10);
    this.scene.add(new THREE.AmbientLight(0xffffff, 0.65));
    const key = new THREE.DirectionalLight(0xffffff, 1.2);
    key.position.set(1.5, 2.0, 2.5);
    this.scene.add(key);
    const fill = new THREE.DirectionalLight(0xffffff, 0.5);
    fill.position.set(-2.0, -1.0, -1.5);
    this.scene.add(fill);
    this.wireInput();
    this.updateCamera();
  }

  private wireInput(): void {
    let dragging = false;
    let lastX = 0;
    let lastY = 0;
    this.canvas.addEventListener('contextmenu', (ev) => ev.preventDefault());
    this.canvas.addEventListener('pointerdown', (ev) => {
      dragging = true;
      lastX = ev.clientX;
      lastY = ev.clientY;
      ev.preventDefault();
    });
    window.addEventListener('pointermove', (ev) => {
      if (!dragging) return;
      this.orbit.rotate((ev.clientX - lastX) * 0.5, (ev.clientY - lastY) * 0.5);
      lastX = ev.clientX;
      lastY = ev.clientY;
      this.updateCamera();
    });
    window.addEventListener('pointerup', () => {
      dragging = false;
    });
    this.canvas.addEventListener(
      'wheel',
      (ev) => {
        this.orbit.applyZoom(ev.deltaY < 0 ? 1.1 : 1 / 1.1);
        this.updateCamera();
        ev.preventDefault();
      },
      { passive: false },
    );
  }

  private updateCamera(): void {
    const { eye, up } = this.orbit.basis();
    this.camera.position.set(eye[0] * 3, eye[1] * 3, eye[2] * 3);
    this.camera.up.set(up[0], up[1], up[2]);
    this.camera.lookAt(0, 0, 0);
    this.camera.zoom = this.orbit.zoom;
    this.camera.updateProjectionMatrix();
  }

  loadObjText(text: string): { vertexCount: number; triangleCount: number } {
    const parsed = parseObj(text);
    const geometry = new THREE.BufferGeometry();
    geometry.setAttribute('position', new THREE.BufferAttribute(parsed.positions, 3));
    geometry.setIndex(new THREE.BufferAttribute(parsed.indices, 1));
    geometry.computeVertexNormals();
    const material = new THREE.MeshStandardMaterial({
      color: 0x7f9ccb,
      side: THREE.DoubleSide,
      flatShading: false,
    });
    if (this.mesh) {
      this.scene.remove(this.mesh);
      this.mesh.geometry.dispose();
      (this.mesh.material as THREE.Material).dispose();
    }
    this.mesh = new THREE.Mesh(geometry, material);
    this.scene.add(this.mesh);
    return { vertexCount: parsed.positions.length / 3, triangleCount: parsed.indices.length / 3 };
  }

  render(): void {
    this.renderer.render(this.scene, this.camera);
  }

  start(): void {
    const loop = () => {
      this.render();
      requestAnimationFrame(loop);
    };
    loop();
  }
}
