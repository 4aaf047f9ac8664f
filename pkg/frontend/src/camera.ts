/**
 * Orbit camera state shared by the viewer and the capture requests.
 *
 * Azimuth/elevation are stored in degrees and capture poses are quantized to
 * whole degrees so a capture is exactly reproducible for the same view.
 */

export class OrbitCamera {
  azimuthDeg = 0;
  elevationDeg = 0;
  zoom = 1;

  static readonly MIN_ZOOM = 0.25;
  static readonly MAX_ZOOM = 8;
  static readonly MAX_ELEVATION = 89;

  rotate(dAzimuthDeg: number, dElevationDeg: number): void {
    this.azimuthDeg = (((this.azimuthDeg + dAzimuthDeg) % 360) + 360) % 360;
    this.elevationDeg = Math.min(
      OrbitCamera.MAX_ELEVATION,
      Math.max(-OrbitCamera.MAX_ELEVATION, this.elevationDeg + dElevationDeg),
    );
  }

  applyZoom(factor: number): void {
    this.zoom = Math.min(OrbitCamera.MAX_ZOOM, Math.max(OrbitCamera.MIN_ZOOM, this.zoom * factor));
  }

  /** Pose sent with capture requests: quantized to 1 degree steps. */
  capturePose(): { azimuth: number; elevation: number } {
    return {
      azimuth: ((Math.round(this.azimuthDeg) % 360) + 360) % 360,
      elevation: Math.round(this.elevationDeg),
    };
  }

  /**
   * Unit eye direction and up vector matching the service camera model
   * (world-to-camera rotation Rx(elevation) @ Ry(-azimuth); the eye sits on
   * the camera z axis, up is the camera y axis).
   */
  basis(): { eye: [number, number, number]; up: [number, number, number] } {
    const a = (this.azimuthDeg * Math.PI) / 180;
    const e = (this.elevationDeg * Math.PI) / 180;
    const sa = Math.sin(a);
    const ca = Math.cos(a);
    const se = Math.sin(e);
    const ce = Math.cos(e);
    return {
      eye: [ce * sa, se, ce * ca],
      up: [-se * sa, ce, -se * ca],
    };
  }
}

/**
 * Project a world point to pixel coordinates exactly as the service does:
 * px = u*scale + (W-1)/2, py = -v*scale + (H-1)/2 with scale = min(W, H)/2.
 */
export function projectPoint(
  p: [number, number, number],
  azimuthDeg: number,
  elevationDeg: number,
  width: number,
  height: number,
): [number, number] {
  const a = (azimuthDeg * Math.PI) / 180;
  const e = (elevationDeg * Math.PI) / 180;
  const sa = Math.sin(a);
  const ca = Math.cos(a);
  const se = Math.sin(e);
  const ce = Math.cos(e);
  // rows of Rx(e) @ Ry(-a)
  const u = ca * p[0] + 0 * p[1] - sa * p[2];
  const v = -se * sa * p[0] + ce * p[1] - se * ca * p[2];
  const scale = Math.min(width, height) / 2;
  return [u * scale + (width - 1) / 2, -v * scale + (height - 1) / 2];
}
