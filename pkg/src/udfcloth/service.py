"""HTTP service: the generate / capture / edit / reset / export loop.

All computation happens server-side against immutable shared state (decoder,
latent library, sketch library); sessions carry only the mutable latent code
and pose, and requests touching the same session are serialized.
"""
from __future__ import annotations

import json
import logging
import math
import threading
import time
import uuid
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from .decoder import DecoderField, LatentFieldView, load_checkpoint
from .editor import EMPTY_CHAMFER, EditConfig, EditSession, optimize_latent
from .encoder import EmptySketchError, SketchLibrary, encode_sketch, load_library
from .fields import grid_from_field
from .mesh import TriMesh, obj_to_string, save_obj
from .mesher import MeshingConfig, extract_mesh
from .sketch import CameraPose, contour_from_depth, render_depth, sketch_from_png_bytes, sketch_to_png_bytes
from .sketch import SketchImage

__all__ = ["ServiceConfig", "ServiceRuntime", "Session", "create_app"]

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ServiceConfig:
    mesh_resolution: int = 64
    generate_steps: int = 20  # generation must feel instant; editing is deliberate
    edit_steps: int = 50
    session_ttl: float = 3600.0
    persist_dir: str | None = None
    edit_config: EditConfig = field(default_factory=EditConfig)


@dataclass
class Session:
    id: str
    z: np.ndarray
    z_init: np.ndarray
    pose: CameraPose
    mesh: TriMesh
    chamfer: float
    created: float = field(default_factory=time.time)
    updated: float = field(default_factory=time.time)
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


class ServiceRuntime:
    """Immutable models plus the mutable session table."""

    def __init__(
        self,
        decoder: DecoderField | None,
        latents: dict[str, np.ndarray] | None,
        library: SketchLibrary | None,
        config: ServiceConfig = ServiceConfig(),
    ):
        self.decoder = decoder
        self.latents = latents or {}
        self.library = library
        self.config = config
        self.sessions: dict[str, Session] = {}
        self._table_lock = threading.Lock()
        if config.persist_dir:
            Path(config.persist_dir).mkdir(parents=True, exist_ok=True)
            self._restore_sessions()

    @classmethod
    def from_files(cls, checkpoint_path=None, library_path=None, config: ServiceConfig = ServiceConfig()):
        decoder = latents = library = None
        if checkpoint_path and Path(checkpoint_path).exists():
            decoder, latents = load_checkpoint(checkpoint_path)
        if library_path and Path(library_path).exists():
            library = load_library(library_path)
        return cls(decoder, latents, library, config)

    @property
    def ready(self) -> bool:
        return self.decoder is not None and self.library is not None and len(self.library) > 0

    # -- session table -------------------------------------------------

    def get_session(self, sid: str) -> Session | None:
        with self._table_lock:
            self._expire_locked()
            return self.sessions.get(sid)

    def put_session(self, session: Session) -> None:
        with self._table_lock:
            self.sessions[session.id] = session
        self._persist(session)

    def _expire_locked(self) -> None:
        now = time.time()
        ttl = self.config.session_ttl
        for sid in [s for s, sess in self.sessions.items() if now - sess.updated > ttl]:
            del self.sessions[sid]

    # -- persistence (optional) -----------------------------------------

    def _persist(self, session: Session) -> None:
        if not self.config.persist_dir:
            return
        base = Path(self.config.persist_dir) / session.id
        save_obj(session.mesh, base.with_suffix(".obj"))
        state = {
            "id": session.id,
            "z": session.z.tolist(),
            "z_init": session.z_init.tolist(),
            "azimuth": session.pose.azimuth,
            "elevation": session.pose.elevation,
            "width": session.pose.width,
            "height": session.pose.height,
            "chamfer": session.chamfer,
            "created": session.created,
            "updated": session.updated,
        }
        base.with_suffix(".json").write_text(json.dumps(state))

    def _restore_sessions(self) -> None:
        from .mesh import load_obj

        for state_file in Path(self.config.persist_dir).glob("*.json"):
            try:
                state = json.loads(state_file.read_text())
                mesh = load_obj(state_file.with_suffix(".obj"))
                pose = CameraPose(
                    azimuth=state["azimuth"],
                    elevation=state["elevation"],
                    width=state["width"],
                    height=state["height"],
                )
                sess = Session(
                    id=state["id"],
                    z=np.array(state["z"]),
                    z_init=np.array(state["z_init"]),
                    pose=pose,
                    mesh=mesh,
                    chamfer=state["chamfer"],
                    created=state["created"],
                    updated=state["updated"],
                )
                self.sessions[sess.id] = sess
            except Exception:
                log.exception("could not restore session from %s", state_file)

    # -- core operations -------------------------------------------------

    def decode_mesh(self, z: np.ndarray) -> TriMesh:
        view = LatentFieldView(self.decoder, z, fast=True)
        grid = grid_from_field(view, self.config.mesh_resolution)
        return extract_mesh(grid, MeshingConfig())

    def optimize(self, z0: np.ndarray, pose: CameraPose, sketch: SketchImage, steps: int) -> EditSession:
        cfg = replace(self.config.edit_config, steps=steps)
        session = EditSession(z=z0, z_init=z0, pose=pose, sketch=sketch, config=cfg)
        return optimize_latent(session, self.decoder)


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "message": message})


def create_app(runtime: ServiceRuntime, ui_dir=None) -> FastAPI:
    app = FastAPI(title="udfcloth", version="0.1.0")

    @app.post("/api/generate")
    async def generate(request: Request):
        if not runtime.ready:
            return _error(503, "checkpoint_missing", "decoder checkpoint or sketch library not loaded")
        body = await request.body()
        try:
            sketch = sketch_from_png_bytes(body)
        except Exception:
            return _error(422, "bad_png", "request body is not a decodable PNG image")
        if sketch.n_ink == 0:
            return _error(422, "empty_sketch", "sketch has no ink pixels")
        try:
            z0, pose, _score = encode_sketch(sketch, runtime.library)
        except EmptySketchError:
            return _error(422, "empty_sketch", "sketch has no ink pixels")
        sketch = SketchImage(raster=sketch.raster, pose=pose)
        result = runtime.optimize(z0, pose, sketch, runtime.config.generate_steps)
        mesh = runtime.decode_mesh(result.z)
        sid = uuid.uuid4().hex
        chamfer = min(c for _, c in result.history) if result.history else EMPTY_CHAMFER
        session = Session(id=sid, z=result.z, z_init=result.z.copy(), pose=pose, mesh=mesh, chamfer=chamfer)
        runtime.put_session(session)
        return {"session_id": sid, "mesh_url": f"/api/session/{sid}/model.obj", "chamfer_score": chamfer}

    @app.post("/api/session/{sid}/capture")
    async def capture(sid: str, request: Request):
        session = runtime.get_session(sid)
        if session is None:
            return _error(404, "unknown_session", f"no session {sid}")
        params = await request.json()
        azimuth = math.radians(float(params.get("azimuth", 0.0)))
        elevation = math.radians(float(params.get("elevation", 0.0)))
        with session.lock:
            pose = CameraPose(
                azimuth=azimuth, elevation=elevation, width=session.pose.width, height=session.pose.height
            )
            sketch = contour_from_depth(render_depth(session.mesh, pose), pose)
            session.pose = pose
            session.updated = time.time()
            runtime.put_session(session)
            return Response(content=sketch_to_png_bytes(sketch), media_type="image/png")

    @app.post("/api/session/{sid}/edit")
    async def edit(sid: str, request: Request):
        session = runtime.get_session(sid)
        if session is None:
            return _error(404, "unknown_session", f"no session {sid}")
        body = await request.body()
        try:
            sketch = sketch_from_png_bytes(body, session.pose)
        except Exception:
            return _error(422, "bad_png", "request body is not a decodable PNG image")
        if sketch.n_ink == 0:
            return _error(422, "empty_sketch", "sketch has no ink pixels")
        with session.lock:
            chamfer_before = session.chamfer
            result = runtime.optimize(session.z, session.pose, sketch, runtime.config.edit_steps)
            chamfer_after = min(c for _, c in result.history)
            session.z = result.z
            session.mesh = runtime.decode_mesh(result.z)
            session.chamfer = chamfer_after
            session.updated = time.time()
            runtime.put_session(session)
            return {
                "mesh_url": f"/api/session/{sid}/model.obj",
                "chamfer_before": result.history[0][1],
                "chamfer_after": chamfer_after,
                "diverged": result.diverged,
            }

    @app.post("/api/session/{sid}/reset")
    async def reset(sid: str):
        session = runtime.get_session(sid)
        if session is None:
            return _error(404, "unknown_session", f"no session {sid}")
        with session.lock:
            session.z = session.z_init.copy()
            session.mesh = runtime.decode_mesh(session.z)
            session.updated = time.time()
            runtime.put_session(session)
            return {"mesh_url": f"/api/session/{sid}/model.obj"}

    @app.get("/api/session/{sid}/model.obj")
    async def export_model(sid: str):
        session = runtime.get_session(sid)
        if session is None:
            return _error(404, "unknown_session", f"no session {sid}")
        with session.lock:
            return Response(content=obj_to_string(session.mesh), media_type="text/plain")

    if ui_dir is not None and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
