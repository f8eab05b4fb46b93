"""Session service for interactive subsurface mapping.

Holds hidden layered scenes, executes simulated dips through the full
pipeline (simulate -> preprocess -> per-node classification -> composite),
and streams traces, node probabilities, and map deltas over a WebSocket.
"""

from __future__ import annotations

import asyncio
import json
import threading
import time
import uuid
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect

from .errors import SceneError
from .mapping import (
    ColorMap,
    DipEvent,
    GridSpec,
    SubsurfaceMap,
    composite,
    default_colormap,
    record_dip,
)
from .mce import Recognizer
from .preprocess import butterworth_lpf, gravity_compensate
from .simulate import (
    MEDIA_CLASSES,
    MediaModel,
    OperatorProfile,
    default_media_library,
    simulate_layered_dip,
)

API_VERSION = 1

#: Simulated signal-acquisition delay: one recognition window at 100 Hz.
DEFAULT_SAMPLING_DELAY_S = 1.28


@dataclass(frozen=True)
class Layer:
    x0: float
    x1: float
    d0: float
    d1: float
    class_id: int

    def to_dict(self):
        return {"x0": self.x0, "x1": self.x1, "d0": self.d0, "d1": self.d1, "class_id": self.class_id}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class Scene:
    """Hidden ground truth: layered media tiling a (width x depth) box."""

    width: float
    depth: float
    layers: list
    seed: int = 0

    def __post_init__(self):
        area = 0.0
        for a in self.layers:
            if not (0 <= a.x0 < a.x1 <= self.width + 1e-9 and 0 <= a.d0 < a.d1 <= self.depth + 1e-9):
                raise SceneError(f"layer {a} outside the box")
            if not (0 <= a.class_id < len(MEDIA_CLASSES)):
                raise SceneError(f"unknown media class {a.class_id}")
            area += (a.x1 - a.x0) * (a.d1 - a.d0)
        for i, a in enumerate(self.layers):
            for b in self.layers[i + 1 :]:
                ox = min(a.x1, b.x1) - max(a.x0, b.x0)
                od = min(a.d1, b.d1) - max(a.d0, b.d0)
                if ox > 1e-9 and od > 1e-9:
                    raise SceneError(f"layers overlap: {a} and {b}")
        if abs(area - self.width * self.depth) > 1e-6:
            raise SceneError("layers do not tile the box")

    def class_at(self, x: float, d: float) -> int:
        for a in self.layers:
            if a.x0 - 1e-12 <= x <= a.x1 + 1e-12 and a.d0 - 1e-12 <= d <= a.d1 + 1e-12:
                return a.class_id
        raise SceneError(f"point ({x}, {d}) not covered by any layer")

    def column(self, x: float) -> list:
        """Depth-ordered (d0, d1, class_id) stack under surface position x."""
        col = sorted(
            [(a.d0, a.d1, a.class_id) for a in self.layers if a.x0 - 1e-12 <= x <= a.x1 + 1e-12],
            key=lambda t: t[0],
        )
        out = []
        for d0, d1, cid in col:
            if not out or out[-1][1] <= d0 + 1e-9:
                out.append((d0, d1, cid))
        return out

    def to_dict(self):
        return {
            "width": self.width,
            "depth": self.depth,
            "seed": self.seed,
            "layers": [a.to_dict() for a in self.layers],
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            width=d["width"], depth=d["depth"], seed=d.get("seed", 0),
            layers=[Layer.from_dict(a) for a in d["layers"]],
        )


def default_scene(seed: int = 0) -> Scene:
    """Two-column demo box: left mung-millet-sand, right simusoil-millet-mung.

    Layer boundaries sit at 20% and 80% of depth, between the five dip
    nodes' window extents, echoing the uneven piles of the reference box.
    """
    w, d = 0.6, 0.36
    b1, b2 = 0.2 * d, 0.8 * d
    names = {n: i for i, n in enumerate(MEDIA_CLASSES)}
    layers = [
        Layer(0.0, w / 2, 0.0, b1, names["Mung"]),
        Layer(0.0, w / 2, b1, b2, names["Millet"]),
        Layer(0.0, w / 2, b2, d, names["Sand"]),
        Layer(w / 2, w, 0.0, b1, names["SimuSoil"]),
        Layer(w / 2, w, b1, b2, names["Millet"]),
        Layer(w / 2, w, b2, d, names["Mung"]),
    ]
    return Scene(width=w, depth=d, layers=layers, seed=seed)


def random_scene(seed: int) -> Scene:
    """Deterministic random layout: 2 columns x 2-3 layers of distinct media."""
    rng = np.random.default_rng(np.random.SeedSequence([0x5CE4E, seed]))
    w, d = 0.6, 0.36
    layers = []
    split = float(rng.uniform(0.35, 0.65)) * w
    for x0, x1 in ((0.0, split), (split, w)):
        n_layers = int(rng.integers(2, 4))
        bounds = np.concatenate([[0.0], np.sort(rng.uniform(0.25, 0.75, n_layers - 1)) * d, [d]])
        classes = rng.choice(len(MEDIA_CLASSES), size=n_layers, replace=False)
        for i in range(n_layers):
            layers.append(Layer(x0, x1, float(bounds[i]), float(bounds[i + 1]), int(classes[i])))
    return Scene(width=w, depth=d, layers=layers, seed=seed)


@dataclass
class Session:
    id: str
    scene: Scene
    events: list = field(default_factory=list)
    map: SubsurfaceMap | None = None
    dip_count: int = 0
    grid: GridSpec | None = None

    def to_dict(self):
        return {
            "id": self.id,
            "scene": self.scene.to_dict(),
            "events": [e.to_dict() for e in self.events],
            "dip_count": self.dip_count,
        }

    @classmethod
    def from_dict(cls, d):
        s = cls(id=d["id"], scene=Scene.from_dict(d["scene"]), dip_count=d.get("dip_count", 0))
        s.events = [DipEvent.from_dict(e) for e in d["events"]]
        return s


class MappingService:
    """Session registry plus the dip pipeline, independent of HTTP."""

    def __init__(
        self,
        recognizer: Recognizer,
        media: list[MediaModel] | None = None,
        colormap: ColorMap | None = None,
        instant_sampling: bool = False,
        sampling_delay_s: float = DEFAULT_SAMPLING_DELAY_S,
        grid_cell: float = 0.01,
    ):
        self.recognizer = recognizer
        self.media = media or default_media_library()
        self.colormap = colormap or default_colormap()
        self.instant_sampling = instant_sampling
        self.sampling_delay_s = sampling_delay_s
        self.grid_cell = grid_cell
        self.sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    # -- session management -------------------------------------------------

    def create_session(self, scene: Scene | None = None, seed: int | None = None) -> Session:
        if scene is None:
            scene = default_scene(seed=0) if seed is None else random_scene(seed)
        session = Session(id=uuid.uuid4().hex[:12], scene=scene)
        session.grid = GridSpec.from_bounds(0.0, scene.width, 0.0, scene.depth, self.grid_cell)
        with self._lock:
            self.sessions[session.id] = session
        return session

    def get(self, session_id: str) -> Session:
        with self._lock:
            if session_id not in self.sessions:
                raise KeyError(session_id)
            return self.sessions[session_id]

    # -- pipeline -----------------------------------------------------------

    def dip(self, session_id: str, x: float, operator: OperatorProfile | None = None):
        """Simulate a dip at surface x, classify nodes, recomposite the map.

        Returns (event, delta_cells, trace) where delta_cells lists the
        changed map cells and trace is the filtered wrench for display.
        """
        session = self.get(session_id)
        if not (0 <= x <= session.scene.width):
            raise ValueError(f"x={x} outside scene width {session.scene.width}")
        op = operator or OperatorProfile()
        if not self.instant_sampling:
            time.sleep(self.sampling_delay_s)
        with self._lock:
            dip_idx = session.dip_count
            session.dip_count += 1
        seed = int(np.random.SeedSequence([abs(hash(session.id)) % (2**31), session.scene.seed, dip_idx]).generate_state(1)[0])
        layer_stack = [
            (d0, d1, self.media[cid]) for d0, d1, cid in session.scene.column(x)
        ]
        recording = simulate_layered_dip(layer_stack, op, seed=seed, operator_id=0)
        event = record_dip(recording, x, self.recognizer)

        filtered = butterworth_lpf(gravity_compensate(recording))
        trace = {
            "t": (np.arange(len(filtered)) / filtered.rate_hz).tolist(),
            "mx": np.round(filtered.mx, 6).tolist(),
            "my": np.round(filtered.my, 6).tolist(),
            "fz": np.round(filtered.fz, 6).tolist(),
            "depth": np.round(filtered.depth, 6).tolist(),
        }

        with self._lock:
            old = session.map
            session.events.append(event)
            session.map = composite(session.events, session.grid, self.colormap)
            delta = self._delta_cells(old, session.map)
        return event, delta, trace

    @staticmethod
    def _delta_cells(old: SubsurfaceMap | None, new: SubsurfaceMap) -> list:
        changed = []
        for i in range(new.grid.nd):
            for j in range(new.grid.nx):
                if (
                    old is None
                    and new.confidence[i, j] > 0
                    or old is not None
                    and (
                        new.confidence[i, j] != old.confidence[i, j]
                        or not np.array_equal(new.mixtures[i, j], old.mixtures[i, j])
                    )
                ):
                    changed.append(
                        {"i": i, "j": j, "mixture": new.mixtures[i, j].tolist(), "confidence": float(new.confidence[i, j])}
                    )
        return changed

    def reveal(self, session_id: str):
        """Ground truth plus per-cell agreement of confident cells."""
        session = self.get(session_id)
        agreement = None
        if session.map is not None and session.events:
            xs, ds = session.grid.centers()
            conf = session.map.confidence > 0.5
            if np.any(conf):
                match = 0
                total = 0
                argmax = session.map.mixtures.argmax(axis=2)
                for i in range(session.grid.nd):
                    for j in range(session.grid.nx):
                        if conf[i, j]:
                            total += 1
                            match += int(argmax[i, j] == session.scene.class_at(xs[j], ds[i]))
                agreement = match / total if total else None
        return session.scene, agreement

    # -- persistence ----------------------------------------------------------

    def save_sessions(self, path):
        with self._lock:
            doc = {"v": API_VERSION, "sessions": [s.to_dict() for s in self.sessions.values()]}
        with open(path, "w") as f:
            json.dump(doc, f)

    def load_sessions(self, path):
        with open(path) as f:
            doc = json.load(f)
        for d in doc.get("sessions", []):
            s = Session.from_dict(d)
            s.grid = GridSpec.from_bounds(0.0, s.scene.width, 0.0, s.scene.depth, self.grid_cell)
            if s.events:
                s.map = composite(s.events, s.grid, self.colormap)
            with self._lock:
                self.sessions[s.id] = s


def _map_payload(session: Session, colormap: ColorMap) -> dict:
    if session.map is None:
        empty = composite_empty(session.grid, colormap)
        return {"v": API_VERSION, "map": empty.to_dict(), "n_dips": 0}
    return {"v": API_VERSION, "map": session.map.to_dict(), "n_dips": len(session.events)}


def composite_empty(grid: GridSpec, colormap: ColorMap) -> SubsurfaceMap:
    return SubsurfaceMap(
        grid=grid,
        mixtures=np.zeros((grid.nd, grid.nx, 6)),
        confidence=np.zeros((grid.nd, grid.nx)),
        colormap=colormap,
    )


def create_app(
    recognizer: Recognizer | str,
    instant_sampling: bool = False,
    persistence_path: str | None = None,
    sampling_delay_s: float = DEFAULT_SAMPLING_DELAY_S,
) -> FastAPI:
    """HTTP/WS API over a MappingService. All payloads carry a "v" field."""
    if isinstance(recognizer, str):
        try:
            recognizer = Recognizer.load(recognizer)
        except (OSError, ValueError, KeyError) as exc:
            raise ValueError(f"cannot load checkpoint: {exc}") from exc
    svc = MappingService(recognizer, instant_sampling=instant_sampling, sampling_delay_s=sampling_delay_s)
    app = FastAPI(title="dipme mapping service")
    app.state.service = svc
    streams: dict[str, list] = {}
    streams_lock = threading.Lock()

    if persistence_path:
        import os

        if os.path.exists(persistence_path):
            svc.load_sessions(persistence_path)

        @app.on_event("shutdown")
        def _flush():
            svc.save_sessions(persistence_path)

    async def _broadcast(session_id: str, message: dict):
        with streams_lock:
            sockets = list(streams.get(session_id, []))
        for ws in sockets:
            try:
                await ws.send_json(message)
            except Exception:
                pass

    @app.get("/healthz")
    def healthz():
        return {"v": API_VERSION, "status": "ok"}

    @app.get("/media")
    def media():
        return {
            "v": API_VERSION,
            "classes": [
                {"class_id": m.class_id, "name": m.name, "particle_size_band_mm": list(m.particle_size_band),
                 "color": svc.colormap.colors[m.class_id].tolist()}
                for m in svc.media
            ],
        }

    @app.post("/sessions")
    def create_session(body: dict | None = None):
        body = body or {}
        try:
            scene = Scene.from_dict(body["scene"]) if "scene" in body else None
            session = svc.create_session(scene=scene, seed=body.get("seed"))
        except SceneError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        return {
            "v": API_VERSION,
            "session_id": session.id,
            "box": {"width": session.scene.width, "depth": session.scene.depth},
            "grid": session.grid.to_dict(),
            "colormap": svc.colormap.to_dict(),
        }

    @app.post("/sessions/{session_id}/dips")
    async def dip(session_id: str, body: dict):
        if "x" not in body:
            raise HTTPException(status_code=422, detail="body needs x")
        op = OperatorProfile(**body["operator"]) if "operator" in body else None
        try:
            event, delta, trace = await asyncio.to_thread(svc.dip, session_id, float(body["x"]), op)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown session")
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        except Exception as exc:  # pipeline failure
            raise HTTPException(status_code=500, detail=f"pipeline failure: {exc}")
        # stream the trace in a few frames, then nodes, then the map delta
        n = len(trace["t"])
        step = max(1, n // 4)
        for lo in range(0, n, step):
            await _broadcast(session_id, {
                "v": API_VERSION, "type": "trace",
                "frames": {k: trace[k][lo : lo + step] for k in ("t", "mx", "my", "fz", "depth")},
            })
        await _broadcast(session_id, {"v": API_VERSION, "type": "nodes", "event": event.to_dict()})
        await _broadcast(session_id, {"v": API_VERSION, "type": "map_delta", "cells": delta})
        return {"v": API_VERSION, "event": event.to_dict(), "map_delta": delta, "trace": trace}

    @app.get("/sessions/{session_id}/map")
    def get_map(session_id: str):
        try:
            session = svc.get(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown session")
        return _map_payload(session, svc.colormap)

    @app.get("/sessions/{session_id}/reveal")
    def reveal(session_id: str):
        try:
            scene, agreement = svc.reveal(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail="unknown session")
        return {"v": API_VERSION, "scene": scene.to_dict(), "agreement": agreement}

    @app.websocket("/sessions/{session_id}/stream")
    async def stream(ws: WebSocket, session_id: str):
        try:
            svc.get(session_id)
        except KeyError:
            await ws.close(code=4404)
            return
        await ws.accept()
        with streams_lock:
            streams.setdefault(session_id, []).append(ws)
        try:
            while True:
                await ws.receive_text()  # keepalive pings; content ignored
        except WebSocketDisconnect:
            pass
        finally:
            with streams_lock:
                if ws in streams.get(session_id, []):
                    streams[session_id].remove(ws)

    return app
