"""Subsurface cross-section maps from classified dips.

Each dip contributes five depth nodes (classifier probability vectors);
cells of an (x, depth) grid blend nearby nodes by inverse-distance
weighting and render as probability-mixed class colors with confidence as
straight alpha.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from .mce import Recognizer
from .preprocess import FilterSpec, preprocess_recording
from .simulate import MEDIA_CLASSES, RawRecording

N_CLASSES = 6

#: Distance floor and full-confidence reference, in cell units.
DIST_FLOOR_CELLS = 0.25
CONFIDENCE_REF_CELLS = 1.5


@dataclass(frozen=True)
class ColorMap:
    names: tuple
    colors: np.ndarray  # (6, 3) floats in [0, 1]

    def __post_init__(self):
        if len(self.names) != N_CLASSES or self.colors.shape != (N_CLASSES, 3):
            raise ValueError("colormap needs 6 named colors")
        if len({tuple(c) for c in np.round(self.colors, 6)}) != N_CLASSES:
            raise ValueError("colors must be pairwise distinct")

    def to_dict(self):
        return {"names": list(self.names), "colors": self.colors.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(names=tuple(d["names"]), colors=np.asarray(d["colors"], dtype=float))


def default_colormap() -> ColorMap:
    return ColorMap(
        names=MEDIA_CLASSES,
        colors=np.array(
            [
                [0.35, 0.23, 0.12],  # NuSoil: dark brown
                [0.92, 0.78, 0.25],  # Millet: yellow
                [0.62, 0.62, 0.64],  # Cement: gray
                [0.87, 0.72, 0.46],  # Sand: tan
                [0.33, 0.62, 0.28],  # Mung: green
                [0.74, 0.38, 0.30],  # SimuSoil: red-brown
            ]
        ),
    )


@dataclass(frozen=True)
class GridSpec:
    """Cross-section raster: x columns by depth rows, cell size in meters."""

    x0: float
    d0: float
    dx: float
    dd: float
    nx: int
    nd: int

    @classmethod
    def from_bounds(cls, x0, x1, d0, d1, cell=0.01):
        nx = max(1, int(np.ceil((x1 - x0) / cell - 1e-9)))
        nd = max(1, int(np.ceil((d1 - d0) / cell - 1e-9)))
        return cls(x0=x0, d0=d0, dx=cell, dd=cell, nx=nx, nd=nd)

    def centers(self):
        xs = self.x0 + (np.arange(self.nx) + 0.5) * self.dx
        ds = self.d0 + (np.arange(self.nd) + 0.5) * self.dd
        return xs, ds

    def to_dict(self):
        return {"x0": self.x0, "d0": self.d0, "dx": self.dx, "dd": self.dd, "nx": self.nx, "nd": self.nd}

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class DipEvent:
    """One classified dip: five (depth, probability) nodes at a surface x."""

    surface_x: float
    depth_span: tuple
    nodes: list  # [(depth_m, probs ndarray (6,)), ...]
    timestamp: float = 0.0

    def __post_init__(self):
        depths = [d for d, _ in self.nodes]
        if sorted(depths) != depths or len(set(depths)) != len(depths):
            raise ValueError("node depths must be strictly increasing")
        for _, p in self.nodes:
            if abs(float(np.sum(p)) - 1.0) > 1e-6 or np.any(np.asarray(p) < 0):
                raise ValueError("node probabilities must form a probability vector")

    def to_dict(self):
        return {
            "surface_x": self.surface_x,
            "depth_span": list(self.depth_span),
            "nodes": [{"depth": float(d), "probs": np.asarray(p).tolist()} for d, p in self.nodes],
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            surface_x=d["surface_x"],
            depth_span=tuple(d["depth_span"]),
            nodes=[(n["depth"], np.asarray(n["probs"], dtype=float)) for n in d["nodes"]],
            timestamp=d.get("timestamp", 0.0),
        )


@dataclass
class SubsurfaceMap:
    grid: GridSpec
    mixtures: np.ndarray  # (nd, nx, 6)
    confidence: np.ndarray  # (nd, nx)
    colormap: ColorMap

    def colors(self) -> np.ndarray:
        """Display colors (nd, nx, 3): probability-weighted class colors."""
        return self.mixtures @ self.colormap.colors

    def to_dict(self):
        cells = [
            [self.mixtures[i, j].tolist(), float(self.confidence[i, j])]
            for i in range(self.grid.nd)
            for j in range(self.grid.nx)
        ]
        return {"grid": self.grid.to_dict(), "cells": cells, "colormap": self.colormap.to_dict()}

    @classmethod
    def from_dict(cls, d):
        grid = GridSpec.from_dict(d["grid"])
        mixtures = np.zeros((grid.nd, grid.nx, N_CLASSES))
        confidence = np.zeros((grid.nd, grid.nx))
        for idx, (mix, conf) in enumerate(d["cells"]):
            i, j = divmod(idx, grid.nx)
            mixtures[i, j] = mix
            confidence[i, j] = conf
        return cls(grid=grid, mixtures=mixtures, confidence=confidence, colormap=ColorMap.from_dict(d["colormap"]))


def _reflect_indices(start: int, stop: int, n: int) -> np.ndarray:
    """Indices start..stop-1 mirrored into [0, n) (boundary reflection)."""
    idx = np.arange(start, stop)
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.abs(idx) % period
    return np.where(idx >= n, period - idx, idx)


def record_dip(
    recording: RawRecording,
    surface_x: float,
    recognizer: Recognizer,
    n_nodes: int = 5,
    filter_spec: FilterSpec = FilterSpec(),
    nominal_speed: float = 0.05,
    timestamp: float | None = None,
) -> DipEvent:
    """Classify one dip at five depth nodes.

    The preprocessed depth range splits into equal spans; the window
    centered in each span (reflection-padded at the series boundaries)
    feeds the recognizer. Shallow dips yield fewer nodes, minimum one.
    """
    series = preprocess_recording(recording, filter_spec, nominal_speed, target_len=None)
    ch = series.channels()
    n = ch.shape[1]
    wl = recognizer.window_len
    n_eff = min(n_nodes, max(1, n // max(1, wl // 4)))
    if n_eff < n_nodes:
        warnings.warn(f"dip too shallow for {n_nodes} nodes; using {n_eff}")
    d_max = float(series.depth[-1])
    nodes = []
    for i in range(n_eff):
        center = int(round((i + 0.5) * n / n_eff))
        start = center - wl // 2
        if n >= wl:
            # shift the window inside the series; no padding needed
            start = min(max(start, 0), n - wl)
            window = ch[:, start : start + wl]
        else:
            # series shorter than one window: reflect at the boundaries
            idx = _reflect_indices(start, start + wl, n)
            window = ch[:, idx]
        pred = recognizer.predict_window(window)
        nodes.append(((i + 0.5) * d_max / n_eff, pred.probs))
    return DipEvent(
        surface_x=float(surface_x),
        depth_span=(0.0, d_max),
        nodes=nodes,
        timestamp=time.time() if timestamp is None else timestamp,
    )


def _auto_radius(events, grid: GridSpec) -> float:
    xs = sorted({float(e.surface_x) for e in events})
    if len(xs) >= 2:
        spacing = float(np.median(np.diff(xs)))
    else:
        spacing = grid.nx * grid.dx / 8.0
    return 1.5 * spacing


def composite(
    events: list[DipEvent],
    grid: GridSpec,
    colormap: ColorMap | None = None,
    radius: float | None = None,
    power: float = 2.0,
) -> SubsurfaceMap:
    """Inverse-distance blend of node probability vectors onto the grid.

    Cell confidence is the inverse-distance mass normalized so a node
    within CONFIDENCE_REF_CELLS cell-sizes saturates it, capped at 1.
    Nodes are accumulated in a canonical order, so the result is exactly
    independent of event order.
    """
    if len(events) == 0:
        raise ValueError("composite needs at least one dip event")
    colormap = colormap or default_colormap()
    radius = _auto_radius(events, grid) if radius is None else float(radius)

    node_x, node_d, node_p = [], [], []
    for e in events:
        for d, p in e.nodes:
            node_x.append(float(e.surface_x))
            node_d.append(float(d))
            node_p.append(np.asarray(p, dtype=float))
    node_x = np.asarray(node_x)
    node_d = np.asarray(node_d)
    node_p = np.asarray(node_p)
    order = np.lexsort((*(node_p[:, c] for c in reversed(range(N_CLASSES))), node_d, node_x))
    node_x, node_d, node_p = node_x[order], node_d[order], node_p[order]

    xs, ds = grid.centers()
    dist2 = (xs[None, :, None] - node_x) ** 2 + (ds[:, None, None] - node_d) ** 2  # (nd, nx, n)
    cell = min(grid.dx, grid.dd)
    dist = np.sqrt(dist2)
    w = np.where(dist <= radius, 1.0 / np.maximum(dist, DIST_FLOOR_CELLS * cell) ** power, 0.0)
    mass = w.sum(axis=2)
    mix = np.divide(
        w @ node_p, mass[:, :, None], out=np.zeros((grid.nd, grid.nx, N_CLASSES)), where=mass[:, :, None] > 0
    )
    confidence = np.minimum(1.0, mass * (CONFIDENCE_REF_CELLS * cell) ** power)
    return SubsurfaceMap(grid=grid, mixtures=mix, confidence=confidence, colormap=colormap)


def map_rgba(m: SubsurfaceMap, pixel_scale: int = 1) -> np.ndarray:
    """uint8 RGBA raster; straight (non-premultiplied) alpha from confidence.

    Quantization is floor(x*255 + 0.5) so independent renderers can match
    byte-for-byte.
    """
    colors = np.clip(m.colors(), 0.0, 1.0)
    alpha = np.clip(m.confidence, 0.0, 1.0)
    transparent = m.confidence <= 0
    colors = np.where(transparent[:, :, None], 0.0, colors)
    rgba = np.concatenate([colors, alpha[:, :, None]], axis=2)
    out = np.floor(rgba * 255.0 + 0.5).astype(np.uint8)
    if pixel_scale > 1:
        out = np.kron(out, np.ones((pixel_scale, pixel_scale, 1), dtype=np.uint8))
    return out


def export_map(m: SubsurfaceMap, path, format: str = "png", pixel_scale: int = 4):
    """Write the map as a PNG raster or its JSON cell mixtures. Returns path."""
    path = str(path)
    if format == "png":
        Image.fromarray(map_rgba(m, pixel_scale), "RGBA").save(path)
    elif format == "json":
        with open(path, "w") as f:
            json.dump(m.to_dict(), f)
    else:
        raise ValueError(f"unknown export format {format!r}")
    return path
