import itertools
import json

import numpy as np
import pytest
from PIL import Image

from dipme.mapping import (
    ColorMap,
    DipEvent,
    GridSpec,
    SubsurfaceMap,
    composite,
    default_colormap,
    export_map,
    map_rgba,
    record_dip,
)
from dipme.simulate import OperatorProfile, default_media_library, simulate_dip, simulate_layered_dip


def one_hot(c):
    p = np.zeros(6)
    p[c] = 1.0
    return p


def event_at(x, nodes):
    return DipEvent(surface_x=x, depth_span=(0.0, max(d for d, _ in nodes)), nodes=nodes, timestamp=0.0)


GRID = GridSpec.from_bounds(0.0, 0.4, 0.0, 0.2, cell=0.01)


class TestColorMap:
    def test_default_distinct(self):
        cm = default_colormap()
        assert len({tuple(c) for c in cm.colors.round(6)}) == 6

    def test_duplicate_colors_rejected(self):
        with pytest.raises(ValueError):
            ColorMap(names=("a", "b", "c", "d", "e", "f"), colors=np.tile([0.5, 0.5, 0.5], (6, 1)))


class TestComposite:
    def test_single_one_hot_node_pure_color_alpha_one(self):
        ev = event_at(0.105, [(0.055, one_hot(2))])
        m = composite([ev], GRID, radius=0.05)
        # cell containing the node
        j = int((0.105 - GRID.x0) / GRID.dx)
        i = int((0.055 - GRID.d0) / GRID.dd)
        np.testing.assert_allclose(m.mixtures[i, j], one_hot(2))
        assert m.confidence[i, j] == 1.0
        np.testing.assert_allclose(m.colors()[i, j], m.colormap.colors[2])

    def test_equidistant_nodes_blend_equally(self):
        a = event_at(0.10, [(0.10, one_hot(1))])
        b = event_at(0.30, [(0.10, one_hot(4))])
        m = composite([a, b], GRID, radius=0.5)
        j = int((0.20 - GRID.x0) / GRID.dx)  # midpoint column
        i = int((0.10 - GRID.d0) / GRID.dd)
        np.testing.assert_allclose(m.mixtures[i, j], (one_hot(1) + one_hot(4)) / 2, atol=1e-9)
        expected = (m.colormap.colors[1] + m.colormap.colors[4]) / 2
        np.testing.assert_allclose(m.colors()[i, j], expected, atol=1e-9)

    def test_bounded_support(self):
        base = [event_at(0.05, [(0.05, one_hot(0))])]
        radius = 0.04
        m0 = composite(base, GRID, radius=radius)
        far = event_at(0.35, [(0.05, one_hot(3))])
        m1 = composite(base + [far], GRID, radius=radius)
        xs, ds = GRID.centers()
        for i in range(GRID.nd):
            for j in range(GRID.nx):
                if np.hypot(xs[j] - 0.35, ds[i] - 0.05) > radius:
                    np.testing.assert_array_equal(m1.mixtures[i, j], m0.mixtures[i, j])
                    assert m1.confidence[i, j] == m0.confidence[i, j]

    def test_order_independence_exact(self):
        rng = np.random.default_rng(0)
        events = []
        for x in (0.05, 0.15, 0.25, 0.35):
            nodes = []
            for k in range(5):
                p = rng.dirichlet(np.ones(6))
                nodes.append(((k + 1) * 0.03, p))
            events.append(event_at(x, nodes))
        ref = composite(events, GRID, radius=0.08)
        for perm in itertools.permutations(events):
            m = composite(list(perm), GRID, radius=0.08)
            np.testing.assert_array_equal(m.mixtures, ref.mixtures)
            np.testing.assert_array_equal(m.confidence, ref.confidence)

    def test_mixtures_are_probability_vectors_where_confident(self):
        rng = np.random.default_rng(1)
        events = [
            event_at(x, [((k + 1) * 0.03, rng.dirichlet(np.ones(6))) for k in range(5)])
            for x in (0.1, 0.2, 0.3)
        ]
        m = composite(events, GRID)
        mask = m.confidence > 0
        sums = m.mixtures[mask].sum(axis=1)
        np.testing.assert_allclose(sums, 1.0, atol=1e-9)
        assert np.all(m.mixtures[mask] >= 0)

    def test_confidence_mass_grows_with_repeat_dips(self):
        ev1 = [event_at(0.2, [(0.05, one_hot(0)), (0.1, one_hot(0))])]
        ev2 = ev1 + [event_at(0.2, [(0.051, one_hot(0)), (0.099, one_hot(0))])]
        m1 = composite(ev1, GRID, radius=0.06)
        m2 = composite(ev2, GRID, radius=0.06)
        j = int(0.2 / GRID.dx)
        assert m2.confidence[:, j].sum() >= m1.confidence[:, j].sum()

    def test_empty_events_rejected(self):
        with pytest.raises(ValueError):
            composite([], GRID)


class TestExport:
    def make_map(self):
        ev = [event_at(0.1, [(0.05, one_hot(1)), (0.10, one_hot(4))])]
        return composite(ev, GRID, radius=0.05)

    def test_json_round_trip_bit_exact(self, tmp_path):
        m = self.make_map()
        p = export_map(m, tmp_path / "m.json", format="json")
        loaded = SubsurfaceMap.from_dict(json.load(open(p)))
        np.testing.assert_array_equal(loaded.mixtures, m.mixtures)
        np.testing.assert_array_equal(loaded.confidence, m.confidence)
        assert loaded.grid == m.grid

    def test_json_schema_keys(self, tmp_path):
        m = self.make_map()
        d = json.load(open(export_map(m, tmp_path / "m.json", format="json")))
        assert set(d) == {"grid", "cells", "colormap"}
        assert set(d["grid"]) == {"x0", "d0", "dx", "dd", "nx", "nd"}
        assert len(d["cells"]) == m.grid.nx * m.grid.nd
        mix, conf = d["cells"][0]
        assert len(mix) == 6 and isinstance(conf, float)

    def test_png_dimensions(self, tmp_path):
        m = self.make_map()
        p = export_map(m, tmp_path / "m.png", format="png", pixel_scale=3)
        img = Image.open(p)
        assert img.size == (m.grid.nx * 3, m.grid.nd * 3)
        assert img.mode == "RGBA"

    def test_empty_map_fully_transparent(self, tmp_path):
        m = SubsurfaceMap(
            grid=GRID,
            mixtures=np.zeros((GRID.nd, GRID.nx, 6)),
            confidence=np.zeros((GRID.nd, GRID.nx)),
            colormap=default_colormap(),
        )
        rgba = map_rgba(m)
        assert np.all(rgba[:, :, 3] == 0)

    def test_rgba_quantization_rule(self):
        m = self.make_map()
        rgba = map_rgba(m)
        colors = np.clip(m.colors(), 0, 1)
        expected = np.floor(colors * 255.0 + 0.5)
        mask = m.confidence > 0
        np.testing.assert_array_equal(rgba[:, :, :3][mask], expected[mask])


class TestRecordDip:
    def test_five_nodes_cover_depth_range(self, recognizer):
        rec = simulate_dip(default_media_library()[1], OperatorProfile(), seed=77)
        ev = record_dip(rec, 0.1, recognizer)
        assert len(ev.nodes) == 5
        depths = [d for d, _ in ev.nodes]
        assert ev.depth_span[0] == 0.0
        assert depths == sorted(depths)
        # nodes sit at span centers of the full penetration range
        d_max = ev.depth_span[1]
        np.testing.assert_allclose(depths, [(i + 0.5) * d_max / 5 for i in range(5)], rtol=1e-9)

    def test_shallow_dip_fewer_nodes_with_warning(self, recognizer):
        rec = simulate_dip(default_media_library()[1], OperatorProfile(), seed=78, depth_m=0.04)
        with pytest.warns(UserWarning, match="shallow"):
            ev = record_dip(rec, 0.1, recognizer)
        assert 1 <= len(ev.nodes) < 5

    def test_single_medium_monte_carlo(self, recognizer):
        lib = default_media_library()
        op = OperatorProfile()
        ok = 0
        n_seeds = 50
        for seed in range(n_seeds):
            m = lib[seed % 6]
            rec = simulate_dip(m, op, seed=1000 + seed)
            ev = record_dip(rec, 0.1, recognizer)
            ok += int(all(int(np.argmax(p)) == m.class_id for _, p in ev.nodes))
        assert ok >= 0.9 * n_seeds

    def test_two_layer_monte_carlo(self, recognizer):
        lib = default_media_library()
        op = OperatorProfile()
        ok = 0
        n_seeds = 50
        for seed in range(n_seeds):
            rec = simulate_layered_dip(
                [(0.0, 0.07, lib[1]), (0.07, 0.14, lib[5])], op, seed=2000 + seed
            )
            ev = record_dip(rec, 0.1, recognizer)
            top = int(np.argmax(ev.nodes[0][1]))
            bottom = int(np.argmax(ev.nodes[-1][1]))
            ok += int(top == 1 and bottom == 5 and top != bottom)
        assert ok >= 0.8 * n_seeds
