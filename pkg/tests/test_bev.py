"""Grid mapping, feature containers, vertical reduction, history concat,
and the binary serialization (checked against independently packed bytes)."""

from __future__ import annotations

import struct

import numpy as np
import pytest

from bevtrack.bev import (
    OUT_OF_GRID,
    BevGrid,
    FeatureMap,
    TemporalBuffer,
    VoxelVolume,
    cell_to_world,
    concat_history,
    multiviewx_grid,
    read_feature_map,
    reduce_vertical,
    wildtrack_grid,
    world_to_cell,
    world_to_cell_arrays,
    write_feature_map,
)
from bevtrack.errors import OutOfGridError, ShapeMismatch


class TestGrid:
    def test_cell_center_arithmetic(self):
        grid = BevGrid(origin=(0.0, 0.0), cell_size=0.025, width=10, height=10)
        p = cell_to_world(grid, 0, 0)
        assert p.x == pytest.approx(0.0125)
        assert p.y == pytest.approx(0.0125)
        assert p.z == 0.0

    def test_wildtrack_default_covers_12_by_36(self):
        grid = wildtrack_grid()
        assert (grid.height, grid.width) == (480, 1440)
        assert grid.cell_size == 0.025
        x_min, x_max, y_min, y_max = grid.extent()
        assert (x_max - x_min, y_max - y_min) == (36.0, 12.0)

    def test_multiviewx_default_covers_16_by_25(self):
        grid = multiviewx_grid()
        assert (grid.height, grid.width) == (640, 1000)
        x_min, x_max, y_min, y_max = grid.extent()
        assert (x_max - x_min, y_max - y_min) == (25.0, 16.0)

    def test_round_trip_on_all_cells(self):
        grid = BevGrid(origin=(-1.0, 2.0), cell_size=0.5, width=7, height=5)
        for i in range(grid.height):
            for j in range(grid.width):
                assert world_to_cell(grid, cell_to_world(grid, i, j)) == (i, j)

    def test_corner_goes_to_larger_index(self):
        grid = BevGrid(origin=(0.0, 0.0), cell_size=1.0, width=4, height=4)
        assert world_to_cell(grid, (2.0, 2.0)) == (2, 2)

    def test_origin_corner_is_cell_zero(self):
        grid = BevGrid(origin=(0.0, 0.0), cell_size=1.0, width=4, height=4)
        assert world_to_cell(grid, (0.0, 0.0)) == (0, 0)

    def test_outside_is_value_not_exception(self):
        grid = BevGrid(origin=(0.0, 0.0), cell_size=1.0, width=4, height=4)
        assert world_to_cell(grid, (-0.1, 1.0)) is OUT_OF_GRID
        assert world_to_cell(grid, (4.0, 1.0)) is OUT_OF_GRID

    def test_cell_to_world_raises_outside(self):
        grid = BevGrid(origin=(0.0, 0.0), cell_size=1.0, width=4, height=4)
        with pytest.raises(OutOfGridError):
            cell_to_world(grid, 4, 0)

    def test_vectorized_matches_scalar(self):
        grid = BevGrid(origin=(-1.0, -1.0), cell_size=0.3, width=9, height=11)
        rng = np.random.default_rng(4)
        pts = rng.uniform(-2, 3, size=(100, 2))
        cells, inside = world_to_cell_arrays(grid, pts)
        for k in range(100):
            scalar = world_to_cell(grid, pts[k])
            if scalar is OUT_OF_GRID:
                assert not inside[k]
            else:
                assert inside[k]
                assert tuple(cells[k]) == scalar

    def test_invalid_grid_rejected(self):
        with pytest.raises(ValueError):
            BevGrid(origin=(0, 0), cell_size=0.0, width=4, height=4)
        with pytest.raises(ValueError):
            BevGrid(origin=(0, 0), cell_size=1.0, width=4, height=4, z_min=1.0, z_max=0.5)


class TestContainers:
    def test_feature_map_rejects_non_finite(self):
        data = np.zeros((1, 2, 2), dtype=np.float32)
        data[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            FeatureMap(data)

    def test_voxel_volume_checks_grid(self, small_grid):
        with pytest.raises(ShapeMismatch):
            VoxelVolume(np.zeros((1, 3, 40, 40), dtype=np.float32), small_grid)
        vol = VoxelVolume(np.zeros((2, 2, 40, 40), dtype=np.float32), small_grid)
        assert vol.channels == 2

    def test_feature_map_immutable(self):
        fm = FeatureMap.zeros(1, 2, 2)
        with pytest.raises(ValueError):
            fm.data[0, 0, 0] = 1.0


class TestReduceVertical:
    def test_single_bin_identity_both_modes(self):
        grid = BevGrid(origin=(0, 0), cell_size=1.0, width=3, height=2, z_bins=1)
        data = np.arange(6, dtype=np.float32).reshape(1, 1, 2, 3)
        vol = VoxelVolume(data, grid)
        for mode in ("mean", "max"):
            out = reduce_vertical(vol, mode)
            assert np.array_equal(out.data, data[:, 0])

    def test_mean_and_max_values(self):
        grid = BevGrid(origin=(0, 0), cell_size=1.0, width=1, height=1, z_bins=2)
        vol = VoxelVolume(np.array([0.0, 2.0], dtype=np.float32).reshape(1, 2, 1, 1), grid)
        assert reduce_vertical(vol, "mean").data[0, 0, 0] == 1.0
        assert reduce_vertical(vol, "max").data[0, 0, 0] == 2.0

    def test_constant_volume(self, small_grid):
        vol = VoxelVolume(np.full((3, 2, 40, 40), 0.7, dtype=np.float32), small_grid)
        for mode in ("mean", "max"):
            assert np.allclose(reduce_vertical(vol, mode).data, 0.7)

    def test_modes_agree_on_equal_layers(self, small_grid):
        rng = np.random.default_rng(2)
        layer = rng.random((2, 1, 40, 40)).astype(np.float32)
        vol = VoxelVolume(np.repeat(layer, 2, axis=1), small_grid)
        assert np.array_equal(reduce_vertical(vol, "mean").data,
                              reduce_vertical(vol, "max").data)


class TestTemporalBuffer:
    def test_first_frame_zero_history(self):
        buffer = TemporalBuffer(capacity=1, history_channels=8)
        current = FeatureMap(np.ones((8, 4, 5), dtype=np.float32))
        out = concat_history(current, buffer)
        assert out.channels == 16
        assert np.array_equal(out.data[:8], current.data)
        assert np.all(out.data[8:] == 0.0)

    def test_concat_order_current_first(self):
        buffer = TemporalBuffer(capacity=1)
        prev = FeatureMap(np.full((2, 3, 3), 5.0, dtype=np.float32))
        buffer.push(0, prev)
        current = FeatureMap(np.full((2, 3, 3), 1.0, dtype=np.float32))
        out = concat_history(current, buffer)
        assert np.all(out.data[:2] == 1.0)
        assert np.all(out.data[2:] == 5.0)

    def test_shape_mismatch(self):
        buffer = TemporalBuffer(capacity=1)
        buffer.push(0, FeatureMap.zeros(1, 4, 4))
        with pytest.raises(ShapeMismatch):
            concat_history(FeatureMap.zeros(1, 5, 4), buffer)

    def test_frame_indices_strictly_increase(self):
        buffer = TemporalBuffer(capacity=2)
        buffer.push(3, FeatureMap.zeros(1, 2, 2))
        with pytest.raises(ValueError):
            buffer.push(3, FeatureMap.zeros(1, 2, 2))

    def test_capacity_evicts_oldest(self):
        buffer = TemporalBuffer(capacity=1)
        buffer.push(0, FeatureMap(np.full((1, 2, 2), 1.0, dtype=np.float32)))
        buffer.push(1, FeatureMap(np.full((1, 2, 2), 2.0, dtype=np.float32)))
        assert len(buffer) == 1
        assert buffer.latest().data[0, 0, 0] == 2.0


class TestSerialization:
    def test_golden_bytes(self, tmp_path):
        # Independently pack the documented layout and compare raw files.
        data = np.array([[[1.5, -2.0], [0.0, 3.25]]], dtype=np.float32)
        fm = FeatureMap(data)
        path = tmp_path / "fm.bin"
        write_feature_map(fm, path)
        expected = struct.pack("<III", 1, 2, 2) + struct.pack(
            "<4f", 1.5, -2.0, 0.0, 3.25
        )
        assert path.read_bytes() == expected

    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        fm = FeatureMap(rng.normal(size=(3, 7, 5)).astype(np.float32))
        path = tmp_path / "fm.bin"
        write_feature_map(fm, path)
        back = read_feature_map(path)
        assert np.array_equal(back.data, fm.data)

    def test_truncated_file_rejected(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(struct.pack("<III", 1, 4, 4) + b"\x00" * 7)
        with pytest.raises(ShapeMismatch):
            read_feature_map(path)
