import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from spinecurve.errors import DomainError, EmptyScanError, FormatError, StructureError
from spinecurve.mask_io import (CANONICAL_COLS, CANONICAL_ROWS, CHANNEL_NAMES, ScanGrid, SoftMask, load_scan,
                                load_softmask, normalize_height, save_scan, save_softmask, trim_empty_rows)
from spinecurve.synth import SynthSpec, generate_softmask


def test_csv_readback(tmp_path):
    p = tmp_path / "g.csv"
    p.write_text("0,1\n2,3\n4,5")
    g = load_scan(p)
    assert (g.rows, g.cols) == (3, 2)
    assert g.values.ravel().tolist() == [0, 1, 2, 3, 4, 5]


def test_p2_zero_grid(tmp_path):
    p = tmp_path / "z.pgm"
    p.write_text("P2 2 2 255 0 0 0 0")
    g = load_scan(p)
    assert g.values.shape == (2, 2) and not g.values.any()


def test_pgm_comments_and_16bit(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P2\n# made by hand\n3 1\n65535\n0 1000 65535\n")
    assert load_scan(p).values.tolist() == [[0, 1000, 65535]]
    grid = ScanGrid(np.array([[0, 300], [65535, 7]]))
    save_scan(grid, tmp_path / "w.pgm", binary=True)
    assert np.array_equal(load_scan(tmp_path / "w.pgm").values, grid.values)


@pytest.mark.parametrize("fmt", ["pgm", "csv", "smask"])
def test_roundtrip_411x128(tmp_path, fmt):
    rng = np.random.default_rng(3)
    values = rng.integers(0, 256, (411, 128)).astype(np.float64) if fmt == "pgm" else rng.random((411, 128)) * 900
    path = tmp_path / f"scan.{fmt}"
    save_scan(ScanGrid(values), path)
    assert np.array_equal(load_scan(path).values, values)


@pytest.mark.parametrize("binary", [True, False])
def test_pgm_roundtrip_modes(tmp_path, binary):
    values = np.arange(12.0).reshape(3, 4)
    save_scan(ScanGrid(values), tmp_path / "a.pgm", binary=binary)
    assert np.array_equal(load_scan(tmp_path / "a.pgm").values, values)


def test_pgm_errors_carry_byte_offset(tmp_path):
    p = tmp_path / "bad.pgm"
    p.write_bytes(b"P2 2 x 255 0 0 0 0")
    with pytest.raises(FormatError, match=r"at byte 5"):
        load_scan(p)
    p.write_bytes(b"P7 2 2 255")
    with pytest.raises(FormatError):
        load_scan(p)


def test_pgm_dimension_mismatch_is_structural(tmp_path):
    p = tmp_path / "short.pgm"
    p.write_bytes(b"P2 2 2 255 0 0 0")
    with pytest.raises(StructureError):
        load_scan(p)


def test_csv_ragged_rows_rejected(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("1,2\n3\n")
    with pytest.raises((StructureError, FormatError)):
        load_scan(p)


def test_softmask_zero_channels(tmp_path):
    mask = SoftMask(np.zeros((6, 4, 4)))
    save_softmask(mask, tmp_path / "m.smask")
    back = load_softmask(tmp_path / "m.smask")
    assert back.channels.shape == (6, 4, 4) and not back.channels.any()


def test_five_channels_rejected(tmp_path):
    from spinecurve.mask_io import _smask_bytes

    (tmp_path / "five.smask").write_bytes(_smask_bytes(CHANNEL_NAMES[:5], np.zeros((5, 4, 4), np.float32), "<f4"))
    with pytest.raises(StructureError, match="expected 6 channels"):
        load_softmask(tmp_path / "five.smask")


def test_out_of_range_rejected():
    channels = np.zeros((6, 3, 3))
    channels[1, 1, 1] = 1.01
    with pytest.raises(DomainError):
        SoftMask(channels)
    channels[1, 1, 1] = 1 + 5e-7
    SoftMask(channels)


def test_channel_order_is_restored(tmp_path):
    from spinecurve.mask_io import _smask_bytes

    data = np.stack([np.full((2, 2), i / 10, np.float32) for i in range(6)])
    names = list(reversed(CHANNEL_NAMES))
    (tmp_path / "rev.smask").write_bytes(_smask_bytes(names, data, "<f4"))
    mask = load_softmask(tmp_path / "rev.smask")
    assert mask.channel("left_leg")[0, 0] == np.float32(0.0)
    assert mask.channel("head")[0, 0] == np.float32(0.5)


def test_synthetic_mask_roundtrips_bit_exactly(tmp_path):
    mask, _ = generate_softmask(SynthSpec("arc", {"radius": 400}, noise_sigma=0.2, seed=1))
    save_softmask(mask, tmp_path / "s.smask")
    back = load_softmask(tmp_path / "s.smask")
    assert back.channels.dtype == mask.channels.dtype
    assert back.channels.tobytes() == mask.channels.tobytes()


def test_truncated_smask(tmp_path):
    mask = SoftMask(np.zeros((6, 4, 4), np.float32))
    save_softmask(mask, tmp_path / "t.smask")
    data = (tmp_path / "t.smask").read_bytes()
    (tmp_path / "t.smask").write_bytes(data[:-3])
    with pytest.raises(StructureError):
        load_softmask(tmp_path / "t.smask")


def test_trim_example():
    values = np.zeros((10, 3))
    values[3:8] = 1.0
    grid, offsets = trim_empty_rows(ScanGrid(values))
    assert grid.rows == 5 and offsets == (3, 2)
    same, offsets = trim_empty_rows(ScanGrid(np.ones((4, 4))))
    assert same.rows == 4 and offsets == (0, 0)
    with pytest.raises(EmptyScanError):
        trim_empty_rows(ScanGrid(np.zeros((3, 3))))


@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 6)),
              elements=st.sampled_from([0.0, 0.0, 1.0, 2.5])))
def test_trim_is_idempotent(values):
    grid = ScanGrid(values)
    if not values.any():
        return
    once, _ = trim_empty_rows(grid)
    twice, offsets = trim_empty_rows(once)
    assert offsets == (0, 0)
    assert np.array_equal(once.values, twice.values)


def test_normalize_208x64_doubles():
    grid = ScanGrid(np.random.default_rng(0).random((208, 64)))
    out, frame = normalize_height(grid)
    assert frame.scale_factor == 2.0
    assert (frame.crop_left, frame.crop_right) == (0, 0)
    assert out.values.shape == (CANONICAL_ROWS, CANONICAL_COLS)


def test_normalize_identity():
    values = np.random.default_rng(1).random((416, 128))
    out, frame = normalize_height(ScanGrid(values))
    assert frame.scale_factor == 1.0
    assert np.array_equal(out.values, values)


def test_normalize_411_inverse_map():
    out, frame = normalize_height(ScanGrid(np.ones((411, 128))), trim_offsets=(4, 1))
    assert out.values.shape == (416, 128)
    assert frame.scale_factor == 416 / 411
    rng = np.random.default_rng(5)
    rows = rng.uniform(4, 4 + 410, 500)
    cols = rng.uniform(1, 126, 500)
    r2, c2 = frame.to_source(*np.rint(frame.to_canonical(rows, cols)))
    assert np.max(np.abs(r2 - rows)) <= 0.51
    assert np.max(np.abs(c2 - cols)) <= 0.51


@given(st.integers(2, 500), st.integers(2, 300))
def test_normalize_output_dims(rows, cols):
    out, frame = normalize_height(ScanGrid(np.ones((rows, cols))))
    assert out.values.shape == (416, 128)
    row, col = frame.to_canonical(0.0, 0.0)
    r0, c0 = frame.to_source(row, col)
    assert abs(r0) < 1e-9 and abs(c0) < 1e-9


def test_normalize_preserves_constant_interior():
    out, _ = normalize_height(ScanGrid(np.full((300, 100), 7.0)))
    interior = out.values[:, 10:-10]
    assert np.allclose(interior, 7.0)


def test_normalize_rejects_degenerate():
    with pytest.raises(StructureError):
        normalize_height(ScanGrid(np.ones((1, 5))))
