import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from protoseg.errors import (
    ManifestError,
    TensorDataError,
    TensorFormatError,
    TensorTruncationError,
)
from protoseg.tensorio import (
    load_attention_stack,
    load_manifest,
    read_tensor,
    write_tensor,
)

from conftest import write_caption_assets, write_manifest, write_stack


def test_header_decode(tmp_path):
    payload = np.arange(6, dtype="<f4")
    raw = b"FDT1" + bytes([0, 2]) + struct.pack("<2I", 2, 3) + payload.tobytes()
    p = tmp_path / "t.fdt"
    p.write_bytes(raw)
    out = read_tensor(p)
    assert out.shape == (2, 3)
    np.testing.assert_array_equal(out, payload.reshape(2, 3))


def test_bad_magic(tmp_path):
    p = tmp_path / "t.fdt"
    p.write_bytes(b"NOPE" + bytes(20))
    with pytest.raises(TensorFormatError):
        read_tensor(p)


def test_truncated_payload(tmp_path):
    payload = np.arange(5, dtype="<f4")  # dims say 6
    raw = b"FDT1" + bytes([0, 2]) + struct.pack("<2I", 2, 3) + payload.tobytes()
    p = tmp_path / "t.fdt"
    p.write_bytes(raw)
    with pytest.raises(TensorTruncationError):
        read_tensor(p)


def test_overlong_payload(tmp_path):
    payload = np.arange(7, dtype="<f4")
    raw = b"FDT1" + bytes([0, 2]) + struct.pack("<2I", 2, 3) + payload.tobytes()
    p = tmp_path / "t.fdt"
    p.write_bytes(raw)
    with pytest.raises(TensorTruncationError):
        read_tensor(p)


def test_nan_rejected(tmp_path):
    payload = np.array([1.0, np.nan], dtype="<f4")
    raw = b"FDT1" + bytes([0, 1]) + struct.pack("<1I", 2) + payload.tobytes()
    p = tmp_path / "t.fdt"
    p.write_bytes(raw)
    with pytest.raises(TensorDataError):
        read_tensor(p)


def test_write_rejects_scalar_and_nan(tmp_path):
    with pytest.raises(ValueError):
        write_tensor(np.float32(1.0), tmp_path / "s.fdt")
    with pytest.raises(ValueError):
        write_tensor(np.array([np.inf], dtype=np.float32), tmp_path / "i.fdt")


def test_single_element_file_size(tmp_path):
    # header = 4 magic + 1 dtype + 1 ndim + 4 dims = 10 bytes, + 4 payload
    p = tmp_path / "one.fdt"
    write_tensor(np.array([2.5], dtype=np.float32), p)
    assert p.stat().st_size == 14
    assert read_tensor(p)[0] == np.float32(2.5)


def test_roundtrip_grid_bits(tmp_path, rng):
    grid = rng.normal(size=(37, 37, 8)).astype(np.float32)
    p = tmp_path / "g.fdt"
    write_tensor(grid, p)
    out = read_tensor(p)
    assert out.dtype == np.float32
    assert out.tobytes() == grid.tobytes()


def test_roundtrip_uint8(tmp_path, rng):
    m = rng.integers(0, 256, size=(5, 7), dtype=np.uint8)
    p = tmp_path / "m.fdt"
    write_tensor(m, p)
    out = read_tensor(p)
    assert out.dtype == np.uint8
    np.testing.assert_array_equal(out, m)


@settings(max_examples=200, deadline=None)
@given(hnp.arrays(
    dtype=np.float32,
    shape=hnp.array_shapes(min_dims=1, max_dims=4, min_side=1, max_side=6),
    elements=st.floats(-1e6, 1e6, width=32, allow_nan=False,
                       allow_infinity=False)))
def test_roundtrip_property(tmp_path_factory, arr):
    p = tmp_path_factory.mktemp("fdt") / "a.fdt"
    write_tensor(arr, p)
    out = read_tensor(p)
    assert out.shape == arr.shape
    assert out.tobytes() == arr.tobytes()


def test_row_major_layout(tmp_path):
    arr = np.array([[1.0, 2.0], [3.0, 4.0]], dtype=np.float32)
    p = tmp_path / "rm.fdt"
    write_tensor(arr, p)
    raw = p.read_bytes()
    vals = np.frombuffer(raw[14:], dtype="<f4")
    np.testing.assert_array_equal(vals, [1.0, 2.0, 3.0, 4.0])


# ---------------------------------------------------------------------------
# manifests


def _one_record(base, rng, caption_id="cap0", tokens=(0,)):
    maps = {(0, 0, 0, t): rng.random((4, 4)) for t in range(2)}
    return write_caption_assets(
        base, caption_id,
        nouns=[("dog", list(tokens))],
        maps=maps, n_tokens=2, image_hw=(16, 16),
        feature_grid=rng.normal(size=(4, 4, 8)),
        caption_embed=rng.normal(size=8),
        template_embeds={"dog": rng.normal(size=(3, 8))})


def test_empty_manifest(tmp_path):
    path = write_manifest(tmp_path, [])
    assert load_manifest(path) == []


def test_manifest_resolves_paths(tmp_path, rng):
    recs = [_one_record(tmp_path, rng, f"c{i}") for i in range(5)]
    path = write_manifest(tmp_path, recs)
    loaded = load_manifest(path)
    assert len(loaded) == 5
    for rec in loaded:
        assert rec.feature_grid.is_absolute()
        assert rec.feature_grid.exists()
        assert rec.nouns[0].noun == "dog"


def test_manifest_token_out_of_bounds(tmp_path, rng):
    rec = _one_record(tmp_path, rng, tokens=(5,))
    path = write_manifest(tmp_path, [rec])
    with pytest.raises(ManifestError, match="token indices"):
        load_manifest(path)


def test_manifest_missing_file(tmp_path, rng):
    rec = _one_record(tmp_path, rng)
    (tmp_path / rec["feature_grid"]).unlink()
    path = write_manifest(tmp_path, [rec])
    with pytest.raises(ManifestError, match="cap0"):
        load_manifest(path)


def test_stack_loads_and_validates(tmp_path, rng):
    maps = {(t, l, h, tok): rng.random((4 + 2 * l, 4 + 2 * l))
            for t in range(2) for l in range(2) for h in range(2)
            for tok in range(2)}
    rel = write_stack(tmp_path, "s", (32, 32), maps, n_tokens=2)
    stack = load_attention_stack(tmp_path / rel)
    assert (stack.n_steps, stack.n_layers, stack.n_heads) == (2, 2, 2)
    assert stack.image_hw == (32, 32)
    assert len(stack.maps_for_token(1)) == 8


def test_stack_incomplete_coverage(tmp_path, rng):
    maps = {(t, 0, 0, 0): rng.random((4, 4)) for t in range(2)}
    maps[(0, 1, 0, 0)] = rng.random((6, 6))  # layer 1 exists only at t=0
    rel = write_stack(tmp_path, "bad", (16, 16), maps, n_tokens=1)
    with pytest.raises(TensorDataError, match="triples"):
        load_attention_stack(tmp_path / rel)


def test_stack_negative_values_rejected(tmp_path):
    maps = {(0, 0, 0, 0): np.array([[0.5, -0.1], [0.2, 0.3]])}
    rel = write_stack(tmp_path, "neg", (8, 8), maps, n_tokens=1)
    with pytest.raises(TensorDataError, match="negative"):
        load_attention_stack(tmp_path / rel)


def test_sidecar_shape_mismatch(tmp_path, rng):
    rel = write_stack(tmp_path, "shp", (8, 8),
                      {(0, 0, 0, 0): rng.random((4, 4))}, n_tokens=1)
    sidecar = tmp_path / rel
    meta = json.loads(sidecar.read_text())
    meta["entries"][0]["rows"] = 5
    sidecar.write_text(json.dumps(meta))
    with pytest.raises(ManifestError, match="sidecar says"):
        load_attention_stack(sidecar)
