import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snowlayers import data
from snowlayers.data import LayerSet, SynthParams
from snowlayers.evaluation import mask_to_layers


# ---------------------------------------------------------------- EGM1

def test_egm_round_trip(tmp_path):
    x = np.random.default_rng(0).normal(size=(16, 16))
    data.write_egm(tmp_path / "a.egm", x)
    back = data.read_egm(tmp_path / "a.egm")
    assert back.shape == (1, 1, 16, 16)
    np.testing.assert_array_equal(back[0, 0], x.astype(np.float32))


def test_egm_layout_is_bit_exact(tmp_path):
    g = np.arange(12, dtype=float).reshape(1, 2, 2, 3)  # channels=2, rows=2, cols=3
    data.write_egm(tmp_path / "b.egm", g)
    raw = (tmp_path / "b.egm").read_bytes()
    assert raw[:4] == b"EGM1"
    assert struct.unpack_from("<III", raw, 4) == (2, 3, 2)
    payload = np.frombuffer(raw, "<f4", offset=16)
    # row-major with channels innermost
    np.testing.assert_array_equal(payload, g[0].transpose(1, 2, 0).ravel())
    np.testing.assert_array_equal(data.read_egm(tmp_path / "b.egm"), g)


def test_egm_wrong_magic(tmp_path):
    (tmp_path / "c.egm").write_bytes(b"XXXX" + struct.pack("<III", 1, 1, 1) + b"\0" * 4)
    with pytest.raises(data.FormatError, match="expected 'EGM1'") as exc:
        data.read_egm(tmp_path / "c.egm")
    assert "byte 0" in str(exc.value)


def test_egm_truncated_payload(tmp_path):
    (tmp_path / "d.egm").write_bytes(b"EGM1" + struct.pack("<III", 2, 2, 1) + b"\0" * 8)
    with pytest.raises(data.FormatError, match="byte 24"):
        data.read_egm(tmp_path / "d.egm")


def test_egm_truncated_header(tmp_path):
    (tmp_path / "e.egm").write_bytes(b"EGM")
    with pytest.raises(data.FormatError, match="byte 3"):
        data.read_egm(tmp_path / "e.egm")


def test_egm_degenerate_rejected(tmp_path):
    with pytest.raises(ValueError):
        data.write_egm(tmp_path / "f.egm", np.zeros((0, 0)))
    (tmp_path / "g.egm").write_bytes(b"EGM1" + struct.pack("<III", 0, 0, 1))
    with pytest.raises(data.FormatError):
        data.read_egm(tmp_path / "g.egm")


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), rows=st.integers(1, 9), cols=st.integers(1, 9), ch=st.integers(1, 3))
def test_egm_round_trip_property(tmp_path_factory, seed, rows, cols, ch):
    x = np.random.default_rng(seed).normal(size=(1, ch, rows, cols)).astype(np.float32).astype(np.float64)
    path = tmp_path_factory.mktemp("egm") / "x.egm"
    data.write_egm(path, x)
    np.testing.assert_array_equal(data.read_egm(path), x)


# ---------------------------------------------------------------- LayerSet / CSV / manifest

def test_layerset_sorted_by_mean_row():
    ls = LayerSet([{0: 30.0, 1: 31.0}, {0: 5.0}])
    assert ls.mean_rows() == [5.0, 30.5]


def test_layers_csv_round_trip(tmp_path):
    ls = LayerSet([{0: 1.25, 2: 3.5}, {1: 10.0}])
    data.write_layers_csv(tmp_path / "l.csv", ls)
    assert (tmp_path / "l.csv").read_text().splitlines()[0] == "layer_id,column,row"
    assert data.read_layers_csv(tmp_path / "l.csv") == ls


def test_layers_csv_rejects_duplicate_column(tmp_path):
    (tmp_path / "l.csv").write_text("layer_id,column,row\n0,1,2\n0,1,3\n")
    with pytest.raises(data.FormatError, match="two rows"):
        data.read_layers_csv(tmp_path / "l.csv")


def test_layers_csv_rejects_bad_header(tmp_path):
    (tmp_path / "l.csv").write_text("a,b,c\n")
    with pytest.raises(data.FormatError, match="header"):
        data.read_layers_csv(tmp_path / "l.csv")


def test_manifest_resolves_relative_paths(tmp_path):
    sub = tmp_path / "ds"
    sub.mkdir()
    data.write_manifest(sub / "m.json", [{"image": "a.egm", "layers": "a.csv", "meta": "a.json"}])
    (entry,) = data.read_manifest(sub / "m.json")
    assert entry == {"image": str(sub / "a.egm"), "layers": str(sub / "a.csv"), "meta": str(sub / "a.json")}
    (sub / "bad.json").write_text(json.dumps([{"image": "a.egm"}]))
    with pytest.raises(data.FormatError, match="layers"):
        data.read_manifest(sub / "bad.json")


def test_meta_defaults(tmp_path):
    data.write_meta(tmp_path / "m.json")
    meta = data.read_meta(tmp_path / "m.json")
    assert meta["meters_per_row"] == 0.025 and meta["along_track_m"] == 14.5


# ---------------------------------------------------------------- rasterize

def test_rasterize_examples():
    assert not np.any(data.rasterize(LayerSet([]), 8, 8))
    two = LayerSet([{c: 10.0 for c in range(64)}, {c: 20.4 for c in range(64)}])
    assert data.rasterize(two, 32, 64).sum() == 128
    collide = LayerSet([{3: 4.4}, {3: 3.6}])
    m = data.rasterize(collide, 8, 8)
    assert m.sum() == 1 and m[4, 3] == 1


def test_rasterize_out_of_range():
    with pytest.raises(ValueError, match="outside"):
        data.rasterize(LayerSet([{0: 7.6}]), 8, 8)
    with pytest.raises(ValueError):
        data.rasterize(LayerSet([{9: 1.0}]), 8, 8)


# ---------------------------------------------------------------- augmentation

def _toy(rows=64, cols=64):
    img, layers = data.synthesize(SynthParams(seed=1, rows=rows, cols=cols))
    return img, layers


def test_augment_five_pairs_with_distinct_scale_shapes():
    img, layers = _toy()
    out = data.augment(img, layers)
    assert len(out) == 5
    shapes = [im.shape[-2:] for im, _ in out]
    assert shapes == [(64, 64), (16, 16), (32, 32), (48, 48), (64, 64)]
    for im, ls in out:
        data.rasterize(ls, *im.shape[-2:])  # every label stays on its grid


def test_augment_scale_half_row_40():
    ls = LayerSet([{c: 40.0 for c in range(64)}])
    scaled = data.scale_layers(ls, 0.5, 32, 32)
    assert set(scaled.layers[0].values()) == {20.0}
    assert scaled.meters_per_row == pytest.approx(0.05)


def test_flip_involution():
    img, layers = _toy()
    flipped = data.flip_layers(layers, 64)
    for a, b in zip(layers.layers, flipped.layers):
        assert all(b[63 - c] == r for c, r in a.items())
    assert data.flip_layers(flipped, 64) == layers
    flip_img = data.augment(img, layers)[4][0]
    np.testing.assert_array_equal(flip_img[..., ::-1], img)


def test_augment_rejects_bad_dims():
    with pytest.raises(ValueError, match="multiple of 16"):
        data.augment(np.zeros((1, 1, 32, 32)), LayerSet([]))


def test_augment_dataset_count():
    pairs = [_toy() for _ in range(3)]
    assert len(data.augment_dataset(pairs)) == 15


def test_scaled_image_samples_source_coordinates():
    img = np.arange(64 * 64, dtype=float).reshape(1, 64, 64)
    small = data._resize_bilinear(img, 32, 32, 0.5)
    np.testing.assert_array_equal(small[0], img[0, ::2, ::2])


# ---------------------------------------------------------------- synthesis

def test_synthesize_deterministic():
    a, la = data.synthesize(SynthParams(seed=42))
    b, lb = data.synthesize(SynthParams(seed=42))
    assert a.tobytes() == b.tobytes() and la == lb
    c, _ = data.synthesize(SynthParams(seed=43))
    assert a.tobytes() != c.tobytes()


def test_noiseless_bands_are_piecewise_constant():
    img, layers = data.synthesize(SynthParams(seed=5, speckle=0, blur=0, decay=0))
    img = img[0, 0]
    tops = np.floor(layers.to_rows(64) + 0.5).astype(int)
    for c in range(64):
        jumps = set(np.nonzero(np.diff(img[:, c]))[0] + 1)
        assert jumps <= set(tops[:, c])
        # each layer top starts a new band unless two adjacent bands share a level
        assert len(jumps) >= len(tops) - 1


def test_synth_layers_do_not_fit():
    with pytest.raises(ValueError, match="do not fit"):
        data.synthesize(SynthParams(rows=32, layer_count=10))


def test_synth_params_validate():
    with pytest.raises(ValueError):
        SynthParams(rows=30)
    with pytest.raises(ValueError):
        SynthParams(layer_count=0)


def test_synthetic_layers_rasterize_for_1000_seeds():
    for s in range(1000):
        _, layers = data.synthesize(SynthParams(seed=s))
        rows = layers.to_rows(64)
        assert np.all(np.diff(rows, axis=0) > 0)  # never cross
        data.rasterize(layers, 64, 64)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_mask_to_layers_recovers_rasterized_layers(seed):
    _, layers = data.synthesize(SynthParams(seed=seed))
    mask = data.rasterize(layers, 64, 64)
    recovered = mask_to_layers(mask)
    rounded = LayerSet([{c: float(np.floor(r + 0.5)) for c, r in layer.items()} for layer in layers.layers])
    assert recovered == rounded
    np.testing.assert_array_equal(data.rasterize(recovered, 64, 64), mask)


def test_synthesize_dataset_seeds_differ():
    ds = data.synthesize_dataset(3, seed=7)
    assert len({im.tobytes() for im, _ in ds}) == 3
    again = data.synthesize_dataset(3, seed=7)
    assert all(a.tobytes() == b.tobytes() for (a, _), (b, _) in zip(ds, again))
