import struct
import warnings
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from camsim.dataset import (HEADER, REFERENCE_SETTINGS, SceneSequence, SyntheticScene,
                            apply_defocus, decode_container, defocus_radius, disc_kernel,
                            encode_container, generate_hdr_scene, generate_synthetic_scene,
                            make_settings, parse_key_values, read_dataset, read_raw, read_sequence,
                            render_with_settings, synthetic_dataset, write_raw, write_sequence)
from camsim.errors import FormatError, ParameterError, SettingsRangeWarning
from camsim.raw import CFA_ORDERS, NoiseLevelFunction, RawImage, pack_bayer, unpack_bayer


def _blob(w=4, h=2, cfa=0, black=64, white=1023, payload=None):
    payload = payload if payload is not None else bytes(2 * w * h)
    return struct.pack("<4sHIIBBHH", b"NRS1", 1, w, h, cfa, 0, black, white) + payload


def test_header_layout_is_twenty_bytes():
    assert HEADER.size == 20


def test_encode_matches_hand_packed_bytes():
    mosaic = np.array([[1, 2], [3, 0xABCD]], dtype=np.uint16)
    blob = encode_container(mosaic, 0, 0xFFFF, "GRBG")
    assert blob == _blob(2, 2, 2, 0, 0xFFFF, bytes([1, 0, 2, 0, 3, 0, 0xCD, 0xAB]))


@given(st.integers(0, 2**31 - 1))
def test_container_roundtrip(seed):
    r = np.random.default_rng(seed)
    h, w = 2 * r.integers(1, 6, 2)
    black = int(r.integers(0, 1000))
    white = int(r.integers(black + 1, 65536))
    mosaic = r.integers(0, 65536, (h, w)).astype(np.uint16)
    cfa = CFA_ORDERS[r.integers(4)]
    out, head = decode_container(encode_container(mosaic, black, white, cfa))
    np.testing.assert_array_equal(out, mosaic)
    assert (head.width, head.height, head.cfa_order, head.black_level, head.white_level) == \
        (w, h, cfa, black, white)


@pytest.mark.parametrize("blob, offset", [
    (b"NRS2" + _blob()[4:], 0),
    (b"NR", 2),
    (_blob()[:12], 12),
    (_blob()[:4] + struct.pack("<H", 7) + _blob()[6:], 4),
    (_blob(w=3), 6),
    (_blob(w=0), 6),
    (_blob(h=5), 10),
    (_blob(cfa=9), 14),
    (_blob(black=1000, white=1000), 16),
    (_blob()[:-1], 35),
    (_blob() + b"\0", 36),
])
def test_corrupt_containers_report_offsets(blob, offset):
    with pytest.raises(FormatError) as e:
        decode_container(blob)
    assert e.value.offset == offset
    assert f"offset {offset}" in str(e.value)


def test_raw_file_roundtrip(tmp_path, rng):
    s = make_settings(Fraction(1, 250), 400, 5.6)
    raw = unpack_bayer(rng.integers(512, 16383, (8, 12)), 512, 16383, "BGGR", s)
    raw = RawImage(raw.data, raw.cfa_order, raw.black_level, raw.white_level, s,
                   {"camera_id": "cam", "scene_id": "s1", "lens": "50mm"})
    write_raw(tmp_path / "a.nrs", raw)
    back = read_raw(tmp_path / "a.nrs")
    np.testing.assert_array_equal(pack_bayer(back), pack_bayer(raw))
    assert back.settings.key() == s.key() and back.settings.nlf == s.nlf
    assert back.meta == {"camera_id": "cam", "scene_id": "s1", "lens": "50mm"}


def test_sidecar_out_of_range_warns(tmp_path):
    raw = RawImage(np.zeros((2, 2, 4)), settings=make_settings(0.01, 50, 8.0))
    write_raw(tmp_path / "a.nrs", raw)
    with pytest.warns(SettingsRangeWarning, match="ISO 50"):
        back = read_raw(tmp_path / "a.nrs")
    assert back.settings.iso == 50


def test_sidecar_bad_line_has_offset():
    with pytest.raises(FormatError) as e:
        parse_key_values("iso = 100\nnot a pair\n")
    assert e.value.offset == 10


def test_sequence_roundtrip(tmp_path):
    seq = synthetic_dataset(1, size=16, seed=3)[0]
    seq.illuminance_lux = 120.5
    write_sequence(seq, tmp_path / "s")
    back = read_sequence(tmp_path / "s")
    assert (back.scene_id, back.camera_id, back.illuminance_lux) == ("scene_0000", "synthetic", 120.5)
    assert len(back.frames) == len(seq.frames)
    for a, b in zip(seq.frames, back.frames):
        np.testing.assert_array_equal(pack_bayer(a), pack_bayer(b))
        assert a.settings.key() == b.settings.key()
    # a second round trip is bit-identical
    write_sequence(back, tmp_path / "t")
    again = read_sequence(tmp_path / "t")
    for a, b in zip(back.frames, again.frames):
        np.testing.assert_array_equal(a.data, b.data)
    assert [d.scene_id for d in read_dataset(tmp_path)] == ["scene_0000", "scene_0000"]


def test_sequence_requires_members_and_shared_shape():
    with pytest.raises(ParameterError):
        SceneSequence("x", [])
    with pytest.raises(ParameterError):
        SceneSequence("x", [RawImage(np.zeros((2, 2, 4))), RawImage(np.zeros((4, 2, 4)))])


def test_missing_manifest(tmp_path):
    with pytest.raises(FormatError):
        read_sequence(tmp_path)


def test_scene_determinism_and_validity():
    a, b = generate_synthetic_scene(4), generate_synthetic_scene(4)
    np.testing.assert_array_equal(a.radiance, b.radiance)
    np.testing.assert_array_equal(a.depth, b.depth)
    assert np.all(a.radiance >= 0) and np.all(a.depth > 0)
    assert a.radiance.shape == (64, 64, 4)


def test_complexity_zero_is_constant():
    s = generate_synthetic_scene(1, 32, complexity=0)
    assert np.ptp(s.radiance) == 0 and np.ptp(s.depth) == 0


@pytest.mark.parametrize("seed", range(5))
def test_radiance_spans_two_decades(seed):
    r = generate_synthetic_scene(seed).radiance
    assert np.log10(np.percentile(r, 99.5) / np.percentile(r, 0.5)) >= 2


def test_odd_size_rejected():
    with pytest.raises(ParameterError):
        generate_synthetic_scene(0, 33)


@pytest.mark.parametrize("r", [0.0, 0.3, 1.0, 2.5, 7.2])
def test_disc_kernel_normalized(r):
    assert disc_kernel(r).sum() == pytest.approx(1.0, abs=1e-12)


def test_halving_fnumber_doubles_radius():
    s = generate_synthetic_scene(2)
    np.testing.assert_allclose(defocus_radius(s, 4.0), 2 * defocus_radius(s, 8.0))


def test_default_scene_reaches_several_pixels_of_blur():
    radii = [defocus_radius(generate_synthetic_scene(k), 4.0).max() for k in range(5)]
    assert 4.0 <= max(radii) <= 10.0


def test_defocus_preserves_mean(rng):
    img = rng.random((32, 32, 4))
    out = apply_defocus(img, np.full((32, 32), 3.0))
    np.testing.assert_allclose(out.mean(axis=(0, 1)), img.mean(axis=(0, 1)), rtol=0.02)


def test_identity_render():
    scene = generate_synthetic_scene(3, 32)
    scene = SyntheticScene(scene.radiance, np.full(scene.depth.shape, scene.focus_distance),
                           scene.focus_distance)
    s = make_settings(REFERENCE_SETTINGS.t, 100, 8.0, NoiseLevelFunction())
    out = render_with_settings(scene, s)
    np.testing.assert_allclose(out.data, np.clip(scene.radiance, 0, 1), atol=1e-12)


def test_render_deterministic():
    scene = generate_synthetic_scene(3, 32)
    a = render_with_settings(scene, make_settings(0.01, 800, 8.0), seed=5)
    b = render_with_settings(scene, make_settings(0.01, 800, 8.0), seed=5)
    np.testing.assert_array_equal(a.data, b.data)


def test_doubling_time_doubles_means():
    scene = SyntheticScene(np.full((64, 64, 4), 0.1), np.full((64, 64), 2.0), 2.0)
    s1, s2 = make_settings(Fraction(1, 100), 200, 8.0), make_settings(Fraction(1, 50), 200, 8.0)
    m1 = np.mean([render_with_settings(scene, s1, seed=k).data.mean() for k in range(20)])
    m2 = np.mean([render_with_settings(scene, s2, seed=k + 100).data.mean() for k in range(20)])
    assert m2 / m1 == pytest.approx(2.0, rel=2e-3)


def test_hdr_scene_spans_many_decades():
    r = generate_hdr_scene(0).radiance
    assert np.log10(r.max() / r.min()) > 4.5
