import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ivbench.codec import CodedAtlas, RatePoint, decode, encode, spectral_report
from ivbench.container import pack_atlases
from ivbench.errors import ConfigError, ParseError
from ivbench.scenegen import SceneKind, SceneSpec, generate


@pytest.fixture(scope="module")
def committed_atlas(plane_dataset):
    views = plane_dataset.views
    cams = plane_dataset.cameras
    atlases, _ = pack_atlases(views, cams, 1)
    return atlases[0].image


@pytest.fixture(scope="module")
def noisy_atlas():
    spec = SceneSpec(seed=31, kind=SceneKind.NOISE_AUGMENTED, splat_count=6000,
                     rig="linear_4", baseline_m=0.1, resolution=(128, 72),
                     noise_sigma=0.05)
    ds = generate(spec)
    atlases, _ = pack_atlases(ds.views, ds.cameras, 1)
    return atlases[0].image


def test_rate_point_mapping():
    assert RatePoint.RP0.qscale is None
    scales = [RatePoint(i).qscale for i in range(1, 5)]
    assert scales == sorted(scales)
    assert len(set(scales)) == 4
    assert RatePoint.parse("rp3") is RatePoint.RP3
    assert RatePoint.parse(2) is RatePoint.RP2
    with pytest.raises(ConfigError):
        RatePoint.parse(9)


def test_rp0_bit_exact_random():
    rng = np.random.default_rng(0)
    img = rng.integers(0, 256, (40, 56, 3), dtype=np.uint8)
    coded = encode(img, RatePoint.RP0)
    assert np.array_equal(decode(coded), img)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 5), st.integers(1, 5))
def test_rp0_bit_exact_property(seed, wb, hb):
    rng = np.random.default_rng(seed)
    img = rng.integers(0, 256, (8 * hb, 8 * wb, 3), dtype=np.uint8)
    assert np.array_equal(decode(encode(img, 0)), img)


def test_payload_sizes_strictly_decrease(committed_atlas):
    sizes = [len(encode(committed_atlas, rp).payload) for rp in range(1, 5)]
    assert all(a > b for a, b in zip(sizes, sizes[1:]))


def test_rp0_rp1_ratio_on_default_scene(committed_atlas):
    s0 = len(encode(committed_atlas, 0).payload)
    s1 = len(encode(committed_atlas, 1).payload)
    assert s0 / s1 >= 5.0


def test_all_zero_1080p_rp4_payload_small():
    img = np.zeros((1080, 1920, 3), dtype=np.uint8)
    coded = encode(img, RatePoint.RP4)
    assert coded.size_bytes < 4096
    assert np.array_equal(decode(coded), img)


def test_constant_image_dc_bound():
    # constant block -> only the DC coefficient survives; its quantization
    # error is <= qscale/2 in coefficient units, i.e. qscale/16 per pixel per
    # YCbCr channel; RGB conversion amplifies by < (1 + 1.772), still well
    # under the coefficient half-step. +1 covers the final integer rounding.
    for value in (0, 77, 128, 201, 255):
        img = np.full((32, 32, 3), value, dtype=np.uint8)
        for rp in range(1, 5):
            q = RatePoint(rp).qscale
            out = decode(encode(img, rp))
            bound = (1 + 1.772) * q / 16.0 + 1.0
            assert np.abs(out.astype(int) - int(value)).max() <= min(bound, q / 2.0 + 1.0)


def test_decode_deterministic(committed_atlas):
    coded = encode(committed_atlas, 2)
    a = decode(coded)
    b = decode(CodedAtlas.from_payload(coded.payload, 2))
    assert np.array_equal(a, b)


def test_encode_rejects_bad_dims():
    rng = np.random.default_rng(1)
    with pytest.raises(ConfigError):
        encode(rng.integers(0, 256, (30, 64, 3), dtype=np.uint8), 1)
    with pytest.raises(ConfigError):
        encode(rng.integers(0, 256, (32, 64, 3)).astype(np.float64), 1)


def test_spectral_identity():
    rng = np.random.default_rng(2)
    img = rng.integers(0, 256, (64, 64, 3), dtype=np.uint8)
    assert spectral_report(img, img) == 1.0


def test_spectral_dim_mismatch():
    a = np.zeros((16, 16, 3), dtype=np.uint8)
    b = np.zeros((16, 24, 3), dtype=np.uint8)
    with pytest.raises(ValueError):
        spectral_report(a, b)


def test_spectral_lowpass_on_noisy_content(noisy_atlas):
    ratios = [spectral_report(noisy_atlas, decode(encode(noisy_atlas, rp)))
              for rp in range(1, 5)]
    assert all(r <= 1.0 for r in ratios)
    assert all(a >= b for a, b in zip(ratios, ratios[1:]))  # non-increasing in qscale
    assert ratios[-1] < 1.0  # RP4 strictly removes high-frequency energy


def test_spectral_lowpass_on_micro_texture():
    # smooth base + noise at the micro-texture amplitude the codec targets
    rng = np.random.default_rng(3)
    x = np.linspace(0, 6, 96)
    y = np.linspace(0, 5, 96)
    base = 128 + 60 * np.sin(x)[None, :, None] * np.cos(y)[:, None, None] * np.ones((1, 1, 3))
    img = np.clip(base + rng.uniform(-13, 13, (96, 96, 3)), 0, 255).astype(np.uint8)
    ratios = [spectral_report(img, decode(encode(img, rp))) for rp in range(1, 5)]
    assert all(r <= 1.0 for r in ratios)
    assert all(a >= b for a, b in zip(ratios, ratios[1:]))


def test_corrupt_payload_reports_block_position(committed_atlas):
    coded = encode(committed_atlas, 2)
    # force an undecodable region in the middle of the coded data
    buf = bytearray(coded.payload)
    start = len(buf) // 2
    for i in range(start, min(start + 64, len(buf))):
        buf[i] = 0xFF
    with pytest.raises(ParseError, match=r"(block \(|code table|section)"):
        decode(CodedAtlas.from_payload(bytes(buf), 2))


@settings(max_examples=120, deadline=None)
@given(st.data())
def test_fuzzed_decode_never_crashes(data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2**31 - 1)))
    img = rng.integers(0, 256, (16, 16, 3), dtype=np.uint8)
    rp = data.draw(st.integers(0, 4))
    payload = bytearray(encode(img, rp).payload)
    mode = data.draw(st.sampled_from(["mutate", "truncate", "random"]))
    if mode == "mutate":
        for _ in range(data.draw(st.integers(1, 10))):
            payload[data.draw(st.integers(0, len(payload) - 1))] = data.draw(st.integers(0, 255))
        buf = bytes(payload)
    elif mode == "truncate":
        buf = bytes(payload[:data.draw(st.integers(0, len(payload)))])
    else:
        buf = bytes(data.draw(st.binary(max_size=400)))
    try:
        out = decode(CodedAtlas.from_payload(buf, rp))
        assert out.dtype == np.uint8
    except ParseError:
        pass


def test_from_payload_parses_dims(committed_atlas):
    coded = encode(committed_atlas, 3)
    parsed = CodedAtlas.from_payload(coded.payload, 3)
    assert (parsed.width, parsed.height) == (coded.width, coded.height)
    with pytest.raises(ParseError):
        CodedAtlas.from_payload(b"\x07xxxxxxxx", 0)
