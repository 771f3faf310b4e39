import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ivbench.container import (Manifest, camera_from_dict, camera_to_dict,
                               demux, mux, pack_atlases, unpack_atlases)
from ivbench.errors import ConfigError, ParseError

from conftest import make_camera


def make_views(rng, n, w=64, h=48):
    views = [rng.integers(0, 256, (h, w, 3), dtype=np.uint8) for _ in range(n)]
    cams = [make_camera(cam_id=f"v{i:02d}", width=w, height=h,
                        position=(0.0, 0.1 * i, 0.0)) for i in range(n)]
    return views, cams


def test_pack_four_views_grid_placements():
    rng = np.random.default_rng(0)
    views, cams = make_views(rng, 4, w=960, h=540)
    atlases, manifest = pack_atlases(views, cams, 1)
    assert len(atlases) == 1
    a = atlases[0]
    assert (a.width, a.height) == (1920, 1080)
    spots = [(p.x, p.y) for p in a.placements]
    assert spots == [(0, 0), (960, 0), (0, 540), (960, 540)]
    for v, p in zip(views, a.placements):
        assert np.array_equal(a.image[p.y:p.y + p.h, p.x:p.x + p.w], v)


def test_pack_three_views_zero_cell():
    rng = np.random.default_rng(1)
    views, cams = make_views(rng, 3)
    atlases, _ = pack_atlases(views, cams, 1)
    a = atlases[0]
    assert len(a.placements) == 3
    assert np.all(a.image[48:, 64:] == 0)


def test_pack_eight_views_two_atlases():
    rng = np.random.default_rng(2)
    views, cams = make_views(rng, 8)
    atlases, manifest = pack_atlases(views, cams, 2)
    assert len(atlases) == 2
    assert all(len(a.placements) == 4 for a in atlases)


def test_pack_errors():
    rng = np.random.default_rng(3)
    views, cams = make_views(rng, 5)
    with pytest.raises(ConfigError):
        pack_atlases(views, cams, 1)  # too many views
    mixed, mcams = make_views(rng, 2)
    mixed[1] = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
    with pytest.raises(ConfigError):
        pack_atlases(mixed, mcams, 1)
    with pytest.raises(ConfigError):
        pack_atlases([], [], 1)


def test_unpack_inverts_pack():
    rng = np.random.default_rng(4)
    for n, count in ((1, 1), (3, 1), (4, 1), (5, 2), (8, 2)):
        views, cams = make_views(rng, n)
        atlases, manifest = pack_atlases(views, cams, count)
        got_views, got_cams = unpack_atlases([a.image for a in atlases], manifest)
        assert len(got_views) == n  # zero cells never emitted
        for a, b in zip(views, got_views):
            assert np.array_equal(a, b)
        assert [c.id for c in got_cams] == [c.id for c in cams]


def test_unpack_unknown_view_id():
    rng = np.random.default_rng(5)
    views, cams = make_views(rng, 2)
    atlases, manifest = pack_atlases(views, cams, 1)
    manifest.atlases[0]["placements"][0]["view_id"] = "ghost"
    with pytest.raises(ParseError):
        unpack_atlases([a.image for a in atlases], manifest)


def test_out_of_bounds_placement():
    rng = np.random.default_rng(6)
    views, cams = make_views(rng, 2)
    atlases, manifest = pack_atlases(views, cams, 1)
    manifest.atlases[0]["placements"][0]["x"] = 1000
    with pytest.raises(ParseError):
        unpack_atlases([a.image for a in atlases], manifest)


def test_mux_demux_round_trip():
    rng = np.random.default_rng(7)
    views, cams = make_views(rng, 8)
    atlases, manifest = pack_atlases(views, cams, 2, rate_point=3)
    payloads = [bytes(rng.integers(0, 256, int(rng.integers(10, 5000)), dtype=np.uint8))
                for _ in atlases]
    stream = mux(manifest, payloads)
    m2, p2 = demux(stream)
    assert p2 == payloads
    assert m2.to_json_bytes() == manifest.to_json_bytes()
    assert m2.rate_point == 3
    # exact size accounting
    mbytes = manifest.to_json_bytes()
    expected = 4 + 1 + 1 + 4 + len(mbytes) + 2 + sum(4 + len(p) for p in payloads)
    assert len(stream) == expected


def test_mux_rejects_empty_and_mismatched():
    rng = np.random.default_rng(8)
    views, cams = make_views(rng, 2)
    _, manifest = pack_atlases(views, cams, 1)
    with pytest.raises(ConfigError):
        mux(manifest, [])
    with pytest.raises(ConfigError):
        mux(manifest, [b"a", b"b"])


def test_demux_error_positions():
    rng = np.random.default_rng(9)
    views, cams = make_views(rng, 2)
    _, manifest = pack_atlases(views, cams, 1)
    stream = mux(manifest, [b"x" * 100])
    with pytest.raises(ParseError, match="magic"):
        demux(b"XXXX" + stream[4:])
    with pytest.raises(ParseError, match="truncated"):
        demux(stream[:-20])
    with pytest.raises(ParseError, match="byte"):
        demux(stream[:7])
    with pytest.raises(ParseError, match="trailing"):
        demux(stream + b"zz")


def test_camera_dict_round_trip():
    cam = make_camera(cam_id="x", position=(0.125, -2.5, 3.0),
                      yaw=12.25, pitch=-3.5, roll=0.0625)
    back = camera_from_dict(json.loads(json.dumps(camera_to_dict(cam))))
    assert back == cam


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(1, 6), st.data())
def test_property_pack_mux_round_trip(n_payloads_seed, size_seed, data):
    rng = np.random.default_rng(n_payloads_seed * 100 + size_seed)
    n = data.draw(st.integers(1, 8))
    count = 1 if n <= 4 else 2
    w = 8 * data.draw(st.integers(1, 6))
    h = 8 * data.draw(st.integers(1, 6))
    views, cams = make_views(rng, n, w=w, h=h)
    atlases, manifest = pack_atlases(views, cams, count)
    got, _ = unpack_atlases([a.image for a in atlases], manifest)
    assert all(np.array_equal(a, b) for a, b in zip(views, got))
    payloads = [bytes(data.draw(st.binary(min_size=1, max_size=200)))
                for _ in atlases]
    stream = mux(manifest, payloads)
    m2, p2 = demux(stream)
    assert p2 == payloads
    assert m2.to_json_bytes() == manifest.to_json_bytes()


@settings(max_examples=120, deadline=None)
@given(st.data())
def test_fuzzed_demux_never_crashes(data):
    rng = np.random.default_rng(data.draw(st.integers(0, 2**32 - 1)))
    views, cams = make_views(rng, 2, w=16, h=16)
    _, manifest = pack_atlases(views, cams, 1)
    stream = bytearray(mux(manifest, [b"payload-bytes" * 3]))
    mode = data.draw(st.sampled_from(["mutate", "truncate", "random"]))
    if mode == "mutate":
        for _ in range(data.draw(st.integers(1, 8))):
            stream[data.draw(st.integers(0, len(stream) - 1))] = data.draw(st.integers(0, 255))
        buf = bytes(stream)
    elif mode == "truncate":
        buf = bytes(stream[:data.draw(st.integers(0, len(stream)))])
    else:
        buf = bytes(data.draw(st.binary(max_size=300)))
    try:
        demux(buf)
    except ParseError:
        pass  # the only acceptable failure
