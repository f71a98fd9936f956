import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from coinbow.core import ValidationError, rotate_points
from coinbow.tiling import (
    OUTSIDE,
    TiledFeatureVector,
    TilingScheme,
    encode,
    l1_normalize,
    load_feature,
    raw_histogram,
    region_circular,
    region_indices,
    region_logpolar,
    region_rectangular,
    save_feature,
)

SCHEMES = [
    TilingScheme.global_(),
    TilingScheme.rectangular(),
    TilingScheme.logpolar(3, 4),
    TilingScheme.circular(3),
]


# Oracles that test each point against every region's interval explicitly.

def oracle_logpolar(x, y, w, h, r, theta):
    cx, cy = (w - 1) / 2, (h - 1) / 2
    R = min(w, h) / 2
    dist = math.sqrt((x - cx) ** 2 + (y - cy) ** 2)
    phi = math.atan2(y - cy, x - cx) % (2 * math.pi) if dist > 0 else 0.0
    lower = [0.0] + [R * 2.0 ** (i - r) for i in range(1, r)]
    upper = [R * 2.0 ** (i - r) for i in range(1, r + 1)]
    hits = []
    for ri in range(r):
        for ai in range(theta):
            a0, a1 = 2 * math.pi * ai / theta, 2 * math.pi * (ai + 1) / theta
            if lower[ri] <= dist < upper[ri] and a0 <= phi < a1:
                hits.append(ri * theta + ai)
    assert len(hits) <= 1
    return hits[0] if hits else OUTSIDE


def oracle_circular(x, y, w, h, r):
    cx, cy = (w - 1) / 2, (h - 1) / 2
    R = min(w, h) / 2
    dist = math.sqrt((x - cx) ** 2 + (y - cy) ** 2)
    for i in range(r):
        if R * i / r <= dist < R * (i + 1) / r:
            return i
    return OUTSIDE


def oracle_encode(points, w, h, M, scheme):
    table = np.zeros((scheme.n_regions, M))
    for x, y, word in points:
        if scheme.kind == "global":
            reg = 0
        elif scheme.kind == "rectangular":
            reg = region_rectangular(x, y, w, h)
        elif scheme.kind == "logpolar":
            reg = region_logpolar(x, y, w, h, scheme.rings, scheme.orientations)
        else:
            reg = region_circular(x, y, w, h, scheme.rings)
        if reg != OUTSIDE:
            table[reg, int(word)] += 1
    flat = table.reshape(-1)
    return flat / flat.sum() if flat.sum() else flat


def random_points(rng, n, w, h, M):
    return np.column_stack([rng.uniform(0, w, n), rng.uniform(0, h, n), rng.integers(0, M, n)])


def test_vector_lengths_for_m10():
    assert [s.vector_length(10) for s in SCHEMES] == [10, 40, 120, 30]
    pts = [(5.0, 5.0, 3)]
    assert [len(encode(pts, 20, 20, 10, s)) for s in SCHEMES] == [10, 40, 120, 30]


def test_rectangular_examples():
    assert region_rectangular(0, 0, 100, 100) == 0
    assert region_rectangular(50, 50, 100, 100) == 3
    assert region_rectangular(99, 0, 100, 100) == 1
    assert region_rectangular(0, 99, 100, 100) == 2
    with pytest.raises(ValidationError):
        region_rectangular(100, 0, 100, 100)


def test_logpolar_examples():
    w = h = 101
    assert region_logpolar(50, 50, w, h) == 0
    R = 50.5
    x = 50 + 0.9 * R * math.cos(3 * math.pi / 4)
    y = 50 + 0.9 * R * math.sin(3 * math.pi / 4)
    assert region_logpolar(x, y, w, h) == 9
    assert region_logpolar(0, 0, w, h) == OUTSIDE
    with pytest.raises(ValidationError):
        region_logpolar(-1, 3, w, h)


def test_circular_examples():
    w = h = 101
    assert region_circular(50, 50, w, h) == 0
    # center 50, R = 50.5: distance exactly R is outside
    assert region_circular(100.5, 50, w, h) == OUTSIDE
    assert region_circular(100.49, 50, w, h) == 2
    assert region_circular(50 + 25.25, 50, w, h) == 1


@pytest.mark.parametrize("w,h,r,theta", [(100, 100, 3, 4), (128, 96, 2, 6), (77, 131, 4, 3), (64, 64, 1, 1)])
def test_region_functions_match_interval_oracles(w, h, r, theta):
    rng = np.random.default_rng(w * h + r)
    pts = np.column_stack([rng.uniform(0, w, 1000), rng.uniform(0, h, 1000)])
    lp = TilingScheme.logpolar(r, theta)
    ci = TilingScheme.circular(r)
    vec_lp = region_indices(pts, w, h, lp)
    vec_ci = region_indices(pts, w, h, ci)
    for k, (x, y) in enumerate(pts):
        want_lp = oracle_logpolar(x, y, w, h, r, theta)
        want_ci = oracle_circular(x, y, w, h, r)
        assert region_logpolar(x, y, w, h, r, theta) == want_lp == vec_lp[k]
        assert region_circular(x, y, w, h, r) == want_ci == vec_ci[k]


def test_rectangular_vectorized_matches_scalar():
    rng = np.random.default_rng(1)
    pts = np.column_stack([rng.integers(0, 33, 500), rng.integers(0, 20, 500)]).astype(float)
    vec = region_indices(pts, 33, 20, TilingScheme.rectangular())
    assert vec.tolist() == [region_rectangular(x, y, 33, 20) for x, y in pts]


def test_single_center_assignment():
    v = encode([(10.0, 10.0, 2)], 21, 21, 5, TilingScheme.circular(3))
    assert len(v) == 15
    expected = np.zeros(15)
    expected[2] = 1.0
    assert np.array_equal(v.values, expected)


@pytest.mark.parametrize("scheme", SCHEMES + [TilingScheme.logpolar(2, 8), TilingScheme.circular(5)], ids=str)
def test_encode_matches_loop_oracle(scheme):
    rng = np.random.default_rng(500)
    w, h, M = 90, 70, 12
    pts = random_points(rng, 500, w, h, M)
    got = encode(pts, w, h, M, scheme).values
    assert np.allclose(got, oracle_encode(pts, w, h, M, scheme), rtol=0, atol=1e-15)


def test_mass_conservation():
    rng = np.random.default_rng(2)
    w, h, M = 60, 40, 7
    pts = random_points(rng, 300, w, h, M)
    for s in SCHEMES:
        raw = raw_histogram(pts[:, :2], pts[:, 2].astype(int), w, h, M, s)
        dropped = int(np.sum(region_indices(pts[:, :2], w, h, s) == OUTSIDE))
        assert raw.sum() == 300 - dropped
        if s.kind in ("global", "rectangular"):
            assert dropped == 0


def test_normalization():
    v = np.array([1.0, 3.0, 0.0])
    once = l1_normalize(v)
    assert once.sum() == pytest.approx(1.0)
    assert np.array_equal(l1_normalize(once), once)
    assert not l1_normalize(np.zeros(4)).any()
    # every point in a corner: circular vector stays all-zero
    assert not encode([(0.0, 0.0, 1)], 50, 50, 3, TilingScheme.circular()).values.any()


def test_encode_errors():
    with pytest.raises(ValidationError):
        encode([(1.0, 1.0, 5)], 10, 10, 5, TilingScheme.global_())
    with pytest.raises(ValidationError):
        encode([(10.0, 1.0, 0)], 10, 10, 5, TilingScheme.global_())
    with pytest.raises(ValidationError):
        encode([(1.0, 1.0, 0.5)], 10, 10, 5, TilingScheme.global_())


def test_scheme_parsing_and_validation():
    assert TilingScheme.parse("logpolar:2:6") == TilingScheme.logpolar(2, 6)
    assert TilingScheme.parse("Circular") == TilingScheme.circular(3)
    assert TilingScheme.parse("rect").kind == "rectangular"
    with pytest.raises(ValidationError):
        TilingScheme.parse("hexagonal")
    with pytest.raises(ValidationError):
        TilingScheme.parse("global:2")
    with pytest.raises(ValidationError):
        TilingScheme.logpolar(0, 4)


def test_feature_json_roundtrip(tmp_path):
    v = encode([(3.0, 4.0, 1), (9.0, 9.0, 0)], 12, 12, 4, TilingScheme.logpolar(3, 4))
    doc = v.to_json()
    assert {k: doc[k] for k in ("format_version", "scheme", "M", "r", "theta")} == {
        "format_version": 1, "scheme": "logpolar", "M": 4, "r": 3, "theta": 4,
    }
    save_feature(v, tmp_path / "a.feat.json")
    back = load_feature(tmp_path / "a.feat.json")
    assert np.array_equal(back.values, v.values) and back.scheme == v.scheme
    with pytest.raises(ValidationError):
        TiledFeatureVector(np.zeros(5), TilingScheme.circular(3), 4)


# Rotation behaviour at the assignment level.

def quarter_turn(xy, size):
    """Exact +pi/2 turn about the center of a size x size image (+x toward +y)."""
    return np.column_stack([size - 1 - xy[:, 1], xy[:, 0]])


def test_quarter_turn_helper_agrees_with_rotate_points():
    xy = np.array([[3.0, 5.0], [0.0, 0.0], [7.0, 2.0]])
    assert np.allclose(quarter_turn(xy, 8), rotate_points(xy, math.pi / 2, (3.5, 3.5)), atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(
    seed=st.integers(0, 2**32 - 1),
    angle=st.floats(-10.0, 10.0, allow_nan=False),
    size=st.sampled_from([(64, 64), (100, 80), (75, 121)]),
    rings=st.integers(1, 5),
)
def test_circular_vector_is_rotation_invariant(seed, angle, size, rings):
    w, h = size
    rng = np.random.default_rng(seed)
    R = min(w, h) / 2
    n, M = 40, 6
    # keep points a hair away from ring edges, where last-bit rounding of the
    # rotated distance could legitimately flip the ring
    frac = rng.uniform(0, 1, n) * (1 - 1e-3) * (R - 0.5) / R
    edges = np.arange(1, rings + 1) / rings
    assume(np.min(np.abs(frac[:, None] - edges[None, :])) > 1e-9)
    phi = rng.uniform(0, 2 * np.pi, n)
    c = ((w - 1) / 2, (h - 1) / 2)
    xy = np.column_stack([c[0] + frac * R * np.cos(phi), c[1] + frac * R * np.sin(phi)])
    words = rng.integers(0, M, n)
    scheme = TilingScheme.circular(rings)
    before = encode(np.column_stack([xy, words]), w, h, M, scheme).values
    turned = rotate_points(xy, angle, c)
    after = encode(np.column_stack([turned, words]), w, h, M, scheme).values
    assert np.array_equal(before, after)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), size=st.sampled_from([16, 64, 256]))
def test_rectangular_quarter_turn_permutes_blocks(seed, size):
    rng = np.random.default_rng(seed)
    M = 5
    xy = rng.integers(0, size, (60, 2)).astype(float)
    words = rng.integers(0, M, 60)
    s = TilingScheme.rectangular()
    before = encode(np.column_stack([xy, words]), size, size, M, s).values.reshape(4, M)
    after = encode(np.column_stack([quarter_turn(xy, size), words]), size, size, M, s).values.reshape(4, M)
    for src, dst in ((0, 1), (1, 3), (3, 2), (2, 0)):
        assert np.array_equal(after[dst], before[src])


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), theta=st.sampled_from([2, 3, 4, 6, 8]), rings=st.integers(1, 4))
def test_logpolar_rotation_shifts_angular_blocks(seed, theta, rings):
    rng = np.random.default_rng(seed)
    w = h = 90
    c = (44.5, 44.5)
    M = 4
    # sample in polar form away from sector edges so float rotation cannot flip a bin
    n = 50
    R = 45.0
    sector = 2 * np.pi / theta
    phi = (rng.integers(0, theta, n) + rng.uniform(0.01, 0.99, n)) * sector
    dist = rng.uniform(0.0, R - 0.5, n)  # stays inside the frame at every angle
    edges = R * 2.0 ** (np.arange(1, rings + 1) - rings)
    dist = np.where(np.min(np.abs(dist[:, None] - edges[None, :]), axis=1) < 1e-6, dist * 0.5, dist)
    xy = np.column_stack([c[0] + dist * np.cos(phi), c[1] + dist * np.sin(phi)])
    words = rng.integers(0, M, n)
    s = TilingScheme.logpolar(rings, theta)
    before = encode(np.column_stack([xy, words]), w, h, M, s).values.reshape(rings, theta, M)
    after = encode(np.column_stack([rotate_points(xy, sector, c), words]), w, h, M, s).values.reshape(rings, theta, M)
    assert np.array_equal(after, np.roll(before, 1, axis=1))
