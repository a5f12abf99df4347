import math

import numpy as np
import pytest

from convbeam.atf import (
    AtfFormatError,
    AtfSet,
    Direction,
    bin_frequencies,
    fibonacci_directions,
    isotropic_covariance,
    load_atf_set,
    nearest_direction,
    write_atf_set,
)


def make_set(n_dirs=4, n_bins=3, n_ch=2, seed=0, directions=None):
    rng = np.random.default_rng(seed)
    directions = directions or fibonacci_directions(n_dirs)
    responses = rng.standard_normal((len(directions), n_bins, n_ch)) + 1j * rng.standard_normal(
        (len(directions), n_bins, n_ch)
    )
    return AtfSet(
        n_channels=n_ch,
        sample_rate=48000,
        n_bins=n_bins,
        directions=tuple(directions),
        responses=responses,
    )


# --- Direction ---------------------------------------------------------------


def test_direction_azimuth_wraps_into_range():
    assert Direction(3 * math.pi, math.pi / 2).azimuth_rad == pytest.approx(-math.pi)
    assert Direction(-3 * math.pi, math.pi / 2).azimuth_rad == pytest.approx(-math.pi)
    assert Direction(math.pi, math.pi / 2).azimuth_rad == pytest.approx(-math.pi)
    d = Direction(0.25, math.pi / 2)
    assert d.azimuth_rad == pytest.approx(0.25)


def test_direction_inclination_clamped():
    assert Direction(1.0, -0.5).inclination_rad == 0.0
    assert Direction(1.0, 4.0).inclination_rad == math.pi


def test_direction_pole_canonicalizes_azimuth():
    assert Direction(1.2, 0.0).azimuth_rad == 0.0
    assert Direction(-2.0, math.pi).azimuth_rad == 0.0


def test_direction_unit_vectors():
    np.testing.assert_allclose(Direction(0.0, math.pi / 2).unit_vector(), [1, 0, 0], atol=1e-15)
    np.testing.assert_allclose(
        Direction(math.pi / 2, math.pi / 2).unit_vector(), [0, 1, 0], atol=1e-15
    )
    np.testing.assert_allclose(Direction(0.0, 0.0).unit_vector(), [0, 0, 1], atol=1e-15)


def test_direction_rejects_non_finite():
    with pytest.raises(ValueError):
        Direction(float("nan"), 1.0)


# --- AtfSet construction ------------------------------------------------------


def test_atf_set_shape_mismatch_rejected():
    rng = np.random.default_rng(1)
    with pytest.raises(ValueError, match="shape"):
        AtfSet(
            n_channels=2,
            sample_rate=48000,
            n_bins=3,
            directions=tuple(fibonacci_directions(4)),
            responses=rng.standard_normal((4, 3, 3)),
        )


def test_atf_set_rejects_non_finite():
    r = np.ones((2, 2, 1), dtype=complex)
    r[1, 0, 0] = np.nan
    with pytest.raises(ValueError, match="finite"):
        AtfSet(
            n_channels=1,
            sample_rate=48000,
            n_bins=2,
            directions=tuple(fibonacci_directions(2)),
            responses=r,
        )


def test_bin_frequencies_span_dc_to_nyquist():
    f = bin_frequencies(513, 48000)
    assert f[0] == 0.0
    assert f[-1] == pytest.approx(24000.0)
    assert np.all(np.diff(f) > 0)


def test_fibonacci_directions_near_uniform():
    dirs = fibonacci_directions(642)
    units = np.stack([d.unit_vector() for d in dirs])
    np.testing.assert_allclose(np.linalg.norm(units, axis=1), 1.0, atol=1e-12)
    # centroid of a near-uniform point set sits near the origin
    assert np.linalg.norm(units.mean(axis=0)) < 0.01


# --- nearest_direction --------------------------------------------------------


def grid_4_azimuths():
    return [Direction(math.radians(a), math.pi / 2) for a in (0, 90, 180, 270)]


def test_nearest_direction_by_inspection():
    s = make_set(directions=grid_4_azimuths())
    assert nearest_direction(s, Direction(math.radians(10), math.pi / 2)) == 0
    assert nearest_direction(s, Direction(math.radians(100), math.pi / 2)) == 1


def test_nearest_direction_tie_breaks_low_index():
    s = make_set(directions=grid_4_azimuths())
    assert nearest_direction(s, Direction(math.radians(45), math.pi / 2)) == 0


def test_nearest_direction_identity_lookup():
    s = make_set(n_dirs=100, seed=3)
    for k in range(s.n_directions):
        assert nearest_direction(s, s.directions[k]) == k


def test_nearest_direction_matches_brute_force_scan():
    # oracle: exhaustive scan with an independently coded great-circle formula
    rng = np.random.default_rng(7)
    grid = [
        Direction(rng.uniform(-math.pi, math.pi), math.acos(rng.uniform(-1, 1)))
        for _ in range(100)
    ]
    s = make_set(directions=grid)

    def haversine(d1, d2):
        dphi = d2.azimuth_rad - d1.azimuth_rad
        t1, t2 = math.pi / 2 - d1.inclination_rad, math.pi / 2 - d2.inclination_rad
        h = math.sin((t2 - t1) / 2) ** 2 + math.cos(t1) * math.cos(t2) * math.sin(dphi / 2) ** 2
        return 2 * math.asin(min(1.0, math.sqrt(h)))

    for _ in range(500):
        q = Direction(rng.uniform(-math.pi, math.pi), math.acos(rng.uniform(-1, 1)))
        dists = [haversine(q, g) for g in grid]
        expected = int(np.argmin(dists))
        got = nearest_direction(s, q)
        # equal-distance ties are resolved by index in both implementations
        assert dists[got] == pytest.approx(dists[expected], abs=1e-12)


# --- isotropic_covariance -----------------------------------------------------


def test_covariance_single_direction_outer_product():
    d = [Direction(0.0, math.pi / 2)]
    responses = np.ones((1, 3, 2), dtype=complex)
    s = AtfSet(n_channels=2, sample_rate=48000, n_bins=3, directions=tuple(d), responses=responses)
    cov = isotropic_covariance(s)
    for b in range(3):
        np.testing.assert_allclose(cov.matrices[b], np.ones((2, 2)), atol=1e-15)


def test_covariance_single_channel_unit_magnitude():
    s = make_set(n_dirs=20, n_bins=4, n_ch=1, seed=5)
    mags = np.abs(s.responses)
    unit = AtfSet(
        n_channels=1,
        sample_rate=48000,
        n_bins=4,
        directions=s.directions,
        responses=s.responses / mags,
    )
    cov = isotropic_covariance(unit)
    np.testing.assert_allclose(cov.matrices, np.ones((4, 1, 1)), atol=1e-14)


def test_covariance_hermitian_psd():
    cov = isotropic_covariance(make_set(n_dirs=50, n_bins=8, n_ch=4, seed=11))
    m = cov.matrices
    np.testing.assert_allclose(m, np.conj(np.swapaxes(m, 1, 2)), atol=1e-14)
    eigs = np.linalg.eigvalsh(m)
    assert np.all(eigs[:, 0] >= -1e-9 * eigs[:, -1])


def test_covariance_scales_quadratically():
    s = make_set(n_dirs=30, n_bins=5, n_ch=3, seed=13)
    c = 0.7 - 1.3j
    scaled = AtfSet(
        n_channels=3,
        sample_rate=48000,
        n_bins=5,
        directions=s.directions,
        responses=c * s.responses,
    )
    r1 = isotropic_covariance(s).matrices
    r2 = isotropic_covariance(scaled).matrices
    np.testing.assert_allclose(r2, abs(c) ** 2 * r1, rtol=1e-12)


def test_covariance_free_field_matches_sinc_coherence():
    # analytic diffuse-field oracle: coherence of omni mics at spacing delta
    # is sin(2 pi f delta / c) / (2 pi f delta / c)
    from convbeam.simscene import ArrayGeometry, free_field_atf_set

    delta, c = 0.17, 343.0
    geo = ArrayGeometry(mic_positions=np.array([[delta / 2, 0, 0], [-delta / 2, 0, 0]]))
    s = free_field_atf_set(geo, n_directions=10000, n_bins=129, sample_rate=48000)
    cov = isotropic_covariance(s)
    coh = cov.matrices[:, 0, 1] / np.sqrt(
        cov.matrices[:, 0, 0].real * cov.matrices[:, 1, 1].real
    )
    x = 2 * np.pi * s.frequencies() * delta / c
    expected = np.ones_like(x)
    nz = x > 0
    expected[nz] = np.sin(x[nz]) / x[nz]
    np.testing.assert_allclose(coh.real, expected, atol=1e-2)
    np.testing.assert_allclose(coh.imag, 0.0, atol=1e-2)


# --- file format ---------------------------------------------------------------


def test_minimal_file_roundtrip_identity_content(tmp_path):
    d = [Direction(0.0, math.pi / 2)]
    s = AtfSet(
        n_channels=1,
        sample_rate=48000,
        n_bins=2,
        directions=tuple(d),
        responses=np.ones((1, 2, 1), dtype=complex),
    )
    path = tmp_path / "minimal.atf"
    write_atf_set(path, s)
    loaded = load_atf_set(path)
    assert loaded.n_channels == 1 and loaded.n_bins == 2 and loaded.n_directions == 1
    np.testing.assert_array_equal(loaded.responses, np.ones((1, 2, 1)))


def test_roundtrip_bit_exact_for_float32_payloads(tmp_path):
    rng = np.random.default_rng(17)
    for trial in range(5):
        n_dirs, n_bins, n_ch = rng.integers(1, 6), rng.integers(1, 9), rng.integers(1, 4)
        re = rng.standard_normal((n_dirs, n_bins, n_ch)).astype(np.float32)
        im = rng.standard_normal((n_dirs, n_bins, n_ch)).astype(np.float32)
        responses = re.astype(np.float64) + 1j * im.astype(np.float64)
        s = AtfSet(
            n_channels=int(n_ch),
            sample_rate=48000,
            n_bins=int(n_bins),
            directions=tuple(fibonacci_directions(int(n_dirs))),
            responses=responses,
        )
        path = tmp_path / f"rt{trial}.atf"
        write_atf_set(path, s)
        loaded = load_atf_set(path)
        np.testing.assert_array_equal(loaded.responses, s.responses)
        assert loaded.directions == s.directions


def test_load_rejects_direction_count_mismatch(tmp_path):
    s = make_set(n_dirs=3, n_bins=2, n_ch=1)
    path = tmp_path / "bad.atf"
    write_atf_set(path, s)
    blob = path.read_bytes()
    sep = blob.index(b"\x00")
    header = blob[:sep].decode().replace('"n_directions": 3', '"n_directions": 4')
    path.write_bytes(header.encode() + blob[sep:])
    with pytest.raises(AtfFormatError, match="n_directions"):
        load_atf_set(path)


def test_load_rejects_truncated_payload(tmp_path):
    s = make_set(n_dirs=2, n_bins=2, n_ch=2)
    path = tmp_path / "short.atf"
    write_atf_set(path, s)
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(AtfFormatError, match="responses"):
        load_atf_set(path)


def test_load_rejects_missing_header_field(tmp_path):
    path = tmp_path / "nohdr.atf"
    path.write_bytes(b'{"n_channels": 1}\x00')
    with pytest.raises(AtfFormatError, match="sample_rate"):
        load_atf_set(path)


def test_load_rejects_non_finite_payload(tmp_path):
    s = make_set(n_dirs=1, n_bins=1, n_ch=1)
    path = tmp_path / "nan.atf"
    write_atf_set(path, s)
    blob = bytearray(path.read_bytes())
    blob[-8:-4] = np.array([np.nan], dtype="<f4").tobytes()
    path.write_bytes(bytes(blob))
    with pytest.raises(AtfFormatError, match="finite"):
        load_atf_set(path)


def test_load_rejects_missing_separator(tmp_path):
    path = tmp_path / "nosep.atf"
    path.write_bytes(b'{"n_channels": 1}')
    with pytest.raises(AtfFormatError, match="separator"):
        load_atf_set(path)
