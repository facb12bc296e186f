import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wimesh.array_model import (
    ArrayGeometry,
    Direction,
    PathSignature,
    RadioConfig,
    rx_phase_matrix,
    tx_factors,
)
from wimesh.music import (
    AoaImage,
    Layout,
    MusicOptions,
    SearchConfig,
    SearchGrid,
    SubspaceDecomposition,
    accumulate_aoa_image,
    build_covariance,
    decompose,
    estimate_frame,
    estimate_num_sources,
    find_peaks,
    local_maxima,
    pseudospectrum,
)
from wimesh.sanitizer import sanitize_trace
from wimesh.simulator import ImpairmentSpec, Paths, synthesize_csi

SMALL = RadioConfig(num_tx=2, num_rx=3, num_subcarriers=4)


def random_csi(rng, t, cfg=SMALL):
    shape = (t, cfg.num_tx, cfg.num_rx, cfg.num_subcarriers)
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def simulate_paths(sigs, cfg, packets=33, imp=None, geo=None):
    paths = Paths.from_signatures(sigs)
    tr = synthesize_csi(paths, cfg, packets, imp or ImpairmentSpec(seed=0), geo)
    return sanitize_trace(tr.csi, cfg.subcarrier_spacing_hz)[0]


# -- covariance ------------------------------------------------------------


def test_identical_packets_rank_one():
    x = random_csi(np.random.default_rng(0), 1)
    cov = build_covariance(np.repeat(x, 6, axis=0), SMALL, forward_backward=False)
    v = x.reshape(-1)
    np.testing.assert_allclose(cov.r, np.outer(v, v.conj()), atol=1e-12)
    w = np.linalg.eigvalsh(cov.r)
    assert np.sum(w > 1e-9 * w.max()) == 1
    assert np.trace(cov.r).real == pytest.approx(np.vdot(v, v).real)


def test_orthogonal_packets_rank_two():
    d = 24
    x = np.zeros(d, complex)
    y = np.zeros(d, complex)
    x[:12] = np.exp(1j * np.arange(12))
    y[12:] = 2j
    y *= np.linalg.norm(x) / np.linalg.norm(y)
    csi = np.stack([x, y]).reshape(2, 2, 3, 4)
    w = np.sort(np.linalg.eigvalsh(build_covariance(csi, SMALL, forward_backward=False).r))[::-1]
    half = np.vdot(x, x).real / 2
    np.testing.assert_allclose(w[:2], [half, half], rtol=1e-12)
    assert np.all(np.abs(w[2:]) < 1e-9)


def test_common_phase_does_not_change_covariance(radio, geometry):
    sigs = [(PathSignature(Direction(50, 80), 10.0, 20e-9), 1.0), (PathSignature(Direction(120, 95), -30, 35e-9), 0.5)]
    paths = Paths.from_signatures(sigs)
    on = synthesize_csi(paths, radio, 20, ImpairmentSpec(0.0, True, None, seed=1), geometry)
    off = synthesize_csi(paths, radio, 20, ImpairmentSpec(0.0, False, None, seed=1), geometry)
    opts = MusicOptions()
    r_on = build_covariance(on, radio, opts.forward_backward, opts.stride, opts.smoothing, opts.tx_smoothing).r
    r_off = build_covariance(off, radio, opts.forward_backward, opts.stride, opts.smoothing, opts.tx_smoothing).r
    np.testing.assert_allclose(r_on, r_off, atol=1e-9)


@given(st.integers(0, 10_000), st.integers(1, 12), st.booleans(), st.integers(1, 2), st.integers(1, 2))
def test_covariance_and_eigen_invariants(seed, t, fb, smoothing, tx_smoothing):
    csi = random_csi(np.random.default_rng(seed), t) * 10 ** np.random.default_rng(seed).uniform(-3, 3)
    cov = build_covariance(csi, SMALL, fb, 1, smoothing, tx_smoothing)
    tr = np.trace(cov.r).real
    assert np.max(np.abs(cov.r - cov.r.conj().T)) < 1e-9 * max(tr, 1)
    dec = decompose(cov)
    assert np.all(np.diff(dec.eigenvalues) <= 1e-12 * tr)
    assert dec.eigenvalues[-1] >= -1e-9 * tr
    assert dec.eigenvalues.sum() == pytest.approx(tr, rel=1e-6)
    en = dec.noise_basis
    assert np.max(np.abs(en.conj().T @ en - np.eye(en.shape[1]))) < 1e-8


def test_empty_window_rejected():
    with pytest.raises(ValueError):
        build_covariance(np.zeros((0, 2, 3, 4), complex), SMALL)


# -- source count ----------------------------------------------------------


@pytest.mark.parametrize("ratio", [0.05, 1e-3])
def test_source_count_example(ratio):
    assert estimate_num_sources([10, 9, 0.01, 0.01], ratio=ratio) == 2


def test_source_count_all_equal_clamps():
    assert estimate_num_sources(np.ones(7)) == 6
    assert estimate_num_sources(np.ones(7), ratio=0.05) == 6


def test_source_count_noiseless_single_path(radio, geometry):
    csi = simulate_paths([(PathSignature(Direction(80, 70), 15.0, 25e-9), 1.0)], radio, geo=geometry)
    opts = MusicOptions()
    cov = build_covariance(csi, radio, opts.forward_backward, opts.stride, opts.smoothing, opts.tx_smoothing)
    assert decompose(cov).num_sources == 1
    assert decompose(cov, ratio=0.05).num_sources == 1


# -- pseudospectrum --------------------------------------------------------


def _decomp(eigvecs, j, layout):
    return SubspaceDecomposition(np.ones(eigvecs.shape[1]), eigvecs, j, layout)


def test_two_element_source_is_the_maximum():
    cfg = RadioConfig(num_tx=1, num_rx=2, num_subcarriers=1)
    half = cfg.wavelength_m / 2
    geo = ArrayGeometry(((0.0, 0.0), (half, 0.0)))
    a = rx_phase_matrix(cfg, geo, 63.0, 90.0).reshape(-1)
    signal = a / np.linalg.norm(a)
    noise = np.array([-signal[1].conj(), signal[0].conj()])
    dec = _decomp(np.stack([signal, noise], axis=1), 1, Layout(1, 2, (0,)))
    grid = SearchGrid(np.arange(180.0), np.array([90.0]), np.array([0.0]), np.array([0.0]))
    p = pseudospectrum(dec, cfg, geo, grid).values[:, 0, 0, 0]
    assert int(np.argmax(p)) == 63
    assert np.all(np.delete(p, 63) < p[63])
    # by hand: ||E_N^H a||^2 = 2 - |a^H s|^2 for unit s
    b = rx_phase_matrix(cfg, geo, np.arange(180.0), 90.0)
    expected = 1.0 / np.maximum(2.0 - np.abs(signal.conj() @ b) ** 2, 2.0 / 1e10)
    np.testing.assert_allclose(p, expected, rtol=1e-9)


def test_full_noise_basis_gives_constant_spectrum():
    rng = np.random.default_rng(4)
    lay = Layout(2, 3, (0, 1, 2, 3))
    q, _ = np.linalg.qr(rng.normal(size=(24, 24)) + 1j * rng.normal(size=(24, 24)))
    geo = ArrayGeometry.for_config(SMALL)
    grid = SearchGrid(np.arange(0.0, 180, 20), np.arange(0.0, 180, 30), np.linspace(-60, 60, 3), np.array([0, 1e-8]))
    p = pseudospectrum(_decomp(q, 0, lay), SMALL, geo, grid).values
    np.testing.assert_allclose(p, 1.0 / 24.0, rtol=1e-12)


def _explicit_spectrum(dec, cfg, geo, grid):
    lay = dec.layout
    en = dec.noise_basis
    out = np.empty(grid.shape)
    for i, az in enumerate(grid.azimuth_deg):
        for j, el in enumerate(grid.elevation_deg):
            phi = rx_phase_matrix(cfg, geo, az, el).reshape(-1)
            for k, aod in enumerate(grid.aod_deg):
                psi = tx_factors(cfg, aod)[: lay.num_tx]
                for m, tau in enumerate(grid.tof_s):
                    om = np.exp(-2j * np.pi * cfg.subcarrier_spacing_hz * np.asarray(lay.subcarriers) * tau)
                    a = np.kron(np.kron(psi, phi), om)
                    out[i, j, k, m] = 1.0 / np.linalg.norm(en.conj().T @ a) ** 2
    return out


@given(st.integers(0, 10_000), st.integers(1, 4))
def test_spectrum_matches_explicit_projection(seed, j):
    rng = np.random.default_rng(seed)
    csi = random_csi(rng, 8)
    dec = decompose(build_covariance(csi, SMALL, False), num_sources=j)
    geo = ArrayGeometry.for_config(SMALL)
    grid = SearchGrid(np.array([10.0, 95.0, 170.0]), np.array([20.0, 90.0]), np.array([-40.0, 25.0]),
                      np.array([0.0, 3e-8]))
    p = pseudospectrum(dec, SMALL, geo, grid).values
    assert np.all(p >= 0) and np.all(np.isfinite(p))
    np.testing.assert_allclose(p, _explicit_spectrum(dec, SMALL, geo, grid), rtol=1e-7)


@pytest.mark.parametrize("mode", ["exhaustive", "coarse_to_fine"])
def test_single_path_on_grid_point(radio, geometry, mode):
    grid = SearchGrid.default(radio, stride=MusicOptions().stride)
    sig = PathSignature(Direction(117.0, 64.0), float(grid.aod_deg[12]), float(grid.tof_s[5]))
    csi = simulate_paths([(sig, 1.0)], radio, imp=ImpairmentSpec.off(), geo=geometry)
    img = estimate_frame(csi, radio, geometry, SearchConfig(mode=mode))
    assert img.argmax() == (117.0, 64.0)


# -- accumulation ----------------------------------------------------------


def test_accumulate_single_slice():
    v = np.random.default_rng(1).uniform(size=(180, 180, 1, 1))
    img = accumulate_aoa_image(v)
    np.testing.assert_array_equal(img.values, v[:, :, 0, 0].T)


def test_accumulate_constant_block():
    img = accumulate_aoa_image(np.full((180, 180, 19, 32), 0.25))
    np.testing.assert_allclose(img.values, 0.25 * 19 * 32)


def test_accumulate_rejects_bad_shape():
    with pytest.raises(ValueError):
        accumulate_aoa_image(np.zeros((4, 4)))


def test_shared_direction_single_peak(radio, geometry):
    sigs = [(PathSignature(Direction(75, 100), 10.0, 10e-9), 1.0),
            (PathSignature(Direction(75, 100), 10.0, 60e-9), 0.8 * np.exp(1.1j))]
    csi = simulate_paths(sigs, radio, packets=50, imp=ImpairmentSpec(seed=3, snr_db=30), geo=geometry)
    img = estimate_frame(csi, radio, geometry, SearchConfig(mode="exhaustive"))
    peaks = find_peaks(img, 2)
    floor = np.median(img.values)  # summing over AoD and ToF leaves a flat background
    assert abs(peaks[0][0] - 75) <= 1 and abs(peaks[0][1] - 100) <= 1
    assert len(peaks) == 1 or peaks[1][2] - floor < 0.1 * (peaks[0][2] - floor)


def test_toy_grid_composition(radio, geometry):
    grid = SearchGrid(np.linspace(0, 180, 10), np.linspace(0, 180, 10), np.array([-30.0, 0.0, 30.0]),
                      np.array([0.0, 1e-8, 2e-8]))
    sig = PathSignature(Direction(40, 80), 0.0, 1e-8)
    csi = simulate_paths([(sig, 1.0)], radio, imp=ImpairmentSpec(seed=2, snr_db=25), geo=geometry)
    opts = MusicOptions()
    img = estimate_frame(csi, radio, geometry, SearchConfig(mode="exhaustive"), opts, grid=grid)
    cov = build_covariance(csi, radio, opts.forward_backward, opts.stride, opts.smoothing, opts.tx_smoothing)
    spec = pseudospectrum(decompose(cov, opts.num_sources, opts.source_ratio), radio, geometry, grid, opts.ceiling)
    np.testing.assert_array_equal(img.values, accumulate_aoa_image(spec).values)
    assert img.meta["evaluations"] == 10 * 10 * 3 * 3


@given(st.integers(0, 10_000))
def test_argmax_invariant_to_common_phase_and_scale(seed):
    radio = RadioConfig()
    geo = ArrayGeometry.for_config(radio)
    rng = np.random.default_rng(seed)
    sig = PathSignature(Direction(float(rng.integers(20, 160)), float(rng.integers(40, 140))),
                        rng.uniform(-60, 60), rng.uniform(0, 60e-9))
    csi = simulate_paths([(sig, 1.0)], radio, packets=20, imp=ImpairmentSpec(seed=seed, snr_db=20), geo=geo)
    base = estimate_frame(csi, radio, geo)
    scaled = csi * rng.uniform(0.01, 100) * np.exp(1j * rng.uniform(0, 2 * np.pi, size=(len(csi), 1, 1, 1)))
    assert estimate_frame(scaled, radio, geo).argmax() == base.argmax()


# -- peaks -----------------------------------------------------------------


def test_peaks_need_strict_neighbourhood_maximum():
    img = np.zeros((5, 5))
    img[1, 1] = img[1, 2] = 3.0  # plateau: not a strict peak
    img[3, 3] = 2.0
    assert list(local_maxima(img)) == [3 * 5 + 3]


def test_argmax_tie_lowest_index():
    v = np.zeros((180, 180))
    v[10, 50] = v[10, 20] = v[40, 5] = 1.0
    assert AoaImage(v).argmax() == (20.0, 10.0)
    assert list(local_maxima(v))[:3] == [10 * 180 + 20, 10 * 180 + 50, 40 * 180 + 5]


def test_image_rejects_negative():
    with pytest.raises(ValueError):
        AoaImage(-np.ones((180, 180)))
