"""Four-dimensional MUSIC over (azimuth, elevation, AoD, ToF) and 2D AoA images.

The joint steering vector is a Kronecker product of a tx factor, the rx
steering vector and a subcarrier factor, so the noise-subspace projection

    ||E_N^H a||^2 = ||a||^2 - ||E_S^H a||^2

is evaluated by contracting the few signal eigenvectors against the three
factor tables one axis at a time.  That keeps an exhaustive 180 x 180 x 19 x 16
search within seconds; the coarse-to-fine mode cuts the number of evaluated
steering vectors by an order of magnitude on top of that.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .array_model import (
    ArrayGeometry,
    RadioConfig,
    rx_phase_matrix,
    tx_factors,
)

log = logging.getLogger(__name__)

IMAGE_SIZE = 180
DEFAULT_SOURCE_RATIO = 1e-3  # eigenvalues above this fraction of the largest count as sources


@dataclass(frozen=True)
class Layout:
    """Which sensing elements a covariance covers (tx-major, rx, subcarrier)."""

    num_tx: int
    num_rx: int
    subcarriers: tuple[int, ...]

    @property
    def dim(self) -> int:
        return self.num_tx * self.num_rx * len(self.subcarriers)

    @classmethod
    def full(cls, config: RadioConfig, stride: int = 1, smoothing: int = 1, tx_smoothing: int = 1) -> "Layout":
        idx = np.arange(0, config.num_subcarriers, stride)
        m = len(idx) - smoothing + 1
        k = config.num_tx - tx_smoothing + 1
        if m < 1 or k < 1:
            raise ValueError("smoothing window larger than the available elements")
        return cls(k, config.num_rx, tuple(int(i) for i in idx[:m]))


@dataclass
class CovarianceMatrix:
    r: np.ndarray
    num_packets: int
    layout: Layout
    forward_backward: bool = False

    def check(self, tol: float = 1e-9) -> None:
        herm = np.max(np.abs(self.r - self.r.conj().T)) if self.r.size else 0.0
        scale = max(1.0, float(np.real(np.trace(self.r))))
        if herm > tol * scale:
            raise AssertionError(f"covariance not Hermitian ({herm:.3g})")


@dataclass
class SubspaceDecomposition:
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # columns match eigenvalues
    num_sources: int
    layout: Layout

    @property
    def signal_basis(self) -> np.ndarray:
        return self.eigenvectors[:, : self.num_sources]

    @property
    def noise_basis(self) -> np.ndarray:
        return self.eigenvectors[:, self.num_sources:]


@dataclass(frozen=True)
class SearchGrid:
    azimuth_deg: np.ndarray
    elevation_deg: np.ndarray
    aod_deg: np.ndarray
    tof_s: np.ndarray

    @classmethod
    def default(cls, config: RadioConfig, n_aod: int = 19, n_tof: int = 32, stride: int = 1,
                tof_span_s: float | None = None) -> "SearchGrid":
        """1 degree AoA grid; ToF covers one period of the decimated subcarrier phase."""
        span = tof_span_s if tof_span_s is not None else 1.0 / (stride * config.subcarrier_spacing_hz)
        return cls(
            np.arange(IMAGE_SIZE, dtype=float),
            np.arange(IMAGE_SIZE, dtype=float),
            np.linspace(-90.0, 90.0, n_aod),
            np.linspace(0.0, span, n_tof, endpoint=False),
        )

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (len(self.azimuth_deg), len(self.elevation_deg), len(self.aod_deg), len(self.tof_s))


@dataclass
class Spectrum4D:
    values: np.ndarray  # (az, el, aod, tof)
    clamped: int = 0
    evaluations: int = 0


@dataclass
class AoaImage:
    """Accumulated pseudospectrum, ``values[elevation, azimuth]``."""

    values: np.ndarray
    azimuth_axis: np.ndarray = field(default_factory=lambda: np.arange(IMAGE_SIZE, dtype=float))
    elevation_axis: np.ndarray = field(default_factory=lambda: np.arange(IMAGE_SIZE, dtype=float))
    frame_index: int = 0
    receiver_index: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if np.any(~np.isfinite(v)) or np.any(v < 0):
            raise ValueError("AoA image values must be finite and nonnegative")
        self.values = v

    def argmax(self) -> tuple[float, float]:
        """(azimuth, elevation) of the strongest pixel; lowest linear index wins ties."""
        i = int(np.argmax(self.values))
        e, a = np.unravel_index(i, self.values.shape)
        return float(self.azimuth_axis[a]), float(self.elevation_axis[e])


@dataclass(frozen=True)
class MusicOptions:
    stride: int = 3
    forward_backward: bool = False
    smoothing: int = 5
    tx_smoothing: int = 2
    num_sources: int | None = None
    source_ratio: float = DEFAULT_SOURCE_RATIO
    ceiling: float = 1e10  # relative to 1 / D


@dataclass(frozen=True)
class SearchConfig:
    mode: str = "coarse_to_fine"
    coarse_step_deg: int = 4
    refine_radius: int = 4
    top_q: int = 10
    max_climbs: int = 8

    def __post_init__(self):
        if self.mode not in ("exhaustive", "coarse_to_fine"):
            raise ValueError(f"unknown search mode {self.mode!r}")
        if self.coarse_step_deg < 1 or self.refine_radius < 0 or self.top_q < 1 or self.max_climbs < 0:
            raise ValueError("invalid coarse-to-fine settings")


# -- covariance and subspaces ----------------------------------------------


def _snapshots(csi: np.ndarray, layout: Layout, stride: int, smoothing: int, tx_smoothing: int) -> np.ndarray:
    """Vectorised packets ``(S, D)``; subarray smoothing adds shifted copies."""
    csi = np.asarray(csi)
    idx = np.asarray(layout.subcarriers)
    out = []
    for v in range(tx_smoothing):
        sub = csi[:, v: v + layout.num_tx]
        for s in range(smoothing):
            out.append(sub[:, :, :, idx + s * stride].reshape(len(csi), -1))
    return np.concatenate(out, axis=0)


def build_covariance(
    csi,
    config: RadioConfig,
    forward_backward: bool = True,
    stride: int = 1,
    smoothing: int = 1,
    tx_smoothing: int = 1,
) -> CovarianceMatrix:
    """Sample covariance of vectorised (sanitized) packets.

    ``csi`` is a ``(T, K, N, M)`` array or anything with a ``.csi`` attribute.
    """
    csi = np.asarray(getattr(csi, "csi", csi))
    if csi.ndim != 4 or len(csi) == 0:
        raise ValueError("covariance needs a non-empty (T, K, N, M) window")
    layout = Layout.full(config, stride, smoothing, tx_smoothing)
    x = _snapshots(csi, layout, stride, smoothing, tx_smoothing)
    r = x.T @ x.conj() / len(x)
    if forward_backward:
        r = 0.5 * (r + r[::-1, ::-1].conj())
    r = 0.5 * (r + r.conj().T)
    cov = CovarianceMatrix(r, len(csi), layout, forward_backward)
    cov.check()
    return cov


def estimate_num_sources(eigenvalues, ratio: float = DEFAULT_SOURCE_RATIO, fixed: int | None = None) -> int:
    ev = np.asarray(eigenvalues, dtype=float)
    if ev.size == 0:
        raise ValueError("need at least one eigenvalue")
    d = ev.size
    if fixed is not None:
        j = int(fixed)
    else:
        j = int(np.count_nonzero(ev > ratio * ev[0]))
    return int(min(max(j, 1), max(d - 1, 1)))


def decompose(cov: CovarianceMatrix, num_sources: int | None = None, ratio: float = DEFAULT_SOURCE_RATIO) -> SubspaceDecomposition:
    w, v = np.linalg.eigh(cov.r)
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order]
    tr = float(np.real(np.trace(cov.r)))
    if w.size and w[-1] < -1e-9 * max(tr, 1e-300):
        raise AssertionError(f"covariance not PSD (min eigenvalue {w[-1]:.3g})")
    if abs(w.sum() - tr) > 1e-6 * max(abs(tr), 1e-300):
        raise AssertionError("eigenvalue sum differs from trace")
    j = estimate_num_sources(w, ratio, num_sources)
    return SubspaceDecomposition(w, v, j, cov.layout)


# -- pseudospectrum --------------------------------------------------------


def _factor_tables(config: RadioConfig, geometry: ArrayGeometry, layout: Layout, grid: SearchGrid):
    psi = tx_factors(config, grid.aod_deg)[: layout.num_tx]  # (K, A)
    idx = np.asarray(layout.subcarriers, dtype=float)
    omega = np.exp(-2j * np.pi * config.subcarrier_spacing_hz * idx[:, None] * np.asarray(grid.tof_s)[None, :])
    return psi, omega


def _reduced_signal(decomp: SubspaceDecomposition, psi: np.ndarray, omega: np.ndarray) -> np.ndarray:
    """Contract conj(E_S) with the tx and subcarrier tables: ``(J * A * T, N)``."""
    lay = decomp.layout
    j = decomp.num_sources
    es = decomp.signal_basis.conj().T.reshape(j, lay.num_tx, lay.num_rx, len(lay.subcarriers))
    # sum over subcarriers, then tx
    g = np.einsum("jvyk,kt->jvyt", es, omega, optimize=True)
    h = np.einsum("jvyt,va->jayt", g, psi, optimize=True)
    return np.ascontiguousarray(h.transpose(0, 1, 3, 2)).reshape(-1, lay.num_rx)


def _denominators(reduced, j, n_a, n_t, dim, phi_cols) -> np.ndarray:
    """``||a||^2 - ||E_S^H a||^2`` for the pixels in ``phi_cols`` -> ``(P, A, T)``."""
    p = phi_cols.shape[1]
    if j == 0:
        return np.full((p, n_a, n_t), float(dim))
    proj = reduced @ phi_cols  # (J*A*T, P)
    mag = (proj.real ** 2 + proj.imag ** 2).reshape(j, n_a * n_t, p).sum(axis=0)
    return (dim - mag).T.reshape(p, n_a, n_t)


class SpectrumEvaluator:
    """Evaluates the pseudospectrum on pixel subsets and counts steering vectors."""

    def __init__(self, decomp: SubspaceDecomposition, config: RadioConfig, geometry: ArrayGeometry,
                 grid: SearchGrid, ceiling: float = 1e10, chunk: int | None = None):
        self.decomp = decomp
        self.config = config
        self.geometry = geometry
        self.grid = grid
        lay = decomp.layout
        if lay.num_rx != geometry.num_elements:
            raise ValueError("geometry does not match the covariance layout")
        self.dim = lay.dim
        self.floor = self.dim / ceiling  # P never exceeds ceiling / D
        psi, omega = _factor_tables(config, geometry, lay, grid)
        self.n_a, self.n_t = psi.shape[1], omega.shape[1]
        self.reduced = _reduced_signal(decomp, psi, omega) if decomp.num_sources else None
        per_pixel = max(1, decomp.num_sources) * self.n_a * self.n_t
        self.chunk = chunk or max(64, int(4_000_000 // per_pixel))
        self.evaluations = 0
        self.clamped = 0

    def cells(self, az_idx: np.ndarray, el_idx: np.ndarray) -> np.ndarray:
        """Spectrum at pixels given by index arrays -> ``(P, A, T)``."""
        az = self.grid.azimuth_deg[az_idx]
        el = self.grid.elevation_deg[el_idx]
        out = np.empty((len(az), self.n_a, self.n_t))
        for s in range(0, len(az), self.chunk):
            sl = slice(s, s + self.chunk)
            phi = rx_phase_matrix(self.config, self.geometry, az[sl], el[sl])
            den = _denominators(self.reduced, self.decomp.num_sources, self.n_a, self.n_t, self.dim, phi)
            low = den < self.floor
            if np.any(low):
                self.clamped += int(np.count_nonzero(low))
                den = np.where(low, self.floor, den)
            out[sl] = 1.0 / den
        self.evaluations += len(az) * self.n_a * self.n_t
        return out

    def pixels(self, az_idx, el_idx) -> np.ndarray:
        """Accumulated (summed over AoD and ToF) spectrum at the given pixels."""
        return self.cells(az_idx, el_idx).sum(axis=(1, 2))


def pseudospectrum(decomp: SubspaceDecomposition, config: RadioConfig, geometry: ArrayGeometry,
                   grid: SearchGrid, ceiling: float = 1e10) -> Spectrum4D:
    """``1 / ||E_N^H a||^2`` on the full 4D grid, axes (az, el, aod, tof)."""
    n_az, n_el, n_a, n_t = grid.shape
    if min(grid.shape) == 0:
        raise ValueError("empty search grid")
    ev = SpectrumEvaluator(decomp, config, geometry, grid, ceiling)
    a_idx, e_idx = np.meshgrid(np.arange(n_az), np.arange(n_el), indexing="ij")
    vals = ev.cells(a_idx.ravel(), e_idx.ravel()).reshape(n_az, n_el, n_a, n_t)
    return Spectrum4D(vals, ev.clamped, ev.evaluations)


def accumulate_aoa_image(values4d, frame_index: int = 0, receiver_index: int = 0,
                         grid: SearchGrid | None = None) -> AoaImage:
    v = np.asarray(getattr(values4d, "values", values4d))
    if v.ndim != 4:
        raise ValueError("expected a (az, el, aod, tof) block")
    img = v.sum(axis=(2, 3)).T
    kw = {}
    if grid is not None:
        kw = {"azimuth_axis": np.asarray(grid.azimuth_deg), "elevation_axis": np.asarray(grid.elevation_deg)}
    return AoaImage(img, frame_index=frame_index, receiver_index=receiver_index, **kw)


# -- search strategies -----------------------------------------------------


def _coarse_axis(n: int, step: int) -> np.ndarray:
    idx = np.arange(0, n, step)
    if idx[-1] != n - 1:
        idx = np.append(idx, n - 1)
    return idx


def _interp_axis(coarse_idx: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Left node, right node and weight of each fine index."""
    fine = np.arange(n)
    right = np.searchsorted(coarse_idx, fine, side="left")
    right = np.clip(right, 1, len(coarse_idx) - 1)
    left = right - 1
    span = coarse_idx[right] - coarse_idx[left]
    w = (fine - coarse_idx[left]) / span
    return left, right, w


def bilinear_fill(coarse: np.ndarray, el_idx: np.ndarray, az_idx: np.ndarray, shape) -> np.ndarray:
    """Bilinear interpolant of a coarse ``(el, az)`` image onto the full grid."""
    el_l, el_r, el_w = _interp_axis(el_idx, shape[0])
    az_l, az_r, az_w = _interp_axis(az_idx, shape[1])
    top = coarse[el_l][:, az_l] * (1 - az_w) + coarse[el_l][:, az_r] * az_w
    bot = coarse[el_r][:, az_l] * (1 - az_w) + coarse[el_r][:, az_r] * az_w
    out = top * (1 - el_w)[:, None] + bot * el_w[:, None]
    out[np.ix_(el_idx, az_idx)] = coarse
    return out


def local_maxima(image: np.ndarray, strict: bool = True) -> np.ndarray:
    """Linear indices of 8-neighbourhood maxima, strongest first (ties: lowest index)."""
    img = np.asarray(image, dtype=float)
    padded = np.pad(img, 1, mode="constant", constant_values=-np.inf)
    h, w = img.shape
    is_max = np.ones_like(img, dtype=bool)
    for de in (-1, 0, 1):
        for da in (-1, 0, 1):
            if de == 0 and da == 0:
                continue
            nb = padded[1 + de: 1 + de + h, 1 + da: 1 + da + w]
            is_max &= (img > nb) if strict else (img >= nb)
    lin = np.flatnonzero(is_max)
    order = np.lexsort((lin, -img.ravel()[lin]))
    return lin[order]


def find_peaks(image: AoaImage | np.ndarray, count: int) -> list[tuple[float, float, float]]:
    """Top ``count`` strict local maxima as (azimuth, elevation, value)."""
    if isinstance(image, AoaImage):
        vals, az_axis, el_axis = image.values, image.azimuth_axis, image.elevation_axis
    else:
        vals = np.asarray(image)
        el_axis = np.arange(vals.shape[0], dtype=float)
        az_axis = np.arange(vals.shape[1], dtype=float)
    out = []
    for i in local_maxima(vals)[:count]:
        e, a = np.unravel_index(i, vals.shape)
        out.append((float(az_axis[a]), float(el_axis[e]), float(vals[e, a])))
    return out


def search_image(ev: SpectrumEvaluator, search: SearchConfig) -> np.ndarray:
    n_az, n_el = len(ev.grid.azimuth_deg), len(ev.grid.elevation_deg)
    if search.mode == "exhaustive":
        a_idx, e_idx = np.meshgrid(np.arange(n_az), np.arange(n_el), indexing="ij")
        vals = ev.cells(a_idx.ravel(), e_idx.ravel()).reshape(n_az, n_el, ev.n_a, ev.n_t)
        return vals.sum(axis=(2, 3)).T

    step = search.coarse_step_deg
    az_c = _coarse_axis(n_az, step)
    el_c = _coarse_axis(n_el, step)
    ee, aa = np.meshgrid(el_c, az_c, indexing="ij")
    coarse = ev.pixels(aa.ravel(), ee.ravel()).reshape(len(el_c), len(az_c))
    image = bilinear_fill(coarse, el_c, az_c, (n_el, n_az))
    visited = np.zeros((n_el, n_az), dtype=bool)
    visited[np.ix_(el_c, az_c)] = True

    seeds = list(local_maxima(coarse, strict=False)[: search.top_q])
    if len(seeds) < search.top_q:
        rest = [i for i in np.lexsort((np.arange(coarse.size), -coarse.ravel())) if i not in set(seeds)]
        seeds += rest[: search.top_q - len(seeds)]
    want = np.zeros((n_el, n_az), dtype=bool)
    r = search.refine_radius
    for i in seeds:
        ce, ca = np.unravel_index(i, coarse.shape)
        e0, a0 = el_c[ce], az_c[ca]
        want[max(0, e0 - r): e0 + r + 1, max(0, a0 - r): a0 + r + 1] = True
    refined = np.zeros_like(visited)
    for _ in range(search.max_climbs + 1):
        refined |= want
        want &= ~visited
        e_sel, a_sel = np.nonzero(want)
        if not len(e_sel):
            break
        image[e_sel, a_sel] = ev.pixels(a_sel, e_sel)
        visited |= want
        # a refined maximum on the rim of its window may sit below a higher unvisited cell: recentre
        known = np.where(refined, image, -np.inf)
        want = np.zeros_like(visited)
        for i in local_maxima(known, strict=False)[: search.top_q]:
            e0, a0 = np.unravel_index(i, known.shape)
            want[max(0, e0 - r): e0 + r + 1, max(0, a0 - r): a0 + r + 1] = True
    return image


def estimate_frame(
    csi,
    config: RadioConfig,
    geometry: ArrayGeometry | None = None,
    search: SearchConfig | None = None,
    options: MusicOptions | None = None,
    grid: SearchGrid | None = None,
    frame_index: int = 0,
    receiver_index: int = 0,
) -> AoaImage:
    """Covariance -> subspaces -> 4D spectrum -> 2D AoA image for one packet window."""
    geometry = geometry or ArrayGeometry.for_config(config)
    search = search or SearchConfig()
    options = options or MusicOptions()
    grid = grid or SearchGrid.default(config, stride=options.stride)
    cov = build_covariance(csi, config, options.forward_backward, options.stride, options.smoothing,
                           options.tx_smoothing)
    decomp = decompose(cov, options.num_sources, options.source_ratio)
    ev = SpectrumEvaluator(decomp, config, geometry, grid, options.ceiling)
    values = search_image(ev, search)
    meta = {
        "num_sources": decomp.num_sources,
        "evaluations": ev.evaluations,
        "clamped": ev.clamped,
        "mode": search.mode,
        "num_packets": cov.num_packets,
    }
    return AoaImage(values, np.asarray(grid.azimuth_deg), np.asarray(grid.elevation_deg),
                    frame_index, receiver_index, meta)


def frame_windows(num_packets: int, packets_per_frame: int) -> list[slice]:
    return [slice(s, s + packets_per_frame) for s in range(0, num_packets - packets_per_frame + 1, packets_per_frame)]
