"""Geometric multipath forward model producing synthetic CSI.

A scene holds one transmitter, one or two receivers, static point reflectors,
optional wall planes (for second-bounce body paths) and a per-frame list of
body scatterers.  Each scatterer contributes a single-bounce path whose
angles come from the receiver and transmitter local frames and whose gain
follows bistatic spreading ``reflectivity / (l_tx * l_rx)``, optionally
weighted by a cosine lobe around the specular bisector.

CSI synthesis sums the joint steering entries of all paths, then applies the
per-packet impairments (random common phase, STO phase ramp) and circular
Gaussian noise.  Randomness is keyed per (seed, receiver, packet) so any
packet can be regenerated on its own.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .array_model import (
    SPEED_OF_LIGHT,
    ArrayGeometry,
    Direction,
    PathSignature,
    RadioConfig,
    subcarrier_factors,
    rx_phase_matrix,
    tx_factors,
    vector_to_angles,
)
from .body_model import DEFAULT_MODEL, BodyModel, BodyParams, sample_surface, smpl_map, surface_samples

PATH_KINDS = ("los", "static", "body", "bounce")
DEFAULT_PACKET_RATE_HZ = 1000.0
DEFAULT_FRAME_RATE_HZ = 30.0


@dataclass(frozen=True)
class Pose:
    """Device position and heading; ``yaw_deg`` rotates the local X axis about world +Z."""

    position: tuple[float, float, float]
    yaw_deg: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position", tuple(float(c) for c in self.position))

    @property
    def rotation(self) -> np.ndarray:
        """Columns are the local x, y, z axes in world coordinates."""
        c, s = np.cos(np.deg2rad(self.yaw_deg)), np.sin(np.deg2rad(self.yaw_deg))
        return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])

    def to_local(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float) - np.asarray(self.position)
        return p @ self.rotation

    def to_world(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + np.asarray(self.position)

    def to_dict(self) -> dict:
        return {"position": list(self.position), "yaw_deg": self.yaw_deg}


@dataclass(frozen=True)
class Scatterer:
    position: tuple[float, float, float]
    reflectivity: complex = 1.0
    normal: tuple[float, float, float] | None = None

    def __post_init__(self):
        if not np.isfinite(self.reflectivity):
            raise ValueError("reflectivity must be finite")
        if self.normal is not None:
            n = np.asarray(self.normal, dtype=float)
            if abs(np.linalg.norm(n) - 1.0) > 1e-6:
                raise ValueError("normal must be unit length")


@dataclass
class ScattererSet:
    """Array form of many scatterers; ``normals`` rows of zeros mean "no normal"."""

    positions: np.ndarray
    reflectivity: np.ndarray
    normals: np.ndarray | None = None

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        self.reflectivity = np.broadcast_to(
            np.asarray(self.reflectivity, dtype=complex), (len(self.positions),)
        ).copy()
        if self.normals is not None:
            self.normals = np.asarray(self.normals, dtype=float).reshape(-1, 3)
            if self.normals.shape != self.positions.shape:
                raise ValueError("normals must match positions")

    def __len__(self) -> int:
        return len(self.positions)

    @classmethod
    def empty(cls) -> "ScattererSet":
        return cls(np.zeros((0, 3)), np.zeros(0, dtype=complex))

    @classmethod
    def from_list(cls, items: Sequence[Scatterer]) -> "ScattererSet":
        if not items:
            return cls.empty()
        pos = np.array([s.position for s in items], dtype=float)
        refl = np.array([s.reflectivity for s in items], dtype=complex)
        if any(s.normal is not None for s in items):
            normals = np.array([s.normal if s.normal is not None else (0.0, 0.0, 0.0) for s in items])
        else:
            normals = None
        return cls(pos, refl, normals)

    def translated(self, offset) -> "ScattererSet":
        return ScattererSet(self.positions + np.asarray(offset, dtype=float), self.reflectivity, self.normals)

    def concat(self, other: "ScattererSet") -> "ScattererSet":
        if self.normals is None and other.normals is None:
            normals = None
        else:
            normals = np.vstack([
                self.normals if self.normals is not None else np.zeros_like(self.positions),
                other.normals if other.normals is not None else np.zeros_like(other.positions),
            ])
        return ScattererSet(
            np.vstack([self.positions, other.positions]),
            np.concatenate([self.reflectivity, other.reflectivity]),
            normals,
        )


@dataclass(frozen=True)
class Wall:
    """Infinite reflecting plane used only for second-bounce body paths."""

    point: tuple[float, float, float]
    normal: tuple[float, float, float]
    reflectivity: float = 0.5


@dataclass
class Scene:
    tx_pose: Pose
    rx_poses: list[Pose]
    static_reflectors: ScattererSet = field(default_factory=ScattererSet.empty)
    body_frames: list[ScattererSet] = field(default_factory=list)
    include_los: bool = True
    walls: list[Wall] = field(default_factory=list)
    second_bounce: bool = False
    specular_exponent: float = 4.0
    body_attenuation: float = 1.0

    def __post_init__(self):
        if not self.rx_poses:
            raise ValueError("scene needs at least one receiver")

    @property
    def num_frames(self) -> int:
        return max(1, len(self.body_frames))

    def body(self, frame_index: int) -> ScattererSet:
        if not self.body_frames:
            return ScattererSet.empty()
        if not 0 <= frame_index < len(self.body_frames):
            raise IndexError(f"frame {frame_index} out of range")
        return self.body_frames[frame_index]


@dataclass(frozen=True)
class ImpairmentSpec:
    sto_slope_std_s: float = 20e-9
    common_phase: bool = True
    snr_db: float | None = None  # None means noiseless
    seed: int = 0

    def __post_init__(self):
        if self.snr_db is not None and not np.isfinite(self.snr_db):
            raise ValueError("snr_db must be finite or None")

    @classmethod
    def off(cls, seed: int = 0) -> "ImpairmentSpec":
        return cls(sto_slope_std_s=0.0, common_phase=False, snr_db=None, seed=seed)


@dataclass
class Paths:
    """Propagation paths for one receiver at one instant, stored as arrays."""

    azimuth_deg: np.ndarray
    elevation_deg: np.ndarray
    aod_deg: np.ndarray
    tof_s: np.ndarray
    gain: np.ndarray
    kind: np.ndarray  # index into PATH_KINDS

    def __len__(self) -> int:
        return len(self.gain)

    def __iter__(self) -> Iterator[tuple[PathSignature, complex]]:
        for i in range(len(self)):
            yield self.signature(i), complex(self.gain[i])

    def signature(self, i: int) -> PathSignature:
        return PathSignature(
            Direction(float(self.azimuth_deg[i]), float(self.elevation_deg[i])),
            float(self.aod_deg[i]),
            float(self.tof_s[i]),
        )

    def select(self, mask) -> "Paths":
        return Paths(*(getattr(self, f)[mask] for f in ("azimuth_deg", "elevation_deg", "aod_deg", "tof_s", "gain", "kind")))

    def concat(self, other: "Paths") -> "Paths":
        return Paths(*(np.concatenate([getattr(self, f), getattr(other, f)]) for f in ("azimuth_deg", "elevation_deg", "aod_deg", "tof_s", "gain", "kind")))

    @classmethod
    def empty(cls) -> "Paths":
        z = np.zeros(0)
        return cls(z, z, z, z, np.zeros(0, dtype=complex), np.zeros(0, dtype=int))

    @classmethod
    def from_signatures(cls, items: Sequence[tuple[PathSignature, complex]], kind: str = "static") -> "Paths":
        if not items:
            return cls.empty()
        sigs, gains = zip(*items)
        return cls(
            np.array([s.direction.azimuth_deg for s in sigs]),
            np.array([s.direction.elevation_deg for s in sigs]),
            np.array([s.aod_deg for s in sigs]),
            np.array([s.tof_s for s in sigs]),
            np.array(gains, dtype=complex),
            np.full(len(sigs), PATH_KINDS.index(kind)),
        )


def _aod(tx: Pose, points: np.ndarray) -> np.ndarray:
    local = tx.to_local(points)
    r = np.linalg.norm(local, axis=-1)
    return np.rad2deg(np.arcsin(np.clip(local[..., 0] / r, -1.0, 1.0)))


def _specular_weight(normals, pos, tx_pos, rx_pos, exponent) -> np.ndarray:
    if normals is None:
        return np.ones(len(pos))
    to_tx = tx_pos - pos
    to_rx = rx_pos - pos
    bis = to_tx / np.linalg.norm(to_tx, axis=-1, keepdims=True) + to_rx / np.linalg.norm(to_rx, axis=-1, keepdims=True)
    bis /= np.maximum(np.linalg.norm(bis, axis=-1, keepdims=True), 1e-12)
    cos = np.einsum("ij,ij->i", normals, bis)
    has_normal = np.linalg.norm(normals, axis=-1) > 0.5
    return np.where(has_normal, np.maximum(cos, 0.0) ** exponent, 1.0)


def single_bounce_paths(
    scatterers: ScattererSet,
    tx: Pose,
    rx: Pose,
    kind: str,
    specular_exponent: float = 4.0,
    gain_scale: float = 1.0,
) -> Paths:
    if len(scatterers) == 0:
        return Paths.empty()
    pos = scatterers.positions
    local = rx.to_local(pos)
    if np.any(local[:, 1] < -1e-9):
        raise ValueError("scatterer behind the receive array (local y < 0)")
    local[:, 1] = np.maximum(local[:, 1], 0.0)
    az, el = vector_to_angles(local)
    tx_pos = np.asarray(tx.position)
    rx_pos = np.asarray(rx.position)
    l_tx = np.linalg.norm(pos - tx_pos, axis=-1)
    l_rx = np.linalg.norm(pos - rx_pos, axis=-1)
    w = _specular_weight(scatterers.normals, pos, tx_pos, rx_pos, specular_exponent)
    gain = gain_scale * scatterers.reflectivity * w / (l_tx * l_rx)
    return Paths(
        az, el, _aod(tx, pos), (l_tx + l_rx) / SPEED_OF_LIGHT, gain.astype(complex),
        np.full(len(pos), PATH_KINDS.index(kind)),
    )


def los_path(tx: Pose, rx: Pose) -> Paths:
    tx_pos = np.asarray(tx.position, dtype=float)
    local = rx.to_local(tx_pos[None, :])
    if local[0, 1] < -1e-9:
        raise ValueError("transmitter behind the receive array (local y < 0)")
    local[:, 1] = np.maximum(local[:, 1], 0.0)
    az, el = vector_to_angles(local)
    dist = float(np.linalg.norm(tx_pos - np.asarray(rx.position)))
    # departure toward the receiver
    aod = _aod(tx, np.asarray(rx.position, dtype=float)[None, :])
    return Paths(az, el, aod, np.array([dist / SPEED_OF_LIGHT]), np.array([1.0 / dist], dtype=complex),
                 np.array([PATH_KINDS.index("los")]))


def second_bounce_paths(body: ScattererSet, walls: Sequence[Wall], tx: Pose, rx: Pose,
                        specular_exponent: float = 4.0) -> Paths:
    """tx -> body -> wall -> rx, by the image method; gain ``r_b r_w / (l1 l2 l3)``.

    Paths whose wall reflection point would lie behind the receive array are
    dropped rather than rejected: they are not observable.
    """
    out = Paths.empty()
    if len(body) == 0:
        return out
    tx_pos = np.asarray(tx.position, dtype=float)
    rx_pos = np.asarray(rx.position, dtype=float)
    for wall in walls:
        n = np.asarray(wall.normal, dtype=float)
        n = n / np.linalg.norm(n)
        p0 = np.asarray(wall.point, dtype=float)
        b = body.positions
        db = (b - p0) @ n
        dr = (rx_pos - p0) @ n
        ok = (db * dr) > 0  # body and receiver on the same side
        mirrored = b - 2.0 * db[:, None] * n
        # reflection point on the wall along rx -> mirrored image
        denom = (mirrored - rx_pos) @ n
        s = np.where(np.abs(denom) > 1e-12, -dr / np.where(denom == 0, 1, denom), -1.0)
        ok &= (s > 0) & (s < 1)
        refl_pt = rx_pos + s[:, None] * (mirrored - rx_pos)
        local = rx.to_local(refl_pt)
        ok &= local[:, 1] > 0
        if not np.any(ok):
            continue
        refl_pt, local, bpos = refl_pt[ok], local[ok], b[ok]
        l1 = np.linalg.norm(bpos - tx_pos, axis=-1)
        l2 = np.linalg.norm(refl_pt - bpos, axis=-1)
        l3 = np.linalg.norm(rx_pos - refl_pt, axis=-1)
        normals = body.normals[ok] if body.normals is not None else None
        w = _specular_weight(normals, bpos, tx_pos, refl_pt, specular_exponent)
        gain = body.reflectivity[ok] * wall.reflectivity * w / (l1 * l2 * l3)
        az, el = vector_to_angles(local)
        out = out.concat(Paths(az, el, _aod(tx, bpos), (l1 + l2 + l3) / SPEED_OF_LIGHT,
                               gain.astype(complex), np.full(len(gain), PATH_KINDS.index("bounce"))))
    return out


def paths_for_body(scene: Scene, receiver_index: int, body: ScattererSet) -> Paths:
    tx, rx = scene.tx_pose, scene.rx_poses[receiver_index]
    out = Paths.empty()
    if scene.include_los:
        out = out.concat(los_path(tx, rx))
    out = out.concat(single_bounce_paths(scene.static_reflectors, tx, rx, "static", scene.specular_exponent))
    out = out.concat(single_bounce_paths(body, tx, rx, "body", scene.specular_exponent, scene.body_attenuation))
    if scene.second_bounce and scene.walls:
        bounce = second_bounce_paths(body, scene.walls, tx, rx, scene.specular_exponent)
        bounce.gain = bounce.gain * scene.body_attenuation
        out = out.concat(bounce)
    return out


def scene_to_paths(scene: Scene, receiver_index: int, frame_index: int) -> Paths:
    if not 0 <= receiver_index < len(scene.rx_poses):
        raise IndexError(f"receiver {receiver_index} out of range")
    body = scene.body(frame_index) if scene.body_frames else ScattererSet.empty()
    return paths_for_body(scene, receiver_index, body)


# -- CSI synthesis ---------------------------------------------------------


def packet_rng(seed: int, stream: int, packet_index: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), int(stream), int(packet_index)])


def clean_channel(paths: Paths, config: RadioConfig, geometry: ArrayGeometry) -> np.ndarray:
    """Noiseless, impairment-free channel ``(K, N, M)`` for one set of paths."""
    k, n, m = config.num_tx, config.num_rx, config.num_subcarriers
    if len(paths) == 0:
        return np.zeros((k, n, m), dtype=complex)
    psi = tx_factors(config, paths.aod_deg)  # (K, P)
    phi = rx_phase_matrix(config, geometry, paths.azimuth_deg, paths.elevation_deg)  # (N, P)
    omega = subcarrier_factors(config, paths.tof_s)  # (M, P)
    left = (psi[:, None, :] * phi[None, :, :] * paths.gain[None, None, :]).reshape(k * n, -1)
    return (left @ omega.T).reshape(k, n, m)


def _impair(h: np.ndarray, config: RadioConfig, imp: ImpairmentSpec, rng: np.random.Generator,
            noise_std: float) -> np.ndarray:
    chi = rng.uniform(0.0, 2.0 * np.pi)
    eps = rng.normal(0.0, 1.0) * imp.sto_slope_std_s
    noise = rng.standard_normal(h.shape + (2,))
    out = h
    if imp.common_phase:
        out = out * np.exp(1j * chi)
    if imp.sto_slope_std_s > 0:
        kk = np.arange(config.num_subcarriers)
        out = out * np.exp(-2j * np.pi * config.subcarrier_spacing_hz * kk * eps)
    if noise_std > 0:
        out = out + noise_std * (noise[..., 0] + 1j * noise[..., 1]) / np.sqrt(2.0)
    return out


@dataclass
class CsiTrace:
    """Packets of one receiver: ``csi`` is ``(T, K, N, M)``, timestamps in ns."""

    csi: np.ndarray
    timestamps_ns: np.ndarray
    config: RadioConfig
    receiver_index: int = 0

    def __post_init__(self):
        self.timestamps_ns = np.asarray(self.timestamps_ns, dtype=np.int64)
        shape = (self.config.num_tx, self.config.num_rx, self.config.num_subcarriers)
        if self.csi.ndim != 4 or self.csi.shape[1:] != shape:
            raise ValueError(f"csi must be shaped (T,) + {shape}, got {self.csi.shape}")
        if len(self.timestamps_ns) != len(self.csi):
            raise ValueError("one timestamp per packet required")

    def __len__(self) -> int:
        return len(self.csi)

    def window(self, start: int, stop: int) -> "CsiTrace":
        return CsiTrace(self.csi[start:stop], self.timestamps_ns[start:stop], self.config, self.receiver_index)


def synthesize_csi(
    paths: Paths,
    config: RadioConfig,
    num_packets: int,
    impairments: ImpairmentSpec,
    geometry: ArrayGeometry | None = None,
    stream: int = 0,
    packet_rate_hz: float = DEFAULT_PACKET_RATE_HZ,
) -> CsiTrace:
    """Static paths observed over ``num_packets`` packets."""
    if num_packets < 1:
        raise ValueError("num_packets must be >= 1")
    geometry = geometry or ArrayGeometry.for_config(config)
    h = clean_channel(paths, config, geometry)
    return synthesize_from_channels(np.broadcast_to(h, (num_packets,) + h.shape), config, impairments,
                                    stream=stream, packet_rate_hz=packet_rate_hz)


def synthesize_from_channels(
    clean: np.ndarray,
    config: RadioConfig,
    impairments: ImpairmentSpec,
    stream: int = 0,
    first_packet: int = 0,
    packet_rate_hz: float = DEFAULT_PACKET_RATE_HZ,
) -> CsiTrace:
    """Apply impairments and noise to clean per-packet channels ``(T, K, N, M)``."""
    t = len(clean)
    noise_std = 0.0
    if impairments.snr_db is not None and t > 0:
        p_sig = float(np.mean(np.abs(clean) ** 2))
        noise_std = np.sqrt(p_sig / 10.0 ** (impairments.snr_db / 10.0))
    out = np.empty(clean.shape, dtype=complex)
    for i in range(t):
        rng = packet_rng(impairments.seed, stream, first_packet + i)
        out[i] = _impair(clean[i], config, impairments, rng, noise_std)
    ts = np.round((first_packet + np.arange(t)) * 1e9 / packet_rate_hz).astype(np.int64)
    return CsiTrace(out, ts, config, stream)


def interpolate_body(a: ScattererSet, b: ScattererSet, alpha: float) -> ScattererSet:
    """Linear blend of two corresponding scatterer sets (same sample order)."""
    if len(a) != len(b):
        raise ValueError("body frames must have matching sample counts to interpolate")
    pos = (1.0 - alpha) * a.positions + alpha * b.positions
    normals = None
    if a.normals is not None and b.normals is not None:
        normals = (1.0 - alpha) * a.normals + alpha * b.normals
        norm = np.linalg.norm(normals, axis=-1, keepdims=True)
        normals = np.where(norm > 1e-12, normals / np.maximum(norm, 1e-12), 0.0)
    return ScattererSet(pos, (1.0 - alpha) * a.reflectivity + alpha * b.reflectivity, normals)


def simulate_receiver(
    scene: Scene,
    receiver_index: int,
    config: RadioConfig,
    impairments: ImpairmentSpec,
    packets_per_frame: int = 33,
    num_frames: int | None = None,
    geometry: ArrayGeometry | None = None,
    intra_frame_motion: bool = True,
    packet_rate_hz: float = DEFAULT_PACKET_RATE_HZ,
) -> CsiTrace:
    """CSI for every packet of every frame seen by one receiver.

    With ``intra_frame_motion`` the body scatterers move linearly from frame
    ``f`` toward frame ``f + 1`` across the packets of frame ``f``; otherwise
    they stay put for the whole frame.
    """
    geometry = geometry or ArrayGeometry.for_config(config)
    n_frames = scene.num_frames if num_frames is None else num_frames
    clean = np.empty((n_frames * packets_per_frame, config.num_tx, config.num_rx, config.num_subcarriers),
                     dtype=complex)
    static_only = not scene.body_frames
    static_h = None
    for f in range(n_frames):
        body_a = scene.body(min(f, len(scene.body_frames) - 1)) if not static_only else None
        body_b = scene.body(min(f + 1, len(scene.body_frames) - 1)) if not static_only else None
        for j in range(packets_per_frame):
            idx = f * packets_per_frame + j
            if static_only:
                if static_h is None:
                    static_h = clean_channel(paths_for_body(scene, receiver_index, ScattererSet.empty()),
                                             config, geometry)
                clean[idx] = static_h
                continue
            if intra_frame_motion and len(body_a) == len(body_b):
                body = interpolate_body(body_a, body_b, j / packets_per_frame)
            else:
                body = body_a
            clean[idx] = clean_channel(paths_for_body(scene, receiver_index, body), config, geometry)
    return synthesize_from_channels(clean, config, impairments, stream=receiver_index,
                                    packet_rate_hz=packet_rate_hz)


# -- body surface ----------------------------------------------------------


def animate_body(
    params_sequence: Sequence[BodyParams],
    samples_per_frame: int = 400,
    seed: int = 0,
    reflectivity: float = 1.0,
    model: BodyModel | None = None,
) -> list[ScattererSet]:
    """Sample each frame's mesh at one fixed set of barycentric points.

    Reusing the sample set across frames keeps scatterer ``i`` attached to the
    same patch of skin, which is what lets :func:`interpolate_body` move it
    smoothly between frames.  Total reflectivity is split evenly in power so
    that the body's overall return does not depend on the sample count.
    """
    model = model or DEFAULT_MODEL
    samples = surface_samples(samples_per_frame, seed, model)
    refl = reflectivity / np.sqrt(samples_per_frame)
    frames = []
    for p in params_sequence:
        mesh = smpl_map(p.beta, p.gamma, p.translation, model)
        pos, normals = sample_surface(mesh, samples)
        frames.append(ScattererSet(pos, np.full(len(pos), refl), normals))
    return frames
