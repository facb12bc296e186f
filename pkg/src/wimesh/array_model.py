"""Antenna geometry, radio configuration and steering vectors.

Angles follow one convention throughout the package:

* azimuth ``theta`` in [0, 180] degrees, measured from the receiver's +X axis
  inside the front half-space (local y >= 0);
* elevation ``phi`` in [0, 180] degrees, measured from the receiver's +Z axis.

The unit arrival direction is therefore
``(sin(phi) cos(theta), sin(phi) sin(theta), cos(phi))``.

Joint steering vectors are flattened tx-major, then rx element, then
subcarrier.  Every covariance in :mod:`wimesh.music` relies on that order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


@dataclass(frozen=True)
class RadioConfig:
    carrier_freq_hz: float = 5.32e9
    bandwidth_hz: float = 40e6
    num_subcarriers: int = 30
    num_tx: int = 3
    num_rx: int = 9
    tx_spacing_m: float = 0.028
    rx_spacing_m: float = 0.028

    def __post_init__(self):
        for name in ("num_subcarriers", "num_tx", "num_rx"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("tx_spacing_m", "rx_spacing_m", "carrier_freq_hz", "bandwidth_hz"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")

    @property
    def subcarrier_spacing_hz(self) -> float:
        return self.bandwidth_hz / self.num_subcarriers

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / self.carrier_freq_hz

    @property
    def num_elements(self) -> int:
        return self.num_tx * self.num_rx * self.num_subcarriers

    def to_dict(self) -> dict:
        return {
            "carrier_freq_hz": self.carrier_freq_hz,
            "bandwidth_hz": self.bandwidth_hz,
            "num_subcarriers": self.num_subcarriers,
            "num_tx": self.num_tx,
            "num_rx": self.num_rx,
            "tx_spacing_m": self.tx_spacing_m,
            "rx_spacing_m": self.rx_spacing_m,
        }


@dataclass(frozen=True)
class ArrayGeometry:
    """Receive element coordinates ``(X, Z)`` in meters; element 0 is the origin."""

    rx_elements: tuple[tuple[float, float], ...]
    layout_tag: str = "custom"

    def __post_init__(self):
        elems = tuple((float(x), float(z)) for x, z in self.rx_elements)
        object.__setattr__(self, "rx_elements", elems)
        if not elems:
            raise ValueError("geometry needs at least one element")
        if elems[0] != (0.0, 0.0):
            raise ValueError("first element must be the reference at (0, 0)")
        if len(set(elems)) != len(elems):
            raise ValueError("duplicate element coordinates")

    @classmethod
    def l_shaped(cls, num_rx: int = 9, spacing_m: float = 0.028) -> "ArrayGeometry":
        """Corner element at the origin, one arm along +X and one along +Z.

        The X arm gets the extra element when ``num_rx - 1`` is odd.
        """
        if num_rx < 1:
            raise ValueError("num_rx must be >= 1")
        n_x = num_rx // 2
        n_z = num_rx - 1 - n_x
        elems = [(0.0, 0.0)]
        elems += [(spacing_m * i, 0.0) for i in range(1, n_x + 1)]
        elems += [(0.0, spacing_m * i) for i in range(1, n_z + 1)]
        return cls(tuple(elems), layout_tag="L")

    @classmethod
    def for_config(cls, config: RadioConfig) -> "ArrayGeometry":
        return cls.l_shaped(config.num_rx, config.rx_spacing_m)

    @property
    def num_elements(self) -> int:
        return len(self.rx_elements)

    @property
    def coords(self) -> np.ndarray:
        return np.asarray(self.rx_elements, dtype=float)

    def check(self, config: RadioConfig) -> None:
        if self.num_elements != config.num_rx:
            raise ValueError(
                f"geometry has {self.num_elements} elements, config expects {config.num_rx}"
            )

    def to_dict(self) -> dict:
        return {"rx_elements": [list(e) for e in self.rx_elements], "layout_tag": self.layout_tag}


@dataclass(frozen=True)
class Direction:
    azimuth_deg: float
    elevation_deg: float

    def __post_init__(self):
        if not 0.0 <= self.azimuth_deg <= 180.0:
            raise ValueError(f"azimuth {self.azimuth_deg} outside [0, 180]")
        if not 0.0 <= self.elevation_deg <= 180.0:
            raise ValueError(f"elevation {self.elevation_deg} outside [0, 180]")

    def unit_vector(self) -> np.ndarray:
        return direction_vector(self.azimuth_deg, self.elevation_deg)

    @classmethod
    def from_vector(cls, v) -> "Direction":
        az, el = vector_to_angles(np.asarray(v, dtype=float))
        return cls(float(az), float(el))


@dataclass(frozen=True)
class PathSignature:
    direction: Direction
    aod_deg: float = 0.0
    tof_s: float = 0.0

    def __post_init__(self):
        if self.tof_s < 0:
            raise ValueError("tof_s must be >= 0")
        if not -90.0 <= self.aod_deg <= 90.0:
            raise ValueError(f"aod {self.aod_deg} outside [-90, 90]")


def direction_vector(azimuth_deg, elevation_deg) -> np.ndarray:
    """Unit vector(s) for the given angles; broadcasts, last axis has length 3."""
    th = np.deg2rad(azimuth_deg)
    ph = np.deg2rad(elevation_deg)
    return np.stack(
        np.broadcast_arrays(np.sin(ph) * np.cos(th), np.sin(ph) * np.sin(th), np.cos(ph)),
        axis=-1,
    )


def vector_to_angles(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`direction_vector` for vectors with y >= 0 (not necessarily unit)."""
    v = np.asarray(v, dtype=float)
    r = np.linalg.norm(v, axis=-1)
    el = np.rad2deg(np.arccos(np.clip(v[..., 2] / r, -1.0, 1.0)))
    az = np.rad2deg(np.arctan2(v[..., 1], v[..., 0]))
    # y == 0 with x < 0 gives +180 already; guard the -0.0 case
    az = np.where(az < 0, az + 360.0, az)
    az = np.where(az > 180.0, 360.0 - az, az)
    return az, el


def rx_phase_matrix(config: RadioConfig, geometry: ArrayGeometry, azimuth_deg, elevation_deg) -> np.ndarray:
    """Receive phasors for every element and every direction.

    Returns shape ``(N,) + broadcast(azimuth, elevation).shape``.
    """
    xz = geometry.coords
    th = np.deg2rad(np.asarray(azimuth_deg, dtype=float))
    ph = np.deg2rad(np.asarray(elevation_deg, dtype=float))
    ux = np.sin(ph) * np.cos(th)
    uz = np.cos(ph)
    ux, uz = np.broadcast_arrays(ux, uz)
    k = 2.0 * np.pi / config.wavelength_m
    shape = (len(xz),) + (1,) * ux.ndim
    X = xz[:, 0].reshape(shape)
    Z = xz[:, 1].reshape(shape)
    return np.exp(-1j * k * (X * ux + Z * uz))


def rx_phase(config: RadioConfig, geometry: ArrayGeometry, element_index: int, direction: Direction) -> complex:
    if not 0 <= element_index < geometry.num_elements:
        raise IndexError(f"element index {element_index} out of range")
    x, z = geometry.rx_elements[element_index]
    ux, _, uz = direction.unit_vector()
    if x == 0.0 and z == 0.0:
        return 1.0 + 0.0j
    return complex(np.exp(-2j * np.pi * (x * ux + z * uz) / config.wavelength_m))


def steering_vector_2d(config: RadioConfig, geometry: ArrayGeometry, direction: Direction) -> np.ndarray:
    a = rx_phase_matrix(config, geometry, direction.azimuth_deg, direction.elevation_deg)
    return a.reshape(-1)


def tx_factors(config: RadioConfig, aod_deg) -> np.ndarray:
    """``Psi(omega)**v`` for v in range(K); shape ``(K,) + aod.shape``."""
    w = np.deg2rad(np.asarray(aod_deg, dtype=float))
    psi_phase = -2.0 * np.pi * config.tx_spacing_m * np.sin(w) / config.wavelength_m
    v = np.arange(config.num_tx).reshape((-1,) + (1,) * w.ndim)
    return np.exp(1j * v * psi_phase)


def subcarrier_indices(config: RadioConfig, stride: int = 1) -> np.ndarray:
    if stride < 1:
        raise ValueError("decimation stride must be >= 1")
    return np.arange(0, config.num_subcarriers, stride)


def subcarrier_factors(config: RadioConfig, tof_s, stride: int = 1) -> np.ndarray:
    """``Omega(tau)**k`` over the (possibly decimated) subcarrier indices."""
    tau = np.asarray(tof_s, dtype=float)
    k = subcarrier_indices(config, stride).reshape((-1,) + (1,) * tau.ndim)
    return np.exp(-2j * np.pi * config.subcarrier_spacing_hz * k * tau)


def joint_steering_vector(
    config: RadioConfig, geometry: ArrayGeometry, sig: PathSignature, stride: int = 1
) -> np.ndarray:
    """Steering vector over all tx x rx x subcarrier sensing elements."""
    psi = tx_factors(config, sig.aod_deg)
    phi = steering_vector_2d(config, geometry, sig.direction)
    omega = subcarrier_factors(config, sig.tof_s, stride)
    return (psi[:, None, None] * phi[None, :, None] * omega[None, None, :]).reshape(-1)
