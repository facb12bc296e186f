"""Scene descriptions: a JSON-friendly schema, a walking-motion generator and the demo room.

Schema (all lengths in meters, angles in degrees)::

    {
      "radio": {RadioConfig fields, optional},
      "tx": {"position": [x, y, z], "yaw_deg": 0},
      "receivers": [{"position": [...], "yaw_deg": 0}, ...],
      "include_los": true,
      "static_reflectors": [{"position": [...], "reflectivity": 0.8,
                             "normal": [...] (optional)}, ...],
      "walls": [{"point": [...], "normal": [...], "reflectivity": 0.5}, ...],
      "second_bounce": false,
      "specular_exponent": 4,
      "body_attenuation": 1.0,
      "body": {"samples_per_frame": 400, "reflectivity": 1.0,
               "frames": [{"beta": [10], "gamma": [72], "translation": [3]}, ...]},
      "impairments": {"sto_slope_std_s": 2e-8, "common_phase": true, "snr_db": 20},
      "packets_per_frame": 33,
      "seed": 0
    }

Only ``tx`` and ``receivers`` are required.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .array_model import RadioConfig
from .body_model import NUM_BETAS, NUM_POSE, BodyParams
from .simulator import ImpairmentSpec, Pose, Scene, ScattererSet, Wall, animate_body

PELVIS_HEIGHT_M = 0.93  # pelvis height that puts the template's soles on z = 0


class SceneFormatError(ValueError):
    """Raised for scene descriptions that do not follow the schema."""


@dataclass
class SceneDescription:
    scene: Scene
    radio: RadioConfig = field(default_factory=RadioConfig)
    body_params: list[BodyParams] = field(default_factory=list)
    impairments: ImpairmentSpec = field(default_factory=ImpairmentSpec)
    packets_per_frame: int = 33
    samples_per_frame: int = 400
    body_reflectivity: float = 1.0
    seed: int = 0

    def with_body(self, params: list[BodyParams]) -> "SceneDescription":
        frames = animate_body(params, self.samples_per_frame, self.seed, self.body_reflectivity) if params else []
        sc = self.scene
        scene = Scene(sc.tx_pose, sc.rx_poses, sc.static_reflectors, frames, sc.include_los, sc.walls,
                      sc.second_bounce, sc.specular_exponent, sc.body_attenuation)
        return SceneDescription(scene, self.radio, list(params), self.impairments, self.packets_per_frame,
                                self.samples_per_frame, self.body_reflectivity, self.seed)


def walking_sequence(num_frames: int, start=(0.0, 3.0), end=(0.0, 2.2), beta=None,
                     stride_hz: float = 1.0, frame_rate_hz: float = 30.0,
                     swing_rad: float = 0.45) -> list[BodyParams]:
    """A body facing the receivers (-y) walking in a straight line with arm and leg swing."""
    beta = np.zeros(NUM_BETAS) if beta is None else np.asarray(beta, dtype=float)
    out = []
    for f in range(num_frames):
        a = f / max(num_frames - 1, 1)
        phase = 2.0 * np.pi * stride_hz * f / frame_rate_hz
        s = np.sin(phase)
        g = np.zeros((NUM_POSE // 3, 3))
        g[1, 0] = -swing_rad * s  # hips
        g[2, 0] = swing_rad * s
        g[4, 0] = 0.5 * swing_rad * (1 + s)  # knees bend on the back swing
        g[5, 0] = 0.5 * swing_rad * (1 - s)
        g[16] = (0.6 * swing_rad * s, 1.2, 0.0)  # arms down, swinging against the legs
        g[17] = (-0.6 * swing_rad * s, -1.2, 0.0)
        xy = (1 - a) * np.asarray(start, dtype=float) + a * np.asarray(end, dtype=float)
        out.append(BodyParams(beta.copy(), g.reshape(-1), (xy[0], xy[1], PELVIS_HEIGHT_M)))
    return out


def standing_params(position=(0.0, 2.5), beta=None) -> BodyParams:
    """Arms lowered, feet on the floor."""
    g = np.zeros((NUM_POSE // 3, 3))
    g[16] = (0.0, 1.2, 0.0)
    g[17] = (0.0, -1.2, 0.0)
    beta = np.zeros(NUM_BETAS) if beta is None else np.asarray(beta, dtype=float)
    return BodyParams(beta, g.reshape(-1), (position[0], position[1], PELVIS_HEIGHT_M))


def demo_scene_dict(num_frames: int = 30) -> dict:
    """A small room: one transmitter between two receivers, furniture, a back wall."""
    params = walking_sequence(num_frames)
    return {
        "radio": RadioConfig().to_dict(),
        "tx": {"position": [0.0, 0.3, 1.0], "yaw_deg": 0.0},
        "receivers": [
            {"position": [-1.0, 0.0, 1.0], "yaw_deg": 0.0},
            {"position": [1.0, 0.0, 1.0], "yaw_deg": 0.0},
        ],
        "include_los": True,
        "static_reflectors": [
            {"position": [-1.8, 3.2, 0.8], "reflectivity": 0.8},
            {"position": [1.9, 2.6, 1.6], "reflectivity": 0.6},
            {"position": [0.9, 4.0, 0.4], "reflectivity": 0.7},
            {"position": [-0.6, 1.4, 2.4], "reflectivity": 0.5},
        ],
        "walls": [{"point": [0.0, 4.5, 0.0], "normal": [0.0, -1.0, 0.0], "reflectivity": 0.5}],
        "second_bounce": True,
        "specular_exponent": 4.0,
        "body_attenuation": 1.0,
        "body": {
            "samples_per_frame": 400,
            "reflectivity": 1.0,
            "frames": [params_to_dict(p) for p in params],
        },
        "impairments": {"sto_slope_std_s": 20e-9, "common_phase": True, "snr_db": 20.0},
        "packets_per_frame": 33,
        "seed": 0,
    }


def params_to_dict(p: BodyParams) -> dict:
    return {"beta": [float(v) for v in p.beta], "gamma": [float(v) for v in p.gamma],
            "translation": [float(v) for v in p.translation]}


def params_from_dict(d: dict) -> BodyParams:
    try:
        return BodyParams(d.get("beta", np.zeros(NUM_BETAS)), d.get("gamma", np.zeros(NUM_POSE)),
                          d.get("translation", (0.0, 0.0, 0.0)))
    except (TypeError, ValueError) as exc:
        raise SceneFormatError(f"bad body parameters: {exc}") from exc


def _pose(d, what: str) -> Pose:
    if not isinstance(d, dict) or "position" not in d:
        raise SceneFormatError(f"{what} needs a position")
    pos = d["position"]
    if len(pos) != 3:
        raise SceneFormatError(f"{what} position needs 3 coordinates")
    return Pose(tuple(pos), float(d.get("yaw_deg", 0.0)))


def scene_from_dict(d: dict) -> SceneDescription:
    if not isinstance(d, dict):
        raise SceneFormatError("scene description must be an object")
    for key in ("tx", "receivers"):
        if key not in d:
            raise SceneFormatError(f"missing key '{key}'")
    try:
        radio = RadioConfig(**d.get("radio", {}))
        tx = _pose(d["tx"], "tx")
        rxs = [_pose(r, f"receiver {i}") for i, r in enumerate(d["receivers"])]
        refl = d.get("static_reflectors", [])
        if refl:
            normals = None
            if any("normal" in r for r in refl):
                normals = [r.get("normal", [0.0, 0.0, 0.0]) for r in refl]
            static = ScattererSet([r["position"] for r in refl], [r.get("reflectivity", 1.0) for r in refl], normals)
        else:
            static = ScattererSet.empty()
        walls = [Wall(tuple(w["point"]), tuple(w["normal"]), float(w.get("reflectivity", 0.5)))
                 for w in d.get("walls", [])]
        imp = ImpairmentSpec(**d.get("impairments", {}), seed=int(d.get("seed", 0))) \
            if "seed" not in d.get("impairments", {}) else ImpairmentSpec(**d["impairments"])
        scene = Scene(tx, rxs, static, [], bool(d.get("include_los", True)), walls,
                      bool(d.get("second_bounce", False)), float(d.get("specular_exponent", 4.0)),
                      float(d.get("body_attenuation", 1.0)))
        body = d.get("body", {}) or {}
        desc = SceneDescription(
            scene, radio, [], imp, int(d.get("packets_per_frame", 33)),
            int(body.get("samples_per_frame", 400)), float(body.get("reflectivity", 1.0)), int(d.get("seed", 0)),
        )
    except SceneFormatError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise SceneFormatError(f"malformed scene: {exc}") from exc
    if desc.packets_per_frame < 1 or desc.samples_per_frame < 1:
        raise SceneFormatError("packets_per_frame and samples_per_frame must be >= 1")
    params = [params_from_dict(f) for f in body.get("frames", [])]
    return desc.with_body(params)
