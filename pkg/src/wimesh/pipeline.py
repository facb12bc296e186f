"""End-to-end orchestration: scene -> CSI -> AoA images -> body images -> fitted meshes -> metrics."""

from __future__ import annotations

import dataclasses
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .array_model import ArrayGeometry, direction_vector
from .body_model import BodyParams, mpjpe, param_loss, pve, smpl_map
from .fitter import FitConfig, FitResult, RenderConfig, fit_sequence
from .image_pipeline import (
    DEFAULT_KAPPA,
    DEFAULT_STATIC_WINDOW,
    TENSOR_FRAMES,
    InputTensor,
    aggregate_frames,
    body_images,
)
from .music import IMAGE_SIZE, AoaImage, MusicOptions, SearchConfig, estimate_frame, frame_windows
from .sanitizer import sanitize_trace
from .scenes import PELVIS_HEIGHT_M, SceneDescription, SceneFormatError, scene_from_dict
from .simulator import DEFAULT_FRAME_RATE_HZ, CsiTrace, ImpairmentSpec, simulate_receiver

PIPELINE_FIT_DEFAULTS = {
    "max_iters": 10, "pose_prior_weight": 0.05, "shape_prior_weight": 0.1, "smoothness_weight": 0.05,
}
SEARCH_MODES = {"exhaustive": "exhaustive", "coarse": "coarse_to_fine", "coarse_to_fine": "coarse_to_fine"}


def demo_scene_path() -> Path:
    return Path(str(resources.files("wimesh") / "data" / "demo.json"))


def _build(cls, data: dict | None, what: str):
    data = dict(data or {})
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(data) - names
    if unknown:
        raise SceneFormatError(f"unknown {what} keys: {sorted(unknown)}")
    for k, v in data.items():
        if isinstance(v, list):
            data[k] = tuple(v)
    try:
        return cls(**data)
    except (TypeError, ValueError) as exc:
        raise SceneFormatError(f"bad {what} settings: {exc}") from exc


@dataclass
class PipelineConfig:
    scene: SceneDescription
    seed: int = 0
    search: str = "coarse"
    receivers: int = 2
    frames: int | None = None
    snr_db: float | None = None
    static_window: int = DEFAULT_STATIC_WINDOW
    kappa: float = DEFAULT_KAPPA
    tensor_frames: int = TENSOR_FRAMES
    los_mask_deg: float = 10.0  # zero this cone around the known direct path before fitting; 0 disables
    music: MusicOptions = field(default_factory=MusicOptions)
    fit: FitConfig = field(default_factory=lambda: FitConfig(**PIPELINE_FIT_DEFAULTS))
    render: RenderConfig = field(default_factory=RenderConfig)
    source: dict = field(default_factory=dict)  # the raw description, echoed in reports

    def __post_init__(self):
        if self.search not in SEARCH_MODES:
            raise SceneFormatError(f"search must be exhaustive or coarse, got {self.search!r}")
        if self.receivers not in (1, 2):
            raise SceneFormatError("receivers must be 1 or 2")
        if self.receivers > len(self.scene.scene.rx_poses):
            raise SceneFormatError(f"scene has only {len(self.scene.scene.rx_poses)} receiver(s)")
        if self.static_window < 2:
            raise SceneFormatError("static_window must be >= 2")
        if self.tensor_frames < 1:
            raise SceneFormatError("tensor_frames must be >= 1")
        if self.num_frames < max(2, self.tensor_frames):
            raise SceneFormatError(f"need at least {max(2, self.tensor_frames)} frames, scene has {self.num_frames}")

    @property
    def num_frames(self) -> int:
        available = self.scene.scene.num_frames
        return available if self.frames is None else min(self.frames, available)

    @property
    def impairments(self) -> ImpairmentSpec:
        imp = self.scene.impairments
        snr = imp.snr_db if self.snr_db is None else self.snr_db
        return dataclasses.replace(imp, snr_db=snr, seed=self.seed)

    @property
    def search_config(self) -> SearchConfig:
        return SearchConfig(mode=SEARCH_MODES[self.search])

    def echo(self) -> dict:
        """Everything that determines the outputs, in JSON-ready form."""
        return {
            "scene": self.source,
            "seed": self.seed,
            "search": self.search,
            "receivers": self.receivers,
            "frames": self.num_frames,
            "snr_db": self.impairments.snr_db,
            "static_window": self.static_window,
            "kappa": self.kappa,
            "tensor_frames": self.tensor_frames,
            "los_mask_deg": self.los_mask_deg,
            "music": dataclasses.asdict(self.music),
            "fit": dataclasses.asdict(self.fit),
            "render": dataclasses.asdict(self.render),
        }

    @classmethod
    def from_dict(cls, data: dict, **overrides) -> "PipelineConfig":
        """A scene description with optional ``pipeline``/``music``/``fit``/``render`` sections."""
        if not isinstance(data, dict):
            raise SceneFormatError("config must be a JSON object")
        scene = scene_from_dict(data)
        pipe = dict(data.get("pipeline", {}) or {})
        pipe.update({k: v for k, v in overrides.items() if v is not None})
        allowed = {"seed", "search", "receivers", "frames", "snr_db", "static_window", "kappa", "tensor_frames",
                   "los_mask_deg"}
        unknown = set(pipe) - allowed
        if unknown:
            raise SceneFormatError(f"unknown pipeline keys: {sorted(unknown)}")
        pipe.setdefault("seed", scene.seed)
        return cls(
            scene=scene,
            music=_build(MusicOptions, data.get("music"), "music"),
            fit=_build(FitConfig, {**PIPELINE_FIT_DEFAULTS, **(data.get("fit") or {})}, "fit"),
            render=_build(RenderConfig, data.get("render"), "render"),
            source=data,
            **pipe,
        )


@dataclass
class MetricsReport:
    pve_cm: list[float]
    mpjpe_cm: list[float]
    loss_pose: float
    loss_shape: float
    loss_total: float
    runtime_s: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def mean_pve_cm(self) -> float:
        return float(np.mean(self.pve_cm)) if self.pve_cm else 0.0

    @property
    def mean_mpjpe_cm(self) -> float:
        return float(np.mean(self.mpjpe_cm)) if self.mpjpe_cm else 0.0

    def to_dict(self, include_runtime: bool = False) -> dict:
        out = {
            "per_frame": {"pve_cm": self.pve_cm, "mpjpe_cm": self.mpjpe_cm},
            "mean_pve_cm": self.mean_pve_cm,
            "mean_mpjpe_cm": self.mean_mpjpe_cm,
            "loss": {"pose": self.loss_pose, "shape": self.loss_shape, "total": self.loss_total},
            "config": self.config,
        }
        if include_runtime:
            out["runtime_s"] = self.runtime_s
        return out


def evaluate(pred: list[BodyParams], truth: list[BodyParams], config: dict | None = None) -> MetricsReport:
    if len(pred) != len(truth):
        raise ValueError("prediction and ground truth differ in length")
    pves, mpjpes = [], []
    for p, g in zip(pred, truth):
        mp = smpl_map(p.beta, p.gamma, p.translation)
        mg = smpl_map(g.beta, g.gamma, g.translation)
        pves.append(pve(mp, mg))
        mpjpes.append(mpjpe(mp.joints, mg.joints))
    lp, ls, lt = param_loss(pred, truth) if pred else (0.0, 0.0, 0.0)
    return MetricsReport(pves, mpjpes, lp, ls, lt, config=config or {})


# -- stages ---------------------------------------------------------------


def simulate(cfg: PipelineConfig) -> list[CsiTrace]:
    desc = cfg.scene
    geo = ArrayGeometry.for_config(desc.radio)
    return [
        simulate_receiver(desc.scene, r, desc.radio, cfg.impairments, desc.packets_per_frame, cfg.num_frames, geo)
        for r in range(cfg.receivers)
    ]


def sanitize(traces: list[CsiTrace]) -> list[CsiTrace]:
    out = []
    for tr in traces:
        clean, _ = sanitize_trace(tr.csi, tr.config.subcarrier_spacing_hz)
        out.append(CsiTrace(clean, tr.timestamps_ns, tr.config, tr.receiver_index))
    return out


def estimate(cfg: PipelineConfig, traces: list[CsiTrace]) -> list[list[AoaImage]]:
    out = []
    for tr in traces:
        geo = ArrayGeometry.for_config(tr.config)
        frames = []
        for f, sl in enumerate(frame_windows(len(tr), cfg.scene.packets_per_frame)):
            frames.append(estimate_frame(tr.csi[sl], tr.config, geo, cfg.search_config, cfg.music,
                                         frame_index=f, receiver_index=tr.receiver_index))
        out.append(frames)
    return out


def los_mask(cfg: PipelineConfig, receiver: int) -> np.ndarray:
    """True for pixels within ``los_mask_deg`` of the transmitter as seen from a receiver."""
    rx = cfg.scene.scene.rx_poses[receiver]
    local = rx.to_local(np.asarray(cfg.scene.scene.tx_pose.position, dtype=float)[None, :])[0]
    u = local / np.linalg.norm(local)
    el, az = np.indices((IMAGE_SIZE, IMAGE_SIZE))
    cosang = direction_vector(az, el) @ u
    return cosang >= np.cos(np.deg2rad(cfg.los_mask_deg))


@dataclass
class Extraction:
    tensor: InputTensor
    composite: np.ndarray  # (2, 180, 180), max over the tensor's frames
    frame_ids: list[int]
    body: list[np.ndarray]  # per receiver, (frames, 180, 180) thresholded residuals before masking


def extract(cfg: PipelineConfig, images) -> Extraction:
    """Body images for the last ``tensor_frames`` frames; a missing receiver stays empty.

    ``images[r]`` is receiver ``r``'s frame sequence (AoA images or plain arrays).
    """
    t = cfg.tensor_frames
    if any(len(frames) < max(t, 2) for frames in images):
        raise ValueError(f"need at least {max(t, 2)} frames per receiver")
    per_rx, stacks = [], []
    for r, frames in enumerate(images):
        body = np.stack([b.values for b in body_images(list(frames), cfg.static_window, cfg.kappa)])
        stacks.append(body)
        vals = body[-t:]
        if cfg.los_mask_deg > 0:
            vals = vals * ~los_mask(cfg, r)
        per_rx.append(list(vals))
    while len(per_rx) < 2:
        per_rx.append([np.zeros((IMAGE_SIZE, IMAGE_SIZE))] * t)
    first = len(images[0]) - t
    frame_ids = list(range(first, first + t))
    tensor, composite = aggregate_frames(per_rx, np.asarray(frame_ids, dtype=float) / DEFAULT_FRAME_RATE_HZ,
                                         frames=t)
    return Extraction(tensor, composite, frame_ids, stacks)


def triangulate(composite: np.ndarray, cfg: PipelineConfig) -> np.ndarray:
    """Body position from the intensity centroids of the composite images (feet on the floor)."""
    rays = []
    for r in range(cfg.receivers):
        img = composite[r]
        if img.sum() <= 0:
            continue
        el, az = np.indices(img.shape)
        w = img / img.sum()
        d = direction_vector(float((az * w).sum()), float((el * w).sum()))
        rx = cfg.scene.scene.rx_poses[r]
        rays.append((np.asarray(rx.position), rx.rotation @ d))
    if not rays:
        centre = np.zeros(3)
    elif len(rays) == 1:
        centre = rays[0][0] + 2.5 * rays[0][1]
    else:
        (p0, d0), (p1, d1) = rays[:2]
        a = np.array([[d0 @ d0, -d0 @ d1], [d0 @ d1, -d1 @ d1]])
        b = np.array([(p1 - p0) @ d0, (p1 - p0) @ d1])
        try:
            s, u = np.linalg.solve(a, b)
        except np.linalg.LinAlgError:
            s, u = 2.5, 2.5
        centre = 0.5 * ((p0 + s * d0) + (p1 + u * d1))
    return np.array([centre[0], centre[1], PELVIS_HEIGHT_M])


def fit(cfg: PipelineConfig, tensor: InputTensor, composite: np.ndarray) -> FitResult:
    rx = cfg.scene.scene.rx_poses[: cfg.receivers]
    observed = tensor.data[:, : cfg.receivers]
    start = triangulate(composite, cfg)
    init = [BodyParams(translation=start) for _ in range(observed.shape[0])]
    return fit_sequence(observed, rx, cfg.scene.scene.tx_pose.position, cfg.fit, cfg.render, init=init)


@dataclass
class PipelineRun:
    traces: list[CsiTrace]
    images: list[list[AoaImage]]
    tensor: InputTensor
    composite: np.ndarray
    frame_ids: list[int]
    fit: FitResult
    truth: list[BodyParams]
    metrics: MetricsReport


def run_pipeline(cfg: PipelineConfig) -> PipelineRun:
    times = {}
    t0 = time.perf_counter()
    traces = simulate(cfg)
    times["simulate"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    clean = sanitize(traces)
    times["sanitize"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    images = estimate(cfg, clean)
    times["estimate"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    ext = extract(cfg, images)
    tensor, composite, frame_ids = ext.tensor, ext.composite, ext.frame_ids
    times["extract"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    result = fit(cfg, tensor, composite)
    times["fit"] = time.perf_counter() - t0
    truth = [cfg.scene.body_params[i] for i in frame_ids] if cfg.scene.body_params else []
    t0 = time.perf_counter()
    metrics = evaluate(result.params_seq, truth, cfg.echo()) if truth else MetricsReport([], [], 0.0, 0.0, 0.0,
                                                                                           config=cfg.echo())
    times["eval"] = time.perf_counter() - t0
    metrics.runtime_s = times
    return PipelineRun(traces, images, tensor, composite, frame_ids, result, truth, metrics)
