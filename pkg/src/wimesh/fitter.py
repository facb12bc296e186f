"""Model-based body fitting against AoA image windows.

Candidate bodies are rendered into predicted AoA images: every surface
sample is projected into the receiver frame and splatted as a Gaussian blob
weighted by the same specular cosine lobe the simulator uses.  The fitter
minimizes

    sum over frames and receivers of (1 - NCC(render, observed))
    + w_prior * sum_t |gamma_t|_1 + w_smooth * sum_t |gamma_t - gamma_{t-1}|_1
    (+ optionally w_shape * |beta|_1)

by block coordinate descent (translation, then pose, then shape) with central
finite-difference gradients and a backtracking step.  Shape is shared across
the window; pose and translation are per frame.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.ndimage import gaussian_filter

from .array_model import vector_to_angles
from .body_model import (
    DEFAULT_MODEL,
    NUM_BETAS,
    NUM_JOINTS,
    BodyModel,
    BodyMesh,
    BodyParams,
    sample_surface,
    smpl_map,
    surface_samples,
)
from .music import IMAGE_SIZE
from .simulator import Pose

# joints whose rotations the fitter adjusts by default
MAJOR_JOINTS = (0, 1, 2, 3, 4, 5, 6, 9, 12, 16, 17, 18, 19)
BLOB_RADIUS = 5.0


@dataclass(frozen=True)
class RenderConfig:
    samples: int = 400
    blob_sigma_deg: float = 2.0
    specular_exponent: float = 4.0
    normalize: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.samples < 1:
            raise ValueError("samples must be >= 1")
        if not self.blob_sigma_deg > 0:
            raise ValueError("blob_sigma_deg must be > 0")


@dataclass(frozen=True)
class FitConfig:
    max_iters: int = 30
    fd_step: float = 1e-3
    pose_prior_weight: float = 0.0
    smoothness_weight: float = 0.0
    shape_prior_weight: float = 0.0  # on |beta|_1, counted once per window
    seed: int = 0
    init_mode: str = "template"  # or "previous_window"
    objective_mode: str = "per_frame"  # or "composite"
    active_joints: tuple[int, ...] = MAJOR_JOINTS
    translation_step: float = 0.05  # initial trial step sizes per block
    pose_step: float = 0.2
    shape_step: float = 0.5
    min_step: float = 1e-3  # relative to the initial step
    tol: float = 1e-6
    sigma_schedule: tuple[float, ...] = (6.0, 4.0, 2.0)  # coarse-to-fine blob widths

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        for name in ("fd_step", "translation_step", "pose_step", "shape_step", "min_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.init_mode not in ("template", "previous_window"):
            raise ValueError(f"unknown init_mode {self.init_mode!r}")
        if self.objective_mode not in ("per_frame", "composite"):
            raise ValueError(f"unknown objective_mode {self.objective_mode!r}")
        if any(not 0 <= j < NUM_JOINTS for j in self.active_joints):
            raise ValueError("active joint index out of range")


@dataclass
class FitResult:
    params_seq: list[BodyParams]
    objective_trace: list[float]
    converged: bool
    iterations: int = 0
    evaluations: int = 0


@dataclass
class RenderedImage:
    values: np.ndarray
    empty: bool = False


def _gauss_rows(centers: np.ndarray, sigma: float, lo: int = 0, hi: int = IMAGE_SIZE) -> np.ndarray:
    axis = np.arange(lo, hi, dtype=float)
    return np.exp(-0.5 * ((axis[:, None] - centers[None, :]) / sigma) ** 2)


def _span(values: np.ndarray, pad: float) -> tuple[int, int]:
    lo = int(np.clip(np.floor(values.min() - pad), 0, IMAGE_SIZE))
    hi = int(np.clip(np.ceil(values.max() + pad) + 1, lo, IMAGE_SIZE))
    return lo, hi


def render_points(pos: np.ndarray, normals: np.ndarray, rx: Pose, tx_position=None,
                  config: RenderConfig = RenderConfig()) -> RenderedImage:
    """Splat oriented points into a (elevation, azimuth) image."""
    local = rx.to_local(pos)
    front = local[:, 1] > 0
    if not np.any(front):
        return RenderedImage(np.zeros((IMAGE_SIZE, IMAGE_SIZE)), True)
    pos, normals, local = pos[front], normals[front], local[front]
    az, el = vector_to_angles(local)
    rx_pos = np.asarray(rx.position, dtype=float)
    tx_pos = rx_pos if tx_position is None else np.asarray(tx_position, dtype=float)
    to_tx = tx_pos - pos
    to_rx = rx_pos - pos
    bis = to_tx / np.linalg.norm(to_tx, axis=1, keepdims=True) + to_rx / np.linalg.norm(to_rx, axis=1, keepdims=True)
    bis /= np.maximum(np.linalg.norm(bis, axis=1, keepdims=True), 1e-12)
    w = np.maximum(np.einsum("ij,ij->i", normals, bis), 0.0) ** config.specular_exponent
    img = np.zeros((IMAGE_SIZE, IMAGE_SIZE))
    lit = w > 0
    if not np.any(lit):
        return RenderedImage(img, True)
    el, az, w = el[lit], az[lit], w[lit]
    # blobs are truncated BLOB_RADIUS sigmas beyond the lit point cloud
    pad = BLOB_RADIUS * config.blob_sigma_deg
    e0, e1 = _span(el, pad)
    a0, a1 = _span(az, pad)
    img[e0:e1, a0:a1] = (_gauss_rows(el, config.blob_sigma_deg, e0, e1) * w) @ \
        _gauss_rows(az, config.blob_sigma_deg, a0, a1).T
    if config.normalize:
        norm = np.linalg.norm(img)
        if norm > 0:
            img = img / norm
    return RenderedImage(img, False)


def render_aoa(mesh: BodyMesh, rx: Pose, config: RenderConfig = RenderConfig(), tx_position=None,
               model: BodyModel | None = None) -> RenderedImage:
    """Predicted AoA image of ``mesh`` at receiver ``rx`` (monostatic if no tx given)."""
    samples = surface_samples(config.samples, config.seed, model or DEFAULT_MODEL)
    pos, normals = sample_surface(mesh, samples)
    return render_points(pos, normals, rx, tx_position, config)


def ncc(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity of two nonnegative images; 0 if either is empty."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 0.0
    return float(np.sum(a * b) / (na * nb))


def _workers() -> int:
    try:
        return max(1, int(os.environ.get("WIMESH_THREADS", "1")))
    except ValueError:
        return 1


class Objective:
    """Image-plus-prior objective for one window, with per-frame data terms.

    ``observed`` is ``(T, R, 180, 180)``; ``rx_poses`` has one pose per receiver.
    """

    def __init__(self, observed: np.ndarray, rx_poses: Sequence[Pose], tx_position, fit: FitConfig,
                 render: RenderConfig = RenderConfig(), model: BodyModel | None = None):
        observed = np.asarray(observed, dtype=float)
        if observed.ndim != 4 or observed.shape[1] != len(rx_poses):
            raise ValueError("observed must be (T, R, H, W) with one pose per receiver")
        self.observed = observed
        self.rx_poses = list(rx_poses)
        self.tx_position = None if tx_position is None else np.asarray(tx_position, dtype=float)
        self.fit = fit
        self.render = render
        self.model = model or DEFAULT_MODEL
        self.samples = surface_samples(render.samples, render.seed, self.model)
        self.evaluations = 0
        if fit.objective_mode == "composite":
            self._composite = observed.max(axis=0)

    @property
    def num_frames(self) -> int:
        return self.observed.shape[0]

    def renders(self, p: BodyParams) -> list[np.ndarray]:
        self.evaluations += 1
        mesh = smpl_map(np.clip(p.beta, -3.0, 3.0), p.gamma, p.translation, self.model)
        pos, normals = sample_surface(mesh, self.samples)
        return [render_points(pos, normals, rx, self.tx_position, self.render).values for rx in self.rx_poses]

    def frame_term(self, t: int, p: BodyParams) -> float:
        imgs = self.renders(p)
        return float(sum(max(0.0, 1.0 - ncc(img, self.observed[t, r])) for r, img in enumerate(imgs)))

    def prior(self, params: Sequence[BodyParams]) -> float:
        f = self.fit
        val = 0.0
        if f.pose_prior_weight:
            val += f.pose_prior_weight * sum(float(np.abs(p.gamma).sum()) for p in params)
        if f.shape_prior_weight and params:
            val += f.shape_prior_weight * float(np.abs(params[0].beta).sum())
        if f.smoothness_weight:
            val += f.smoothness_weight * sum(
                float(np.abs(params[t].gamma - params[t - 1].gamma).sum()) for t in range(1, len(params))
            )
        return val

    def data_terms(self, params: Sequence[BodyParams]) -> np.ndarray:
        if self.fit.objective_mode == "composite":
            stacks = [self.renders(p) for p in params]
            out = np.zeros(len(params))
            for r in range(len(self.rx_poses)):
                comp = np.max([s[r] for s in stacks], axis=0)
                out[0] += max(0.0, 1.0 - ncc(comp, self._composite[r]))
            return out
        return np.array([self.frame_term(t, p) for t, p in enumerate(params)])

    def __call__(self, params: Sequence[BodyParams]) -> float:
        if len(params) != self.num_frames:
            raise ValueError(f"need {self.num_frames} parameter sets")
        return float(self.data_terms(params).sum() + self.prior(params))


def objective(params: Sequence[BodyParams], observed, rx_poses: Sequence[Pose], fit: FitConfig = FitConfig(),
              render: RenderConfig = RenderConfig(), tx_position=None) -> float:
    return Objective(observed, rx_poses, tx_position, fit, render)(params)


# -- optimizer ------------------------------------------------------------


def _pack(params: Sequence[BodyParams], joints: Sequence[int]):
    idx = np.concatenate([np.arange(3 * j, 3 * j + 3) for j in joints]) if joints else np.zeros(0, int)
    trans = np.stack([p.translation for p in params])
    gam = np.stack([p.gamma[idx] for p in params])
    return trans, gam, params[0].beta.copy(), idx


def _unpack(base: Sequence[BodyParams], trans, gam, beta, idx) -> list[BodyParams]:
    out = []
    for t, p in enumerate(base):
        g = p.gamma.copy()
        g[idx] = gam[t]
        out.append(BodyParams(beta.copy(), g, trans[t].copy()))
    return out


class _Problem:
    """State for block descent; caches per-frame data terms of the current point."""

    def __init__(self, obj: Objective, params: Sequence[BodyParams], fit: FitConfig):
        self.obj = obj
        self.fit = fit
        self.base = [p.copy() for p in params]
        self.trans, self.gam, self.beta, self.idx = _pack(self.base, fit.active_joints)
        self.terms = obj.data_terms(self.current())
        self.value = float(self.terms.sum() + obj.prior(self.current()))
        if not math.isfinite(self.value):
            raise FloatingPointError("objective is not finite at the initial point")

    def current(self, trans=None, gam=None, beta=None) -> list[BodyParams]:
        return _unpack(self.base, self.trans if trans is None else trans, self.gam if gam is None else gam,
                       self.beta if beta is None else beta, self.idx)

    def evaluate(self, trans=None, gam=None, beta=None) -> tuple[float, np.ndarray]:
        params = self.current(trans, gam, beta)
        terms = self.obj.data_terms(params)
        return float(terms.sum() + self.obj.prior(params)), terms

    def frame_delta(self, t: int, trans_t=None, gam_t=None) -> float:
        """Objective change from editing only frame ``t`` (per-frame mode)."""
        trans = self.trans if trans_t is None else self.trans.copy()
        gam = self.gam if gam_t is None else self.gam.copy()
        if trans_t is not None:
            trans[t] = trans_t
        if gam_t is not None:
            gam[t] = gam_t
        params = self.current(trans, gam)
        new_term = self.obj.frame_term(t, params[t])
        return new_term - self.terms[t] + self.obj.prior(params) - self.obj.prior(self.current())

    # central differences --------------------------------------------------

    def _probe_list(self, block: str):
        h = self.fit.fd_step
        if block == "beta":
            return [(block, None, i, s * h) for i in range(NUM_BETAS) for s in (1, -1)]
        arr = self.trans if block == "trans" else self.gam
        return [(block, t, i, s * h) for t in range(arr.shape[0]) for i in range(arr.shape[1]) for s in (1, -1)]

    def _probe(self, item) -> float:
        block, t, i, d = item
        per_frame = self.fit.objective_mode == "per_frame"
        if block == "beta" or not per_frame:
            trans, gam, beta = self.trans.copy(), self.gam.copy(), self.beta.copy()
            if block == "beta":
                beta[i] += d
            elif block == "trans":
                trans[t, i] += d
            else:
                gam[t, i] += d
            return self.evaluate(trans, gam, beta)[0] - self.value
        row = (self.trans if block == "trans" else self.gam)[t].copy()
        row[i] += d
        return self.frame_delta(t, trans_t=row) if block == "trans" else self.frame_delta(t, gam_t=row)

    def gradient(self, block: str) -> np.ndarray:
        probes = self._probe_list(block)
        workers = _workers()
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                vals = list(pool.map(self._probe, probes))
        else:
            vals = [self._probe(p) for p in probes]
        vals = np.asarray(vals).reshape(-1, 2)
        g = (vals[:, 0] - vals[:, 1]) / (2.0 * self.fit.fd_step)
        shape = {"beta": self.beta.shape, "trans": self.trans.shape, "gam": self.gam.shape}[block]
        return g.reshape(shape)

    def try_step(self, block: str, direction: np.ndarray, step: float) -> bool:
        trans, gam, beta = self.trans, self.gam, self.beta
        if block == "trans":
            trans = trans - step * direction
        elif block == "gam":
            gam = gam - step * direction
        else:
            beta = np.clip(beta - step * direction, -3.0, 3.0)
        val, terms = self.evaluate(trans, gam, beta)
        if not math.isfinite(val):
            raise FloatingPointError(f"objective became non-finite in the {block} block")
        if val < self.value:
            self.trans, self.gam, self.beta, self.terms, self.value = trans, gam, beta, terms, val
            return True
        return False


def _descend_block(prob: _Problem, block: str, step: float, min_step: float, trace: list[float]) -> tuple[bool, float]:
    g = prob.gradient(block)
    norm = float(np.max(np.abs(g))) if g.size else 0.0
    if norm == 0.0:
        return False, step
    direction = g / norm  # unit max-norm: ``step`` is the largest single-coordinate move
    while step >= min_step:
        if prob.try_step(block, direction, step):
            trace.append(prob.value)
            return True, step * 1.5
        step *= 0.5
    return False, max(step, min_step)


def fit_sequence(observed, rx_poses: Sequence[Pose], tx_position=None, fit: FitConfig = FitConfig(),
                 render: RenderConfig = RenderConfig(), init: Sequence[BodyParams] | None = None,
                 fit_shape: bool = True) -> FitResult:
    """Fit one window of observations; returns per-frame parameters with shared shape."""
    observed = np.asarray(observed, dtype=float)
    n_frames = observed.shape[0]
    if init is None:
        if fit.init_mode == "previous_window":
            raise ValueError("previous_window init needs the previous window's parameters")
        init = [BodyParams() for _ in range(n_frames)]
    if len(init) != n_frames:
        raise ValueError(f"init needs {n_frames} parameter sets")
    beta0 = init[0].beta
    params = [BodyParams(beta0.copy(), p.gamma.copy(), p.translation.copy()) for p in init]

    blocks = ["trans", "gam"] + (["beta"] if fit_shape else [])
    initial_steps = {"trans": fit.translation_step, "gam": fit.pose_step, "beta": fit.shape_step}
    final_obj = Objective(observed, rx_poses, tx_position, fit, render)
    prob = _Problem(final_obj, params, fit)
    trace = [prob.value]
    if prob.value <= fit.tol:
        return FitResult(prob.current(), trace, True, 0, final_obj.evaluations)

    # coarse stages: wider blobs on both sides; kept only if the final objective improves
    evaluations = 0
    for sigma in [s for s in fit.sigma_schedule if s > render.blob_sigma_deg]:
        extra = math.sqrt(sigma ** 2 - render.blob_sigma_deg ** 2)
        blurred = gaussian_filter(observed, sigma=(0, 0, extra, extra), mode="constant")
        rc = RenderConfig(render.samples, sigma, render.specular_exponent, render.normalize, render.seed)
        obj = Objective(blurred, rx_poses, tx_position, fit, rc)
        stage = _Problem(obj, prob.current(), fit)
        steps = dict(initial_steps)
        for _ in range(max(1, fit.max_iters // 4)):
            before = stage.value
            moved = False
            for b in blocks:
                ok, steps[b] = _descend_block(stage, b, steps[b], fit.min_step * initial_steps[b], [])
                moved |= ok
            if not moved or before - stage.value <= fit.tol * max(1.0, before):
                break
        evaluations += obj.evaluations
        candidate = _Problem(final_obj, stage.current(), fit)
        if candidate.value < prob.value:
            prob = candidate
            trace.append(prob.value)

    steps = dict(initial_steps)
    iters = 0
    converged = False
    for _ in range(fit.max_iters):
        iters += 1
        before = prob.value
        moved = False
        for b in blocks:
            ok, steps[b] = _descend_block(prob, b, steps[b], fit.min_step * initial_steps[b], trace)
            moved |= ok
        if not moved or before - prob.value <= fit.tol * max(1.0, before):
            converged = True
            break
    return FitResult(prob.current(), trace, converged, iters, evaluations + final_obj.evaluations)
