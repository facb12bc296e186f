"""Simplified SMPL-style body: 10 shape + 72 pose coefficients -> mesh and joints.

The learned SMPL template is replaced by an analytic body made of capsules
hung on the 24-joint SMPL kinematic tree.  World frame is z-up; the rest body
stands in a T-pose facing -y with its left side toward +x and the pelvis at
the origin.

Pipeline of :func:`smpl_map`:

1. shape: the 10 coefficients scale groups of bone offsets / capsule radii
   (diagonal basis :data:`SHAPE_BASIS`), then the whole body is scaled
   vertically so that coefficient 0 adds exactly ``SHAPE_BASIS[0]`` meters of
   standing height per unit;
2. forward kinematics with Rodrigues rotations of the 24 axis-angle triplets;
3. linear blend skinning with fixed inverse-distance weights over the two
   nearest bones;
4. root translation.
"""

from __future__ import annotations

import functools
import warnings
from dataclasses import dataclass, field

import numpy as np

NUM_JOINTS = 24
NUM_BETAS = 10
NUM_POSE = 72
BETA_LIMIT = 3.0

JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee",
    "spine2", "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot",
    "neck", "left_collar", "right_collar", "head", "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow", "left_wrist", "right_wrist", "left_hand", "right_hand",
)
PARENTS = np.array([-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21])

REST_JOINTS = np.array([
    [0.00, 0.00, 0.00],     # pelvis
    [0.09, 0.00, -0.08],    # left_hip
    [-0.09, 0.00, -0.08],   # right_hip
    [0.00, 0.01, 0.11],     # spine1
    [0.10, 0.00, -0.47],    # left_knee
    [-0.10, 0.00, -0.47],   # right_knee
    [0.00, 0.01, 0.24],     # spine2
    [0.10, 0.02, -0.87],    # left_ankle
    [-0.10, 0.02, -0.87],   # right_ankle
    [0.00, 0.00, 0.30],     # spine3
    [0.10, -0.10, -0.92],   # left_foot
    [-0.10, -0.10, -0.92],  # right_foot
    [0.00, 0.00, 0.52],     # neck
    [0.07, 0.00, 0.44],     # left_collar
    [-0.07, 0.00, 0.44],    # right_collar
    [0.00, -0.01, 0.62],    # head
    [0.18, 0.00, 0.45],     # left_shoulder
    [-0.18, 0.00, 0.45],    # right_shoulder
    [0.44, 0.00, 0.45],     # left_elbow
    [-0.44, 0.00, 0.45],    # right_elbow
    [0.68, 0.00, 0.45],     # left_wrist
    [-0.68, 0.00, 0.45],    # right_wrist
    [0.76, 0.00, 0.45],     # left_hand
    [-0.76, 0.00, 0.45],    # right_hand
])

# Semantic shape factors, one per coefficient: factor_i = 1 + SHAPE_BASIS[i] * beta_i,
# except entry 0 which is meters of standing height per unit.
SHAPE_NAMES = (
    "height", "torso_length", "limb_length", "limb_girth", "shoulder_width",
    "pelvis_width", "head_size", "torso_depth", "foot_length", "neck_length",
)
SHAPE_BASIS = np.array([0.07, 0.04, 0.04, 0.08, 0.05, 0.06, 0.05, 0.03, 0.03, 0.03])

_TORSO = (3, 6, 9, 12, 13, 14)
_ARM = (18, 19, 20, 21, 22, 23)
_LEG = (4, 5, 7, 8)

# (driving joint, start joint, end joint or None, end offset, radius, group)
_CAPSULES = (
    (0, 1, 2, None, 0.11, "torso"),
    (0, 0, 3, None, 0.12, "torso"),
    (3, 3, 6, None, 0.12, "torso"),
    (6, 6, 9, None, 0.13, "torso"),
    (9, 13, 14, None, 0.10, "torso"),
    (9, 9, 12, None, 0.11, "torso"),
    (12, 12, 15, None, 0.05, "neck"),
    (15, 15, None, (0.0, 0.0, 0.12), 0.09, "head"),
    (1, 1, 4, None, 0.075, "limb"),
    (2, 2, 5, None, 0.075, "limb"),
    (4, 4, 7, None, 0.055, "limb"),
    (5, 5, 8, None, 0.055, "limb"),
    (7, 7, 10, None, 0.045, "foot"),
    (8, 8, 11, None, 0.045, "foot"),
    (10, 10, None, (0.0, -0.06, 0.0), 0.035, "foot"),
    (11, 11, None, (0.0, -0.06, 0.0), 0.035, "foot"),
    (13, 13, 16, None, 0.055, "limb"),
    (14, 14, 17, None, 0.055, "limb"),
    (16, 16, 18, None, 0.048, "limb"),
    (17, 17, 19, None, 0.048, "limb"),
    (18, 18, 20, None, 0.04, "limb"),
    (19, 19, 21, None, 0.04, "limb"),
    (20, 20, 22, None, 0.035, "limb"),
    (21, 21, 23, None, 0.035, "limb"),
    (22, 22, None, (0.07, 0.0, 0.0), 0.03, "limb"),
    (23, 23, None, (-0.07, 0.0, 0.0), 0.03, "limb"),
)

SPIRAL_TURN = 10  # vertices per spiral turn on each capsule


@dataclass
class BodyParams:
    beta: np.ndarray = field(default_factory=lambda: np.zeros(NUM_BETAS))
    gamma: np.ndarray = field(default_factory=lambda: np.zeros(NUM_POSE))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.beta = np.asarray(self.beta, dtype=float).reshape(-1)
        self.gamma = np.asarray(self.gamma, dtype=float).reshape(-1)
        self.translation = np.asarray(self.translation, dtype=float).reshape(-1)
        if self.beta.shape != (NUM_BETAS,):
            raise ValueError(f"beta must have {NUM_BETAS} entries")
        if self.gamma.shape != (NUM_POSE,):
            raise ValueError(f"gamma must have {NUM_POSE} entries")
        if self.translation.shape != (3,):
            raise ValueError("translation must have 3 entries")

    def vector(self) -> np.ndarray:
        """The 82-vector (72 pose followed by 10 shape)."""
        return np.concatenate([self.gamma, self.beta])

    @classmethod
    def from_vector(cls, vec, translation=(0.0, 0.0, 0.0)) -> "BodyParams":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (NUM_POSE + NUM_BETAS,):
            raise ValueError("parameter vector must have length 82")
        return cls(vec[NUM_POSE:], vec[:NUM_POSE], translation)

    def copy(self) -> "BodyParams":
        return BodyParams(self.beta.copy(), self.gamma.copy(), self.translation.copy())


@dataclass
class KinematicTree:
    parent: np.ndarray
    rest_joints: np.ndarray
    skin_weights: np.ndarray


@dataclass
class BodyMesh:
    vertices: np.ndarray
    joints: np.ndarray
    faces: np.ndarray
    root_translation: np.ndarray
    normals: np.ndarray | None = None
    beta_clamped: bool = False


# -- rotations --------------------------------------------------------------


def rodrigues(rotvec) -> np.ndarray:
    """Rotation matrices for axis-angle vectors ``(..., 3)`` -> ``(..., 3, 3)``."""
    r = np.asarray(rotvec, dtype=float)
    theta = np.linalg.norm(r, axis=-1, keepdims=True)
    small = theta < 1e-12
    axis = r / np.where(small, 1.0, theta)
    x, y, z = axis[..., 0], axis[..., 1], axis[..., 2]
    zero = np.zeros_like(x)
    kmat = np.stack([zero, -z, y, z, zero, -x, -y, x, zero], axis=-1).reshape(r.shape[:-1] + (3, 3))
    t = theta[..., None]
    eye = np.broadcast_to(np.eye(3), kmat.shape)
    rot = eye + np.sin(t) * kmat + (1.0 - np.cos(t)) * (kmat @ kmat)
    return np.where(small[..., None], eye, rot)


def canonical_axis_angle(gamma) -> np.ndarray:
    """Wrap each triplet to norm <= pi without changing the rotation."""
    g = np.asarray(gamma, dtype=float).reshape(-1, 3).copy()
    n = np.linalg.norm(g, axis=1)
    big = n > np.pi
    if np.any(big):
        wrapped = np.mod(n[big] + np.pi, 2.0 * np.pi) - np.pi
        g[big] = g[big] / n[big, None] * wrapped[:, None]
    return g.reshape(-1)


# -- template construction ------------------------------------------------


def shape_factors(beta) -> np.ndarray:
    return 1.0 + SHAPE_BASIS * np.asarray(beta, dtype=float)


def clamp_beta(beta) -> tuple[np.ndarray, bool]:
    b = np.asarray(beta, dtype=float)
    c = np.clip(b, -BETA_LIMIT, BETA_LIMIT)
    return c, bool(np.any(c != b))


def _shaped_joints(f: np.ndarray) -> np.ndarray:
    """Rest joints with every factor except height applied, built parent to child."""
    offsets = REST_JOINTS - np.where(PARENTS[:, None] >= 0, REST_JOINTS[np.maximum(PARENTS, 0)], 0.0)
    offsets = offsets.copy()
    for j in _TORSO:
        offsets[j, 2] *= f[1]
    offsets[15, 2] *= f[9]
    for j in _ARM + _LEG:
        offsets[j] *= f[2]
    for j in (13, 14):
        offsets[j, 0] *= f[4]
    for j in (16, 17):
        offsets[j, 0] *= f[4]
    for j in (1, 2):
        offsets[j, 0] *= f[5]
    for j in (10, 11):
        offsets[j, 1] *= f[8]
    joints = np.zeros_like(offsets)
    for j in range(NUM_JOINTS):
        p = PARENTS[j]
        joints[j] = offsets[j] + (joints[p] if p >= 0 else 0.0)
    return joints


def _capsule_specs(joints: np.ndarray, f: np.ndarray):
    specs = []
    for drv, a, b, off, radius, group in _CAPSULES:
        start = joints[a]
        if b is None:
            o = np.asarray(off, dtype=float)
            if group == "head":
                o = o * f[6]
            elif group == "foot":
                o = o * f[8]
            else:
                o = o * f[2]
            end = start + o
        else:
            end = joints[b]
        r = radius
        if group == "limb":
            r *= f[3]
        elif group == "head":
            r *= f[6]
        elif group == "torso":
            r *= f[7]
        specs.append((drv, start, end, r))
    return specs


def _spiral_turn(num_vertices: int, num_capsules: int) -> int:
    """Vertices per spiral turn; coarser for small budgets, never below a triangle."""
    return int(min(SPIRAL_TURN, max(3, num_vertices // num_capsules - 4)))


def _allocation(num_vertices: int) -> tuple[list[int], int]:
    """Spiral vertex counts per capsule (area-proportional, deterministic) and the turn size."""
    specs = _capsule_specs(REST_JOINTS, np.ones(NUM_BETAS))
    area = np.array([2 * np.pi * r * np.linalg.norm(e - s) + 4 * np.pi * r * r for _, s, e, r in specs])
    turn = _spiral_turn(num_vertices, len(specs))
    minimum = turn + 2
    budget = num_vertices - 2 * len(specs)
    if budget < minimum * len(specs):
        raise ValueError(f"need at least {(minimum + 2) * len(specs)} vertices")
    extra = budget - minimum * len(specs)
    raw = area / area.sum() * extra
    counts = np.floor(raw).astype(int)
    rem = extra - counts.sum()
    order = np.lexsort((np.arange(len(raw)), -(raw - counts)))
    counts[order[:rem]] += 1
    return list(counts + minimum), turn


def _capsule_mesh(start, end, radius, count, n_turn: int = SPIRAL_TURN):
    """Spiral-wound capsule: ``count`` body vertices plus two poles, with normals."""
    axis = end - start
    length = np.linalg.norm(axis)
    w = axis / length if length > 1e-12 else np.array([0.0, 0.0, 1.0])
    helper = np.array([1.0, 0.0, 0.0]) if abs(w[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(w, helper)
    u /= np.linalg.norm(u)
    v = np.cross(w, u)
    # profile coordinate: arc length along cap-cylinder-cap
    cap = 0.5 * np.pi * radius
    total = 2 * cap + length
    j = np.arange(count)
    turn = 2.0 * np.pi * j / n_turn
    s = (j + 1) / (count + 1) * total
    in_low = s < cap
    in_high = s > cap + length
    ang_low = s / radius  # 0 at the pole, pi/2 at the equator
    ang_high = (total - s) / radius
    ring_r = np.where(in_low, radius * np.sin(ang_low), np.where(in_high, radius * np.sin(ang_high), radius))
    height = np.where(in_low, -radius * np.cos(ang_low),
                      np.where(in_high, length + radius * np.cos(ang_high), s - cap))
    radial = np.cos(turn)[:, None] * u + np.sin(turn)[:, None] * v
    pts = start + height[:, None] * w + ring_r[:, None] * radial
    nz = np.where(in_low, -np.cos(ang_low), np.where(in_high, np.cos(ang_high), 0.0))
    nr = np.where(in_low, np.sin(ang_low), np.where(in_high, np.sin(ang_high), 1.0))
    normals = nz[:, None] * w + nr[:, None] * radial
    poles = np.array([start - radius * w, end + radius * w])
    pole_n = np.array([-w, w])
    verts = np.vstack([pts, poles])
    norms = np.vstack([normals, pole_n])
    n = n_turn
    faces = []
    for i in range(count - n - 1):
        faces.append((i, i + n + 1, i + 1))
        faces.append((i, i + n, i + n + 1))
    bottom, top = count, count + 1
    for i in range(n):
        faces.append((bottom, i + 1, i))
    for i in range(count - n - 1, count - 1):
        faces.append((top, i, i + 1))
    return verts, norms, np.array(faces, dtype=np.int64)


@dataclass
class _Template:
    counts: list[int]
    turn: int
    faces: np.ndarray
    capsule_of_vertex: np.ndarray
    skin_weights: np.ndarray


def _build_surface(f: np.ndarray, counts: list[int], turn: int = SPIRAL_TURN):
    joints = _shaped_joints(f)
    verts, norms, faces = [], [], []
    offset = 0
    for (drv, s, e, r), c in zip(_capsule_specs(joints, f), counts):
        v, n, fc = _capsule_mesh(s, e, r, c, turn)
        verts.append(v)
        norms.append(n)
        faces.append(fc + offset)
        offset += len(v)
    return joints, np.vstack(verts), np.vstack(norms), np.vstack(faces)


def _segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ab = b - a
    denom = max(float(ab @ ab), 1e-12)
    t = np.clip((p - a) @ ab / denom, 0.0, 1.0)
    return np.linalg.norm(p - (a + t[:, None] * ab), axis=1)


@functools.lru_cache(maxsize=8)
def _template(num_vertices: int, weight_power: float) -> _Template:
    counts, turn = _allocation(num_vertices)
    ones = np.ones(NUM_BETAS)
    joints, verts, _, faces = _build_surface(ones, counts, turn)
    specs = _capsule_specs(joints, ones)
    dist = np.stack([_segment_distance(verts, s, e) for _, s, e, _ in specs], axis=1)
    drivers = np.array([d for d, *_ in specs])
    # per driving joint: nearest capsule distance
    jd = np.full((len(verts), NUM_JOINTS), np.inf)
    for c, d in enumerate(drivers):
        jd[:, d] = np.minimum(jd[:, d], dist[:, c])
    order = np.argsort(jd, axis=1, kind="stable")[:, :2]
    rows = np.arange(len(verts))[:, None]
    d2 = jd[rows, order]
    w = 1.0 / np.maximum(d2, 1e-6) ** weight_power
    w /= w.sum(axis=1, keepdims=True)
    weights = np.zeros((len(verts), NUM_JOINTS))
    np.put_along_axis(weights, order, w, axis=1)
    cap_of = np.repeat(np.arange(len(counts)), np.array(counts) + 2)
    return _Template(counts, turn, faces, cap_of, weights)


@functools.lru_cache(maxsize=64)
def _shaped(num_vertices: int, weight_power: float, beta: tuple[float, ...]):
    f = shape_factors(beta)
    tpl = _template(num_vertices, weight_power)
    joints, verts, norms, _ = _build_surface(f, tpl.counts, tpl.turn)
    height = verts[:, 2].max() - verts[:, 2].min()
    scale = 1.0 + SHAPE_BASIS[0] * beta[0] / height
    joints = joints * np.array([1.0, 1.0, scale])
    verts = verts * np.array([1.0, 1.0, scale])
    norms = norms * np.array([1.0, 1.0, 1.0 / scale])
    norms /= np.linalg.norm(norms, axis=1, keepdims=True)
    for a in (joints, verts, norms):
        a.flags.writeable = False
    return joints, verts, norms


@dataclass(frozen=True)
class BodyModel:
    """Immutable model instance; vertex count and skin-weight power are fixed at creation."""

    num_vertices: int = 1000
    weight_power: float = 4.0

    def __post_init__(self):
        if self.num_vertices < 200:
            raise ValueError("num_vertices must be >= 200")

    @property
    def _tpl(self) -> _Template:
        return _template(self.num_vertices, self.weight_power)

    @property
    def faces(self) -> np.ndarray:
        return self._tpl.faces

    @property
    def skin_weights(self) -> np.ndarray:
        return self._tpl.skin_weights

    def kinematic_tree(self, beta=None) -> KinematicTree:
        joints, _, _ = self.shaped_template(np.zeros(NUM_BETAS) if beta is None else beta)
        return KinematicTree(PARENTS.copy(), joints, self.skin_weights.copy())

    def shaped_template(self, beta) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Rest joints, vertices and normals for shape ``beta`` (zero pose).

        Returned arrays are shared through a cache; do not modify them.
        """
        key = tuple(float(b) for b in np.asarray(beta, dtype=float))
        return _shaped(self.num_vertices, self.weight_power, key)

    def __call__(self, params: BodyParams) -> BodyMesh:
        return smpl_map(params.beta, params.gamma, params.translation, model=self)


DEFAULT_MODEL = BodyModel()


def forward_kinematics(gamma, rest_joints) -> tuple[np.ndarray, np.ndarray]:
    """World joints ``(24, 3)`` and skinning transforms ``(24, 4, 4)`` (rest pose removed)."""
    g = np.asarray(gamma, dtype=float).reshape(NUM_JOINTS, 3)
    rot = rodrigues(g)
    rest = np.asarray(rest_joints, dtype=float)
    world_r = np.empty((NUM_JOINTS, 3, 3))
    world_t = np.empty((NUM_JOINTS, 3))
    for j in range(NUM_JOINTS):
        p = PARENTS[j]
        if p < 0:
            world_r[j] = rot[j]
            world_t[j] = rest[j]
        else:
            world_r[j] = world_r[p] @ rot[j]
            world_t[j] = world_r[p] @ (rest[j] - rest[p]) + world_t[p]
    transforms = np.zeros((NUM_JOINTS, 4, 4))
    transforms[:, :3, :3] = world_r
    transforms[:, :3, 3] = world_t - np.einsum("jab,jb->ja", world_r, rest)
    transforms[:, 3, 3] = 1.0
    return world_t, transforms


def _blend(weights, transforms) -> np.ndarray:
    return (weights @ transforms[:, :3, :].reshape(len(transforms), 12)).reshape(-1, 3, 4)


def skin(vertices, weights, transforms) -> np.ndarray:
    blended = _blend(weights, transforms)
    v = np.asarray(vertices)
    return (blended[:, :, :3] @ v[:, :, None])[:, :, 0] + blended[:, :, 3]


def smpl_map(beta, gamma, translation=(0.0, 0.0, 0.0), model: BodyModel | None = None) -> BodyMesh:
    model = model or DEFAULT_MODEL
    beta = np.asarray(beta, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    if beta.shape != (NUM_BETAS,) or gamma.shape != (NUM_POSE,):
        raise ValueError("beta needs 10 entries and gamma 72")
    beta_c, clamped = clamp_beta(beta)
    if clamped:
        warnings.warn("shape coefficients clamped to [-3, 3]", stacklevel=2)
    rest_joints, rest_verts, rest_norms = model.shaped_template(beta_c)
    joints, transforms = forward_kinematics(gamma, rest_joints)
    t = np.asarray(translation, dtype=float)
    blended = _blend(model.skin_weights, transforms)
    verts = (blended[:, :, :3] @ rest_verts[:, :, None])[:, :, 0] + blended[:, :, 3]
    norms = (blended[:, :, :3] @ rest_norms[:, :, None])[:, :, 0]
    norms /= np.maximum(np.linalg.norm(norms, axis=1, keepdims=True), 1e-12)
    return BodyMesh(verts + t, joints + t, model.faces, t.copy(), norms, clamped)


def bone_lengths(joints) -> np.ndarray:
    j = np.asarray(joints)
    return np.linalg.norm(j[1:] - j[PARENTS[1:]], axis=1)


def descendants(joint: int) -> set[int]:
    out = set()
    for j in range(NUM_JOINTS):
        k = j
        while k >= 0:
            if PARENTS[k] == joint:
                out.add(j)
                break
            k = PARENTS[k]
    return out


# -- metrics and losses -----------------------------------------------------


def _mean_distance_cm(a, b, align_root: bool, root_a=None, root_b=None) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if align_root:
        a = a - (a[0] if root_a is None else root_a)
        b = b - (b[0] if root_b is None else root_b)
    return float(np.mean(np.linalg.norm(a - b, axis=-1)) * 100.0)


def pve(mesh_pred: BodyMesh, mesh_gt: BodyMesh, pelvis_align: bool = False) -> float:
    """Mean per-vertex Euclidean error in centimeters."""
    return _mean_distance_cm(mesh_pred.vertices, mesh_gt.vertices, pelvis_align,
                             mesh_pred.joints[0], mesh_gt.joints[0])


def mpjpe(joints_pred, joints_gt, pelvis_align: bool = False) -> float:
    """Mean per-joint position error in centimeters."""
    return _mean_distance_cm(joints_pred, joints_gt, pelvis_align)


POSE_LOSS_WEIGHT = 1.0
SHAPE_LOSS_WEIGHT = 0.05


def param_loss(pred_seq, gt_seq, pose_weight: float = POSE_LOSS_WEIGHT,
               shape_weight: float = SHAPE_LOSS_WEIGHT) -> tuple[float, float, float]:
    """Mean-over-frames L1 parameter losses (pose, shape, weighted total)."""
    if len(pred_seq) != len(gt_seq):
        raise ValueError("sequence lengths differ")
    if len(pred_seq) == 0:
        raise ValueError("empty sequences")
    t = len(pred_seq)
    lp = sum(float(np.abs(p.gamma - g.gamma).sum()) for p, g in zip(pred_seq, gt_seq)) / t
    ls = sum(float(np.abs(p.beta - g.beta).sum()) for p, g in zip(pred_seq, gt_seq)) / t
    return lp, ls, pose_weight * lp + shape_weight * ls


# -- surface sampling -------------------------------------------------------


@dataclass(frozen=True)
class SurfaceSamples:
    """Fixed barycentric sample set; reused across frames so samples correspond."""

    faces: np.ndarray  # (S,) triangle index
    bary: np.ndarray  # (S, 3)


def surface_samples(count: int, seed: int = 0, model: BodyModel | None = None) -> SurfaceSamples:
    """Area-weighted (on the zero-pose template) random points on the mesh."""
    if count < 1:
        raise ValueError("need at least one sample")
    model = model or DEFAULT_MODEL
    _, verts, _ = model.shaped_template(np.zeros(NUM_BETAS))
    tri = verts[model.faces]
    area = 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    rng = np.random.default_rng(seed)
    faces = rng.choice(len(area), size=count, p=area / area.sum())
    r1, r2 = rng.random(count), rng.random(count)
    s = np.sqrt(r1)
    bary = np.stack([1.0 - s, s * (1.0 - r2), s * r2], axis=1)
    return SurfaceSamples(faces, bary)


def sample_surface(mesh: BodyMesh, samples: SurfaceSamples) -> tuple[np.ndarray, np.ndarray]:
    """Positions and unit normals of the sample set on a posed mesh."""
    tri = mesh.faces[samples.faces]
    pos = np.einsum("sk,skd->sd", samples.bary, mesh.vertices[tri])
    if mesh.normals is None:
        v = mesh.vertices[tri]
        n = np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0])
    else:
        n = np.einsum("sk,skd->sd", samples.bary, mesh.normals[tri])
    n /= np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-12)
    return pos, n
