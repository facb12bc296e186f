"""File formats: CSI traces, AoA images, meshes, fit results and provenance metadata.

CSI trace (little-endian)::

    "WCSI"
    u32 version, f64 carrier_hz, f64 subcarrier_spacing_hz,
    u16 K, u16 N, u16 M_sub, u16 reserved, u32 packet_count   (32 bytes after the magic)
    packet_count x { u64 timestamp_ns, K*N*M_sub x (f32 re, f32 im) }

Values are stored in tx-major, rx, subcarrier order.  Text artifacts carry
the config hash and seed inline; binary ones get a ``.meta.json`` sidecar.
"""

from __future__ import annotations

import hashlib
import json
import struct
from pathlib import Path

import numpy as np

from .array_model import RadioConfig
from .body_model import JOINT_NAMES, BodyMesh, BodyParams
from .scenes import SceneDescription, SceneFormatError, params_to_dict, scene_from_dict
from .simulator import CsiTrace

TRACE_MAGIC = b"WCSI"
TRACE_VERSION = 1
_HEADER = struct.Struct("<IddHHHHI")
TRACE_HEADER_BYTES = len(TRACE_MAGIC) + _HEADER.size


class TraceFormatError(ValueError):
    """Malformed trace file; the message names the byte offset."""


# -- provenance -----------------------------------------------------------


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def config_hash(config: dict) -> str:
    return hashlib.sha256(canonical_json(config).encode()).hexdigest()[:16]


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, default=_jsonable) + "\n")


def write_meta(path, cfg_hash: str, seed: int, **extra) -> Path:
    side = Path(str(path) + ".meta.json")
    write_json(side, {"config_hash": cfg_hash, "seed": int(seed), "file": Path(path).name, **extra})
    return side


# -- CSI traces -----------------------------------------------------------


def trace_to_bytes(trace: CsiTrace) -> bytes:
    cfg = trace.config
    k, n, m = cfg.num_tx, cfg.num_rx, cfg.num_subcarriers
    head = TRACE_MAGIC + _HEADER.pack(TRACE_VERSION, cfg.carrier_freq_hz, cfg.subcarrier_spacing_hz,
                                      k, n, m, 0, len(trace))
    t = len(trace)
    rec = np.dtype([("ts", "<u8"), ("iq", "<f4", (k * n * m * 2,))])
    body = np.empty(t, dtype=rec)
    body["ts"] = trace.timestamps_ns.astype(np.uint64)
    iq = np.ascontiguousarray(trace.csi.reshape(t, k * n * m).astype(np.complex64))
    body["iq"] = iq.view(np.float32).reshape(t, 2 * k * n * m)
    return head + body.tobytes()


def trace_from_bytes(raw: bytes, config: RadioConfig | None = None, receiver_index: int = 0) -> CsiTrace:
    """Parse a trace.  ``config`` supplies fields the header does not carry."""
    if len(raw) < len(TRACE_MAGIC) or raw[:4] != TRACE_MAGIC:
        raise TraceFormatError("bad magic at byte offset 0")
    if len(raw) < TRACE_HEADER_BYTES:
        raise TraceFormatError(f"header truncated at byte offset {len(raw)}")
    version, carrier, spacing, k, n, m, _, count = _HEADER.unpack_from(raw, 4)
    if version != TRACE_VERSION:
        raise TraceFormatError(f"unsupported version {version} at byte offset 4")
    if min(k, n, m) < 1:
        raise TraceFormatError("zero dimension in header at byte offset 24")
    base = config or RadioConfig()
    cfg = RadioConfig(carrier, spacing * m, m, k, n, base.tx_spacing_m, base.rx_spacing_m)
    size = 8 + 8 * k * n * m
    payload = len(raw) - TRACE_HEADER_BYTES
    full = payload // size
    if full < count:
        offset = TRACE_HEADER_BYTES + full * size
        raise TraceFormatError(f"packet {full} truncated at byte offset {offset} ({count} packets declared)")
    if payload != count * size:
        raise TraceFormatError(f"{payload - count * size} trailing bytes at byte offset "
                               f"{TRACE_HEADER_BYTES + count * size}")
    rec = np.dtype([("ts", "<u8"), ("iq", "<f4", (k * n * m * 2,))])
    body = np.frombuffer(raw, dtype=rec, count=count, offset=TRACE_HEADER_BYTES)
    iq = np.ascontiguousarray(body["iq"]).view(np.complex64).reshape(count, k, n, m)
    return CsiTrace(iq.copy(), body["ts"].astype(np.int64), cfg, receiver_index)


def write_trace(path, trace: CsiTrace) -> None:
    Path(path).write_bytes(trace_to_bytes(trace))


def read_trace(path, config: RadioConfig | None = None, receiver_index: int = 0) -> CsiTrace:
    return trace_from_bytes(Path(path).read_bytes(), config, receiver_index)


# -- images ---------------------------------------------------------------


def write_pgm16(path, values: np.ndarray, comment: str = "") -> tuple[float, float]:
    """16-bit binary PGM, min-max scaled; returns ``(offset, scale)``.

    ``value = offset + count * scale``; both go to ``<path>.scale.txt``.
    Row 0 of the array is written last so that elevation grows upward in viewers.
    """
    v = np.asarray(values, dtype=float)
    lo = float(v.min()) if v.size else 0.0
    hi = float(v.max()) if v.size else 0.0
    scale = (hi - lo) / 65535.0 if hi > lo else 1.0
    counts = np.round((v - lo) / scale).astype(">u2")[::-1]
    head = b"P5\n"
    for line in comment.splitlines():
        head += f"# {line}\n".encode()
    head += f"{v.shape[1]} {v.shape[0]}\n65535\n".encode()
    Path(path).write_bytes(head + counts.tobytes())
    lines = [f"# {line}" for line in comment.splitlines()]
    lines += [f"offset {lo!r}", f"scale {scale!r}"]
    Path(str(path) + ".scale.txt").write_text("\n".join(lines) + "\n")
    return lo, scale


def read_pgm_scale(path) -> tuple[float, float]:
    vals = {}
    for line in Path(str(path) + ".scale.txt").read_text().splitlines():
        if line and not line.startswith("#"):
            key, val = line.split()
            vals[key] = float(val)
    return vals["offset"], vals["scale"]


def read_pgm16(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if not raw.startswith(b"P5"):
        raise ValueError("not a binary PGM")
    tokens, pos = [], 2
    while len(tokens) < 3:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(int(raw[pos:end]))
        pos = end
    w, h, maxval = tokens
    if maxval != 65535:
        raise ValueError("only 16-bit PGM is supported")
    pos += 1
    return np.frombuffer(raw, dtype=">u2", count=w * h, offset=pos).reshape(h, w)[::-1].astype(np.uint16)


def write_image_csv(path, values: np.ndarray, header: str = "") -> None:
    """Rows are elevation 0..179, columns azimuth 0..179."""
    with open(path, "w") as fh:
        if header:
            fh.write(f"# {header}\n")
        np.savetxt(fh, np.asarray(values, dtype=float), delimiter=",", fmt="%.9e")


# -- meshes and parameters ------------------------------------------------


def write_obj(path, mesh: BodyMesh, header: str = "") -> None:
    lines = [f"# {h}" for h in header.splitlines()]
    lines += [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> tuple[np.ndarray, np.ndarray]:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        if line.startswith("v "):
            verts.append([float(x) for x in line.split()[1:4]])
        elif line.startswith("f "):
            faces.append([int(x.split("/")[0]) - 1 for x in line.split()[1:4]])
    return np.array(verts), np.array(faces, dtype=int)


def write_joints_csv(path, joints: np.ndarray, header: str = "") -> None:
    rows = [f"# {header}"] if header else []
    rows.append("joint,x,y,z")
    rows += [f"{name},{x:.6f},{y:.6f},{z:.6f}" for name, (x, y, z) in zip(JOINT_NAMES, joints)]
    Path(path).write_text("\n".join(rows) + "\n")


def params_seq_to_json(params: list[BodyParams]) -> list[dict]:
    return [{"vector": [float(v) for v in p.vector()], **params_to_dict(p)} for p in params]


def params_seq_from_json(items: list[dict]) -> list[BodyParams]:
    out = []
    for it in items:
        if "vector" in it:
            out.append(BodyParams.from_vector(it["vector"], it.get("translation", (0.0, 0.0, 0.0))))
        else:
            out.append(BodyParams(it["beta"], it["gamma"], it["translation"]))
    return out


# -- scenes ---------------------------------------------------------------


def load_scene(path) -> SceneDescription:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(str(p))
    try:
        data = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise SceneFormatError(f"{p}: invalid JSON ({exc})") from exc
    return scene_from_dict(data)
