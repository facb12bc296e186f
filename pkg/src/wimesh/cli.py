"""Command-line interface.

    wimesh simulate --config scene.json --seed 7 --out run/
    wimesh sanitize run/rx0.wcsi run/rx1.wcsi --out run/
    wimesh estimate run/rx0.clean.wcsi run/rx1.clean.wcsi --config scene.json --out run/
    wimesh extract run/rx0.aoa.npy run/rx1.aoa.npy --config scene.json --out run/
    wimesh fit run/tensor.wmt --config scene.json --out run/
    wimesh eval run/fit.json run/truth.json --out run/
    wimesh pipeline --config scene.json --seed 7 --out run/
    wimesh bench --config scene.json --out run/

Exit status: 0 success, 2 malformed config, 3 missing input, 4 malformed input data.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import io as wio
from . import pipeline as pl
from .array_model import ArrayGeometry
from .body_model import smpl_map
from .image_pipeline import TENSOR_FRAMES, aggregate_frames, read_tensor, write_tensor
from .music import SearchConfig, estimate_frame, frame_windows
from .scenes import SceneFormatError
from .simulator import CsiTrace

EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_DATA = 4


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _load_config(args) -> pl.PipelineConfig:
    path = Path(args.config) if args.config else pl.demo_scene_path()
    if not path.exists():
        raise CliError(EXIT_MISSING, f"config not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(EXIT_CONFIG, f"malformed config {path}: {exc}") from exc
    try:
        return pl.PipelineConfig.from_dict(
            data, seed=args.seed, search=args.search, snr_db=args.snr_db, frames=args.frames,
            receivers=args.receivers,
        )
    except SceneFormatError as exc:
        raise CliError(EXIT_CONFIG, f"malformed config {path}: {exc}") from exc


def _inputs(paths) -> list[Path]:
    out = [Path(p) for p in paths]
    for p in out:
        if not p.exists():
            raise CliError(EXIT_MISSING, f"input not found: {p}")
    return out


def _out(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _stamp(cfg: pl.PipelineConfig) -> dict:
    return {"config_hash": wio.config_hash(cfg.echo()), "seed": cfg.seed}


def _write_traces(out: Path, traces: list[CsiTrace], suffix: str, stamp: dict) -> list[Path]:
    paths = []
    for tr in traces:
        p = out / f"rx{tr.receiver_index}{suffix}.wcsi"
        wio.write_trace(p, tr)
        wio.write_meta(p, stamp["config_hash"], stamp["seed"], receiver=tr.receiver_index, packets=len(tr))
        paths.append(p)
    return paths


def _read_traces(paths: list[Path], cfg: pl.PipelineConfig | None = None) -> list[CsiTrace]:
    out = []
    for i, p in enumerate(paths):
        try:
            out.append(wio.read_trace(p, cfg.scene.radio if cfg else None, receiver_index=i))
        except wio.TraceFormatError as exc:
            raise CliError(EXIT_DATA, f"{p}: {exc}") from exc
    return out


def _write_stack(out: Path, r: int, stack: np.ndarray, stamp: dict, name: str) -> Path:
    p = out / f"rx{r}.{name}.npy"
    np.save(p, stack.astype(np.float64))
    wio.write_meta(p, stamp["config_hash"], stamp["seed"], receiver=r, frames=len(stack))
    return p


def _fit_outputs(out: Path, result, stamp: dict, frame_ids) -> None:
    wio.write_json(out / "fit.json", {
        **stamp,
        "frames": list(frame_ids),
        "params": wio.params_seq_to_json(result.params_seq),
        "objective_trace": result.objective_trace,
        "converged": result.converged,
        "iterations": result.iterations,
        "evaluations": result.evaluations,
    })
    mesh_dir = out / "meshes"
    mesh_dir.mkdir(exist_ok=True)
    header = f"config_hash={stamp['config_hash']} seed={stamp['seed']}"
    for f, p in zip(frame_ids, result.params_seq):
        mesh = smpl_map(p.beta, p.gamma, p.translation)
        wio.write_obj(mesh_dir / f"frame_{f:03d}.obj", mesh, header)
        wio.write_joints_csv(mesh_dir / f"frame_{f:03d}_joints.csv", mesh.joints, header)


# -- subcommands ----------------------------------------------------------


def cmd_simulate(args) -> None:
    cfg = _load_config(args)
    out = _out(args)
    stamp = _stamp(cfg)
    traces = pl.simulate(cfg)
    _write_traces(out, traces, "", stamp)
    frames = list(range(cfg.num_frames))
    truth = [cfg.scene.body_params[i] for i in frames] if cfg.scene.body_params else []
    wio.write_json(out / "truth.json", {**stamp, "frames": frames, "params": wio.params_seq_to_json(truth)})


def cmd_sanitize(args) -> None:
    paths = _inputs(args.inputs)
    out = _out(args)
    traces = pl.sanitize(_read_traces(paths))
    for p, tr in zip(paths, traces):
        dst = out / (p.name.replace(".wcsi", "") + ".clean.wcsi")
        wio.write_trace(dst, tr)
        meta = Path(str(p) + ".meta.json")
        info = json.loads(meta.read_text()) if meta.exists() else {"config_hash": "", "seed": 0}
        wio.write_meta(dst, info.get("config_hash", ""), info.get("seed", 0), source=p.name, packets=len(tr))


def cmd_estimate(args) -> None:
    cfg = _load_config(args)
    paths = _inputs(args.inputs)
    out = _out(args)
    stamp = _stamp(cfg)
    traces = _read_traces(paths, cfg)
    images = pl.estimate(cfg, traces)
    for r, frames in enumerate(images):
        stack = np.stack([img.values for img in frames])
        _write_stack(out, r, stack, stamp, "aoa")
        header = f"config_hash={stamp['config_hash']} seed={stamp['seed']} frame=0 receiver={r}"
        wio.write_pgm16(out / f"rx{r}.aoa.frame000.pgm", frames[0].values, header)


def _load_stack(p: Path) -> np.ndarray:
    try:
        stack = np.load(p)
    except (ValueError, OSError) as exc:
        raise CliError(EXIT_DATA, f"{p}: not an image stack ({exc})") from exc
    if stack.ndim != 3:
        raise CliError(EXIT_DATA, f"{p}: expected (frames, 180, 180), got {stack.shape}")
    return stack


def cmd_extract(args) -> None:
    cfg = _load_config(args)
    paths = _inputs(args.inputs)
    out = _out(args)
    stamp = _stamp(cfg)
    stacks = [_load_stack(p) for p in paths]
    try:
        ext = pl.extract(cfg, stacks)
    except ValueError as exc:
        raise CliError(EXIT_DATA, str(exc)) from exc
    for r, vals in enumerate(ext.body):
        _write_stack(out, r, vals, stamp, "body")
    tensor, composite, first = ext.tensor, ext.composite, ext.frame_ids[0]
    if cfg.tensor_frames == TENSOR_FRAMES:
        write_tensor(out / "tensor.wmt", tensor)
        wio.write_meta(out / "tensor.wmt", stamp["config_hash"], stamp["seed"], first_frame=first)
    np.save(out / "tensor.npy", tensor.data)
    wio.write_meta(out / "tensor.npy", stamp["config_hash"], stamp["seed"], first_frame=first)
    for r in range(composite.shape[0]):
        header = f"config_hash={stamp['config_hash']} seed={stamp['seed']} composite receiver={r}"
        wio.write_pgm16(out / f"rx{r}.composite.pgm", composite[r], header)
        wio.write_image_csv(out / f"rx{r}.composite.csv", composite[r], header)


def cmd_fit(args) -> None:
    cfg = _load_config(args)
    (path,) = _inputs(args.inputs)
    out = _out(args)
    stamp = _stamp(cfg)
    try:
        data = read_tensor(path) if path.suffix == ".wmt" else np.load(path)
    except ValueError as exc:
        raise CliError(EXIT_DATA, f"{path}: {exc}") from exc
    meta = Path(str(path) + ".meta.json")
    first = json.loads(meta.read_text()).get("first_frame", 0) if meta.exists() else 0
    t = data.shape[0]
    tensor, composite = aggregate_frames([list(data[:, 0]), list(data[:, 1])], np.arange(t, dtype=float), frames=t)
    try:
        result = pl.fit(cfg, tensor, composite)
    except FloatingPointError as exc:
        raise CliError(EXIT_DATA, f"fit aborted: {exc}") from exc
    _fit_outputs(out, result, stamp, range(first, first + t))


def cmd_eval(args) -> None:
    pred_path, truth_path = _inputs(args.inputs)
    out = _out(args)
    try:
        pred_doc = json.loads(pred_path.read_text())
        truth_doc = json.loads(truth_path.read_text())
        pred = wio.params_seq_from_json(pred_doc["params"])
        truth_all = wio.params_seq_from_json(truth_doc["params"])
    except (json.JSONDecodeError, KeyError, ValueError, TypeError) as exc:
        raise CliError(EXIT_DATA, f"cannot read parameters: {exc}") from exc
    frames = pred_doc.get("frames", list(range(len(pred))))
    truth_frames = truth_doc.get("frames", list(range(len(truth_all))))
    index = {f: i for i, f in enumerate(truth_frames)}
    try:
        truth = [truth_all[index[f]] for f in frames]
    except KeyError as exc:
        raise CliError(EXIT_DATA, f"frame {exc} missing from ground truth") from exc
    report = pl.evaluate(pred, truth, {"prediction": pred_path.name, "truth": truth_path.name})
    stamp = {"config_hash": pred_doc.get("config_hash", ""), "seed": pred_doc.get("seed", 0)}
    wio.write_json(out / "metrics.json", {**stamp, **report.to_dict()})


def cmd_pipeline(args) -> None:
    cfg = _load_config(args)
    out = _out(args)
    stamp = _stamp(cfg)
    run = pl.run_pipeline(cfg)
    _write_traces(out, run.traces, "", stamp)
    if cfg.tensor_frames == TENSOR_FRAMES:
        write_tensor(out / "tensor.wmt", run.tensor)
        wio.write_meta(out / "tensor.wmt", stamp["config_hash"], stamp["seed"], first_frame=run.frame_ids[0])
    for r in range(run.composite.shape[0]):
        header = f"config_hash={stamp['config_hash']} seed={stamp['seed']} composite receiver={r}"
        wio.write_pgm16(out / f"rx{r}.composite.pgm", run.composite[r], header)
    _fit_outputs(out, run.fit, stamp, run.frame_ids)
    wio.write_json(out / "truth.json", {**stamp, "frames": run.frame_ids,
                                        "params": wio.params_seq_to_json(run.truth)})
    wio.write_json(out / "metrics.json", {**stamp, **run.metrics.to_dict()})
    # wall times differ between runs, so they live apart from the reproducible outputs
    wio.write_json(out / "timings.json", {**stamp, "runtime_s": run.metrics.runtime_s})


def cmd_bench(args) -> None:
    cfg = _load_config(args)
    out = _out(args)
    stamp = _stamp(cfg)
    traces = pl.sanitize(pl.simulate(cfg))
    counts, timings = [], []
    for tr in traces:
        geo = ArrayGeometry.for_config(tr.config)
        for f, sl in enumerate(frame_windows(len(tr), cfg.scene.packets_per_frame)):
            row, trow = {"receiver": tr.receiver_index, "frame": f}, {"receiver": tr.receiver_index, "frame": f}
            for mode in ("exhaustive", "coarse_to_fine"):
                t0 = time.perf_counter()
                img = estimate_frame(tr.csi[sl], tr.config, geo, SearchConfig(mode=mode), cfg.music)
                trow[mode] = time.perf_counter() - t0
                row[mode] = {"evaluations": img.meta["evaluations"], "argmax": list(img.argmax())}
            row["ratio"] = row["coarse_to_fine"]["evaluations"] / row["exhaustive"]["evaluations"]
            row["same_argmax"] = row["coarse_to_fine"]["argmax"] == row["exhaustive"]["argmax"]
            counts.append(row)
            timings.append(trow)
    summary = {
        "frames": len(counts),
        "mean_ratio": float(np.mean([c["ratio"] for c in counts])),
        "max_ratio": float(np.max([c["ratio"] for c in counts])),
        "same_argmax": int(sum(c["same_argmax"] for c in counts)),
    }
    wio.write_json(out / "bench.json", {**stamp, "summary": summary, "frames": counts})
    wio.write_json(out / "bench_timings.json", {
        **stamp,
        "mean_s": {m: float(np.mean([t[m] for t in timings])) for m in ("exhaustive", "coarse_to_fine")},
        "frames": timings,
    })
    print(f"coarse/exhaustive evaluations: mean {summary['mean_ratio']:.3f}, max {summary['max_ratio']:.3f}; "
          f"identical argmax {summary['same_argmax']}/{summary['frames']}")


COMMANDS = {
    "simulate": (cmd_simulate, "synthesize CSI traces from a scene"),
    "sanitize": (cmd_sanitize, "remove per-packet delay ramps from traces"),
    "estimate": (cmd_estimate, "per-frame 2D AoA images from traces"),
    "extract": (cmd_extract, "static removal, thresholding and tensor assembly"),
    "fit": (cmd_fit, "fit body parameters to an input tensor"),
    "eval": (cmd_eval, "PVE / MPJPE / parameter losses of a fit against ground truth"),
    "pipeline": (cmd_pipeline, "run every stage end to end"),
    "bench": (cmd_bench, "exhaustive vs coarse-to-fine search cost"),
}
_TAKES_INPUTS = {"sanitize", "estimate", "extract", "fit", "eval"}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="wimesh", description="WiFi AoA imaging and body mesh fitting")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        if name in _TAKES_INPUTS:
            p.add_argument("inputs", nargs="+", help="input files")
        p.add_argument("--config", help="scene/pipeline JSON (default: bundled demo)")
        p.add_argument("--seed", type=int, help="random seed (default: from config)")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--search", choices=["exhaustive", "coarse"], help="AoA search strategy")
        p.add_argument("--snr-db", type=float, dest="snr_db", help="override the scene SNR")
        p.add_argument("--frames", type=int, help="limit the number of frames")
        p.add_argument("--receivers", type=int, choices=[1, 2], help="receivers to use")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    func, _ = COMMANDS[args.command]
    try:
        func(args)
    except CliError as exc:
        print(f"wimesh {args.command}: {exc}", file=sys.stderr)
        return exc.code
    except SceneFormatError as exc:
        print(f"wimesh {args.command}: malformed config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"wimesh {args.command}: missing input: {exc}", file=sys.stderr)
        return EXIT_MISSING
    return 0


if __name__ == "__main__":
    sys.exit(main())
