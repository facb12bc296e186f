"""Acceptance criteria 1-10, each at its stated tolerance; one PASS/FAIL line per criterion."""

import dataclasses
import json
import time
from pathlib import Path

import numpy as np
from scipy.ndimage import binary_dilation

from wimesh.array_model import Direction, PathSignature, direction_vector, vector_to_angles
from wimesh.body_model import (
    DEFAULT_MODEL,
    POSE_LOSS_WEIGHT,
    SHAPE_LOSS_WEIGHT,
    BodyParams,
    bone_lengths,
    mpjpe,
    param_loss,
    pve,
    smpl_map,
)
from wimesh.cli import main
from wimesh.fitter import FitConfig, Objective, RenderConfig, fit_sequence
from wimesh.image_pipeline import body_images, estimate_static, subtract_static, support_coverage
from wimesh.music import SearchConfig, estimate_frame, find_peaks, frame_windows
from wimesh.sanitizer import fit_linear_offset, sanitize_trace
from wimesh.scenes import demo_scene_dict, standing_params
from wimesh.simulator import (
    ImpairmentSpec,
    Paths,
    Pose,
    Scene,
    ScattererSet,
    scene_to_paths,
    second_bounce_paths,
    simulate_receiver,
    synthesize_csi,
)

TX = Pose((0.0, 0.3, 1.0))
RX = Pose((-1.0, 0.0, 1.0))


def report(capsys, n, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {n:2d}] {'PASS' if ok else 'FAIL'}: {detail}")


def single_path_trial(seed, radio, geo, snr_db, packets):
    rng = np.random.default_rng(seed)
    az, el = int(rng.integers(10, 171)), int(rng.integers(20, 161))
    point = np.asarray(RX.position) + rng.uniform(1.5, 4.0) * direction_vector(az, el)
    scene = Scene(TX, [RX], ScattererSet(point[None], [1.0]), include_los=False)
    imp = ImpairmentSpec(sto_slope_std_s=20e-9, common_phase=True, snr_db=snr_db, seed=seed)
    tr = synthesize_csi(scene_to_paths(scene, 0, 0), radio, packets, imp, geo)
    csi, _ = sanitize_trace(tr.csi, radio.subcarrier_spacing_hz)
    return (az, el), csi


def test_criterion_01_forward_model(capsys, radio, geometry):
    t0 = time.perf_counter()
    err_clean, err_noisy = [], []
    for seed in range(100):
        truth, csi = single_path_trial(seed, radio, geometry, None, 33)
        err_clean.append(np.max(np.abs(np.subtract(estimate_frame(csi, radio, geometry).argmax(), truth))))
        truth, csi = single_path_trial(1000 + seed, radio, geometry, 20.0, 100)
        err_noisy.append(np.max(np.abs(np.subtract(estimate_frame(csi, radio, geometry).argmax(), truth))))
    elapsed = time.perf_counter() - t0
    clean_ok = np.mean(np.asarray(err_clean) <= 1.0)
    noisy_ok = np.mean(np.asarray(err_noisy) <= 2.0)
    ok = clean_ok == 1.0 and noisy_ok >= 0.95 and elapsed < 300
    report(capsys, 1, ok, f"noiseless within 1 deg {clean_ok:.0%}, 20 dB within 2 deg {noisy_ok:.0%}, "
                          f"{elapsed:.0f} s")
    assert ok


def test_criterion_02_resolution(capsys, radio, geometry):
    hits = 0
    for trial in range(50):
        rng = np.random.default_rng(100 + trial)
        az, el, sep = int(rng.integers(30, 140)), int(rng.integers(60, 120)), int(rng.integers(10, 25))
        sigs = [(PathSignature(Direction(a, el), rng.uniform(-60, 60), rng.uniform(5e-9, 40e-9)),
                 rng.uniform(0.7, 1.3) * np.exp(2j * np.pi * rng.uniform())) for a in (az, az + sep)]
        tr = synthesize_csi(Paths.from_signatures(sigs), radio, 100, ImpairmentSpec(seed=trial, snr_db=20), geometry)
        csi, _ = sanitize_trace(tr.csi, radio.subcarrier_spacing_hz)
        peaks = find_peaks(estimate_frame(csi, radio, geometry, SearchConfig(mode="exhaustive")), 2)
        truth = [(az, el), (az + sep, el)]
        hits += all(any(abs(p[0] - t[0]) <= 2 and abs(p[1] - t[1]) <= 2 for p in peaks) for t in truth)
    ok = hits >= 45
    report(capsys, 2, ok, f"both paths within 2 deg in {hits}/50 trials")
    assert ok


def test_criterion_03_sanitizer(capsys, radio, geometry):
    worst_sigma = worst_amp = worst_phase = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        sigs = [(PathSignature(Direction(float(rng.uniform(0, 180)), float(rng.uniform(0, 180))),
                               float(rng.uniform(-80, 80)), float(rng.uniform(0, 60e-9))),
                 rng.uniform(0.2, 1.0) * np.exp(2j * np.pi * rng.uniform())) for _ in range(3)]
        paths = Paths.from_signatures(sigs)
        raw = synthesize_csi(paths, radio, 33, ImpairmentSpec(50e-9, True, None, seed=seed), geometry).csi
        clean, _ = sanitize_trace(raw, radio.subcarrier_spacing_hz)
        for p, q in zip(raw, clean):
            worst_sigma = max(worst_sigma, abs(fit_linear_offset(q, radio.subcarrier_spacing_hz).sigma))
            worst_amp = max(worst_amp, float(np.max(np.abs(np.abs(q) - np.abs(p)))))
            d = np.angle((q * q[0, 0].conj()) * (p * p[0, 0].conj()).conj())
            worst_phase = max(worst_phase, float(np.max(np.abs(d))))
    ok = worst_sigma < 1e-12 and worst_amp < 1e-9 and worst_phase < 1e-9
    report(capsys, 3, ok, f"residual |sigma| {worst_sigma:.1e} s, amplitude {worst_amp:.1e}, "
                          f"relative phase {worst_phase:.1e} rad")
    assert ok


def _footprint(az, el, dilate=3):
    m = np.zeros((180, 180), bool)
    m[np.clip(np.round(el).astype(int), 0, 179), np.clip(np.round(az).astype(int), 0, 179)] = True
    return binary_dilation(m, iterations=dilate)


def test_criterion_04_clutter_removal(capsys, demo_cfg, demo_images):
    desc = demo_cfg.scene
    # static-only room at the demo settings
    static_scene = dataclasses.replace(desc.scene, body_frames=[])
    tr = simulate_receiver(static_scene, 0, desc.radio, desc.impairments, desc.packets_per_frame, 30)
    csi, _ = sanitize_trace(tr.csi, desc.radio.subcarrier_spacing_hz)
    frames = [estimate_frame(csi[s], desc.radio).values for s in frame_windows(len(csi), desc.packets_per_frame)]
    prof = estimate_static(frames)
    energy = max(np.sum(subtract_static(f, prof) ** 2) / np.sum(f ** 2) for f in frames)

    # labelled second-bounce and direct-path pixels on the walking scene
    scene = desc.scene
    zeroed, kept = [], []
    for r in range(2):
        rx = scene.rx_poses[r]
        bodies = body_images(list(demo_images[r]), demo_cfg.static_window, demo_cfg.kappa)
        prof = estimate_static(list(demo_images[r]))
        for f in range(15, 30):
            body = scene.body(f)
            direct = _footprint(*vector_to_angles(rx.to_local(body.positions)))
            bounce = second_bounce_paths(body, scene.walls, tx=scene.tx_pose, rx=rx,
                                         specular_exponent=scene.specular_exponent)
            g = np.abs(bounce.gain)
            strong = g >= 0.05 * g.max()
            bounce_only = _footprint(bounce.azimuth_deg[strong], bounce.elevation_deg[strong]) & ~direct
            if bounce_only.any():
                zeroed.append(np.mean(bodies[f].values[bounce_only] == 0))
            residual = subtract_static(demo_images[r][f], prof)
            peak = np.unravel_index(np.argmax(np.where(direct, residual, -1.0)), residual.shape)
            kept.append(bodies[f].values[peak] > 0)
    zeroed, kept = float(np.mean(zeroed)), float(np.mean(kept))
    ok = energy < 0.01 and zeroed >= 0.9 and kept >= 0.9
    report(capsys, 4, ok, f"static residual energy {energy:.1e} of frame, second-bounce pixels zeroed "
                          f"{zeroed:.0%}, direct peaks kept {kept:.0%}")
    assert ok


def test_criterion_05_specularity(capsys, demo_cfg, demo_images):
    assert demo_cfg.scene.scene.specular_exponent == 4.0
    cover = []
    for r in range(2):
        bodies = body_images(list(demo_images[r]), demo_cfg.static_window, demo_cfg.kappa)
        window = [b.values for b in bodies[15:30]]
        composite = np.max(window, axis=0)
        cover += [support_coverage(v, composite) for v in window]
    mean = float(np.mean(cover))
    ok = mean < 0.7
    report(capsys, 5, ok, f"mean single-frame coverage of the 15-frame composite {mean:.0%}")
    assert ok


def test_criterion_06_losses_and_metrics(capsys):
    gt = BodyParams()
    g = np.zeros(72)
    g[5] = 0.1
    b = np.zeros(10)
    b[2] = 1.0
    same = param_loss([gt], [gt])
    pose = param_loss([BodyParams(gamma=g)], [gt])
    shape = param_loss([BodyParams(beta=b)], [gt])
    a = smpl_map(np.zeros(10), np.zeros(72))
    moved = smpl_map(np.zeros(10), np.zeros(72), (0.01, 0.0, 0.0))
    pv, mj = pve(moved, a), mpjpe(moved.joints, a.joints)
    ok = (same == (0.0, 0.0, 0.0) and np.allclose(pose, (0.1, 0, 0.1), atol=1e-15)
          and np.allclose(shape, (0, 1.0, 0.05), atol=1e-15) and abs(pv - 1.0) < 1e-12
          and abs(mj - 1.0) < 1e-12 and (POSE_LOSS_WEIGHT, SHAPE_LOSS_WEIGHT) == (1.0, 0.05))
    report(capsys, 6, ok, f"losses {same}, {tuple(round(x, 12) for x in pose)}, "
                          f"{tuple(round(x, 12) for x in shape)}; PVE {pv:.12f} cm, MPJPE {mj:.12f} cm")
    assert ok


def test_criterion_07_body_model(capsys):
    rng = np.random.default_rng(0)
    beta = rng.uniform(-2, 2, size=10)
    ref = bone_lengths(smpl_map(beta, np.zeros(72)).joints)
    worst = max(np.max(np.abs(bone_lengths(smpl_map(beta, rng.uniform(-2, 2, 72)).joints) - ref))
                for _ in range(100))
    zero = smpl_map(np.zeros(10), np.zeros(72))
    joints, verts, _ = DEFAULT_MODEL.shaped_template(np.zeros(10))
    template_err = max(np.max(np.abs(zero.vertices - verts)), np.max(np.abs(zero.joints - joints)))
    length = len(BodyParams().vector())
    ok = worst < 1e-9 and template_err < 1e-15 and length == 82
    report(capsys, 7, ok, f"bone length drift {worst:.1e} m, zero config vs template {template_err:.1e} m, "
                          f"vector length {length}")
    assert ok


def test_criterion_08_fitter(capsys, demo_cfg):
    scene = demo_cfg.scene.scene
    truth = standing_params((0.1, 2.4), beta=np.r_[1.0, 0.5, np.zeros(8)])
    render = RenderConfig()
    obj = Objective(np.zeros((1, 2, 180, 180)), scene.rx_poses, scene.tx_pose.position, FitConfig(), render)
    window = 15
    observed = np.stack([np.stack(obj.renders(truth))] * window)
    gt = smpl_map(truth.beta, truth.gamma, truth.translation).joints
    init = [BodyParams(translation=truth.translation + np.array([0.08, -0.1, 0.03])) for _ in range(window)]
    baseline = mpjpe(smpl_map(init[0].beta, init[0].gamma, init[0].translation).joints, gt)

    t0 = time.perf_counter()
    res = fit_sequence(observed, scene.rx_poses, scene.tx_pose.position, FitConfig(max_iters=60), render, init=init)
    elapsed = time.perf_counter() - t0
    fitted = float(np.mean([mpjpe(smpl_map(p.beta, p.gamma, p.translation).joints, gt) for p in res.params_seq]))

    fixed = fit_sequence(observed, scene.rx_poses, scene.tx_pose.position, FitConfig(), render, init=[truth] * window)
    fixed_err = max(mpjpe(smpl_map(p.beta, p.gamma, p.translation).joints, gt) for p in fixed.params_seq)
    ok = fitted < 0.5 * baseline and fixed_err == 0.0 and elapsed < 600
    report(capsys, 8, ok, f"fitted MPJPE {fitted:.1f} cm vs template baseline {baseline:.1f} cm "
                          f"({fitted / baseline:.0%}), fixed point {fixed_err:.1f} cm, window fit {elapsed:.0f} s")
    assert ok


def test_criterion_09_search_cost(capsys, radio, geometry):
    ratios, same = [], 0
    for seed in range(50):
        rng = np.random.default_rng(500 + seed)
        sigs = []
        for _ in range(int(rng.integers(1, 3))):
            d = Direction(float(rng.integers(10, 171)), float(rng.integers(20, 161)))
            sigs.append((PathSignature(d, rng.uniform(-60, 60), rng.uniform(0, 60e-9)),
                         rng.uniform(0.5, 1.0) * np.exp(2j * np.pi * rng.uniform())))
        tr = synthesize_csi(Paths.from_signatures(sigs), radio, 33, ImpairmentSpec(seed=seed, snr_db=20), geometry)
        csi, _ = sanitize_trace(tr.csi, radio.subcarrier_spacing_hz)
        ex = estimate_frame(csi, radio, geometry, SearchConfig(mode="exhaustive"))
        co = estimate_frame(csi, radio, geometry, SearchConfig(mode="coarse_to_fine"))
        ratios.append(co.meta["evaluations"] / ex.meta["evaluations"])
        same += co.argmax() == ex.argmax()
    ok = max(ratios) < 0.2 and same == 50
    report(capsys, 9, ok, f"coarse/exhaustive evaluations max {max(ratios):.1%}, identical argmax {same}/50")
    assert ok


def _snapshot(folder: Path) -> dict:
    skip = {"timings.json", "bench_timings.json"}
    return {p.relative_to(folder).as_posix(): p.read_bytes()
            for p in sorted(folder.rglob("*")) if p.is_file() and p.name not in skip}


def test_criterion_10_determinism(capsys, tmp_path):
    cfg = demo_scene_dict(16)
    cfg["fit"] = {"max_iters": 2, "sigma_schedule": [2.0]}
    cfg["render"] = {"samples": 100}
    path = tmp_path / "scene.json"
    path.write_text(json.dumps(cfg))
    common = ["--config", str(path), "--seed", "7"]

    def run_all(out: Path):
        steps = [
            ["simulate", *common],
            ["sanitize", str(out / "rx0.wcsi"), str(out / "rx1.wcsi")],
            ["estimate", str(out / "rx0.clean.wcsi"), str(out / "rx1.clean.wcsi"), *common],
            ["extract", str(out / "rx0.aoa.npy"), str(out / "rx1.aoa.npy"), *common],
            ["fit", str(out / "tensor.wmt"), *common],
            ["eval", str(out / "fit.json"), str(out / "truth.json")],
            ["bench", *common],
        ]
        for step in steps:
            assert main([*step, "--out", str(out)]) == 0, step
        assert main(["pipeline", *common, "--out", str(out / "pipeline")]) == 0

    run_all(tmp_path / "a")
    run_all(tmp_path / "b")
    a, b = _snapshot(tmp_path / "a"), _snapshot(tmp_path / "b")
    differing = sorted(k for k in a if a[k] != b.get(k))
    ok = a.keys() == b.keys() and not differing and len(a) > 20
    report(capsys, 10, ok, f"{len(a)} output files from 8 subcommands, {len(differing)} differ between reruns")
    assert ok
