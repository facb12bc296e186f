"""Does the fitting objective prefer the true pose over a perturbed one?

For each trial a random major joint of a random demo frame is rotated by
--delta radians about one axis, and the per-frame objective of the truth and
the perturbed pose are compared.  Two kinds of observation are scored: the
renderer's own output for the true bodies, and the body images extracted
from simulated CSI by the MUSIC chain.
"""

import argparse
import dataclasses
import json

import numpy as np

from wimesh.fitter import MAJOR_JOINTS, FitConfig, Objective
from wimesh.pipeline import PipelineConfig, demo_scene_path, estimate, extract, sanitize, simulate


def score(obj, truths, trials, delta):
    wins = 0
    for trial in range(trials):
        rng = np.random.default_rng(trial)
        t = int(rng.integers(len(truths)))
        j, ax = int(rng.choice(MAJOR_JOINTS)), int(rng.integers(3))
        moved = truths[t].copy()
        moved.gamma[3 * j + ax] += delta
        wins += obj.frame_term(t, truths[t]) < obj.frame_term(t, moved)
    return wins


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config", default=str(demo_scene_path()))
    ap.add_argument("--trials", type=int, default=50)
    ap.add_argument("--delta", type=float, default=0.3)
    ap.add_argument("--noiseless", action="store_true", help="drop receiver noise from the CSI simulation")
    ap.add_argument("--blob-sigma", type=float, default=None)
    ap.add_argument("--specular-exponent", type=float, default=None)
    args = ap.parse_args()

    cfg = PipelineConfig.from_dict(json.loads(open(args.config).read()))
    if args.noiseless:
        imp = dataclasses.replace(cfg.scene.impairments, snr_db=None)
        cfg = dataclasses.replace(cfg, scene=dataclasses.replace(cfg.scene, impairments=imp))
    render = cfg.render
    if args.blob_sigma is not None:
        render = dataclasses.replace(render, blob_sigma_deg=args.blob_sigma)
    if args.specular_exponent is not None:
        render = dataclasses.replace(render, specular_exponent=args.specular_exponent)

    ext = extract(cfg, estimate(cfg, sanitize(simulate(cfg))))
    scene = cfg.scene.scene
    truths = [cfg.scene.body_params[i] for i in ext.frame_ids]
    music = Objective(ext.tensor.data, scene.rx_poses, scene.tx_pose.position, FitConfig(), render)
    rendered = np.stack([np.stack(music.renders(p)) for p in truths])
    ideal = Objective(rendered, scene.rx_poses, scene.tx_pose.position, FitConfig(), render)
    noise = "noiseless" if args.noiseless else f"{cfg.impairments.snr_db} dB"
    print(f"truth preferred over a {args.delta} rad joint perturbation:")
    print(f"  rendered observations      {score(ideal, truths, args.trials, args.delta)}/{args.trials}")
    print(f"  MUSIC observations ({noise}) {score(music, truths, args.trials, args.delta)}/{args.trials}")


if __name__ == "__main__":
    main()
