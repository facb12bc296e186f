"""Fit a noiseless single-pose window from a template start and report MPJPE.

Observations are the fitter's own renders of the true body, so this checks
the optimizer rather than the radio chain.
"""

import argparse
import time

import numpy as np

from wimesh.body_model import BodyParams, mpjpe, pve, smpl_map
from wimesh.fitter import FitConfig, Objective, RenderConfig, fit_sequence
from wimesh.scenes import demo_scene_dict, scene_from_dict, standing_params


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--window", type=int, default=15)
    ap.add_argument("--iters", type=int, default=60)
    ap.add_argument("--offset", type=float, nargs=3, default=(0.08, -0.1, 0.03),
                    help="initial translation error in meters")
    args = ap.parse_args()

    scene = scene_from_dict(demo_scene_dict(1)).scene
    truth = standing_params((0.1, 2.4), beta=np.r_[1.0, 0.5, np.zeros(8)])
    render = RenderConfig()
    obj = Objective(np.zeros((1, 2, 180, 180)), scene.rx_poses, scene.tx_pose.position, FitConfig(), render)
    observed = np.stack([np.stack(obj.renders(truth))] * args.window)
    gt = smpl_map(truth.beta, truth.gamma, truth.translation)
    init = [BodyParams(translation=truth.translation + np.asarray(args.offset)) for _ in range(args.window)]
    start = smpl_map(init[0].beta, init[0].gamma, init[0].translation)
    print(f"template baseline: MPJPE {mpjpe(start.joints, gt.joints):.2f} cm, PVE {pve(start, gt):.2f} cm")

    t0 = time.perf_counter()
    res = fit_sequence(observed, scene.rx_poses, scene.tx_pose.position, FitConfig(max_iters=args.iters),
                       render, init=init)
    meshes = [smpl_map(p.beta, p.gamma, p.translation) for p in res.params_seq]
    print(f"fitted ({res.iterations} iterations, {time.perf_counter() - t0:.0f} s): "
          f"MPJPE {np.mean([mpjpe(m.joints, gt.joints) for m in meshes]):.2f} cm, "
          f"PVE {np.mean([pve(m, gt) for m in meshes]):.2f} cm")
    print(f"objective {res.objective_trace[0]:.4f} -> {res.objective_trace[-1]:.4f}")


if __name__ == "__main__":
    main()
