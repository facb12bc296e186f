import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wimesh.array_model import SPEED_OF_LIGHT, RadioConfig, Direction, PathSignature, joint_steering_vector
from wimesh.body_model import BodyParams, smpl_map, surface_samples
from wimesh.scenes import demo_scene_dict, scene_from_dict, standing_params
from wimesh.simulator import (
    PATH_KINDS,
    ImpairmentSpec,
    Paths,
    Pose,
    Scene,
    ScattererSet,
    animate_body,
    clean_channel,
    scene_to_paths,
    simulate_receiver,
    single_bounce_paths,
    synthesize_csi,
)


def one_path_scene(point, los=False):
    tx = Pose((0.0, 0.3, 1.0))
    rx = Pose((-1.0, 0.0, 1.0))
    return Scene(tx, [rx], ScattererSet(np.asarray(point, float)[None], [1.0]), include_los=los)


def test_empty_scene():
    scene = Scene(Pose((0, 1, 1)), [Pose((0, 0, 1))], include_los=False)
    assert len(scene_to_paths(scene, 0, 0)) == 0


def test_scatterer_overhead():
    h = 1.7
    dev = Pose((0.5, 0.0, 1.0))
    paths = single_bounce_paths(ScattererSet([[0.5, 0.0, 1.0 + h]], [1.0]), dev, dev, "static")
    assert paths.elevation_deg[0] == pytest.approx(0.0, abs=1e-9)
    assert paths.tof_s[0] == pytest.approx(2 * h / SPEED_OF_LIGHT, rel=1e-12)


def test_behind_array_rejected():
    with pytest.raises(ValueError):
        single_bounce_paths(ScattererSet([[0.0, -0.5, 1.0]], [1.0]), Pose((0, 1, 1)), Pose((0, 0, 1)), "body")


def test_los_dominates_body_paths_in_demo():
    desc = scene_from_dict(demo_scene_dict(30))
    scene = desc.scene
    for r in range(len(scene.rx_poses)):
        for f in range(scene.num_frames):
            paths = scene_to_paths(scene, r, f)
            los = np.abs(paths.gain[paths.kind == PATH_KINDS.index("los")])
            body = np.abs(paths.gain[paths.kind == PATH_KINDS.index("body")])
            assert los.max() > body.max()


def test_single_path_exact(radio, geometry):
    sig = PathSignature(Direction(70, 100), -25.0, 31e-9)
    g = 0.3 - 0.2j
    tr = synthesize_csi(Paths.from_signatures([(sig, g)]), radio, 3, ImpairmentSpec.off(), geometry)
    expected = g * joint_steering_vector(radio, geometry, sig)
    for p in tr.csi:
        np.testing.assert_allclose(p.reshape(-1), expected, rtol=0, atol=1e-15)


@given(st.integers(0, 1000))
def test_impairments_are_pure_phase(seed):
    scene = one_path_scene((0.4, 2.5, 1.3))
    imp = ImpairmentSpec(sto_slope_std_s=50e-9, common_phase=True, snr_db=None, seed=seed)
    tr = synthesize_csi(scene_to_paths(scene, 0, 0), RadioConfig(), 6, imp)
    amps = np.abs(tr.csi)
    np.testing.assert_allclose(amps, np.broadcast_to(amps[0], amps.shape), rtol=1e-12)


def test_snr_calibration(radio, geometry):
    scene = one_path_scene((0.4, 2.5, 1.3), los=True)
    paths = scene_to_paths(scene, 0, 0)
    n = 150  # 150 * 810 > 1e5 samples
    clean = synthesize_csi(paths, radio, n, ImpairmentSpec.off(), geometry).csi
    noisy = synthesize_csi(paths, radio, n, ImpairmentSpec(0.0, False, 20.0, seed=4), geometry).csi
    noise = noisy - clean
    measured = 10 * np.log10(np.mean(np.abs(clean) ** 2) / np.mean(np.abs(noise) ** 2))
    assert noise.size >= 1e5
    assert abs(measured - 20.0) <= 0.5


def test_linearity(radio, geometry):
    a = one_path_scene((0.4, 2.5, 1.3))
    b = one_path_scene((-0.6, 3.1, 0.5), los=True)
    union = Scene(a.tx_pose, a.rx_poses, a.static_reflectors.concat(b.static_reflectors), include_los=True)
    imp = ImpairmentSpec(sto_slope_std_s=30e-9, common_phase=True, snr_db=None, seed=11)
    h = [synthesize_csi(scene_to_paths(s, 0, 0), radio, 4, imp, geometry).csi for s in (a, b, union)]
    np.testing.assert_allclose(h[0] + h[1], h[2], atol=1e-9)


def test_common_phase_leaves_outer_product(radio, geometry):
    rng = np.random.default_rng(5)
    for _ in range(5):
        x = rng.normal(size=810) + 1j * rng.normal(size=810)
        y = x * np.exp(1j * rng.uniform(0, 2 * np.pi))
        np.testing.assert_allclose(np.outer(y, y.conj()), np.outer(x, x.conj()), atol=1e-9)
    # and through the simulator: common phase on vs off gives identical outer products
    paths = scene_to_paths(one_path_scene((0.4, 2.5, 1.3), los=True), 0, 0)
    on = synthesize_csi(paths, radio, 3, ImpairmentSpec(0.0, True, None, seed=2), geometry).csi
    off = synthesize_csi(paths, radio, 3, ImpairmentSpec(0.0, False, None, seed=2), geometry).csi
    for p, q in zip(on, off):
        p, q = p.reshape(-1), q.reshape(-1)
        np.testing.assert_allclose(np.outer(p, p.conj()), np.outer(q, q.conj()), atol=1e-9)


def test_clean_channel_empty(radio, geometry):
    assert not np.any(clean_channel(Paths.empty(), radio, geometry))


def test_packets_and_timestamps(radio):
    desc = scene_from_dict(demo_scene_dict(3))
    tr = simulate_receiver(desc.scene, 1, radio, ImpairmentSpec.off(), packets_per_frame=5)
    assert tr.csi.shape == (15, 3, 9, 30)
    assert np.all(np.diff(tr.timestamps_ns) == 1_000_000)
    assert tr.receiver_index == 1


def _barycentric_residual(p, tri):
    a, b, c = tri
    m = np.stack([b - a, c - a], axis=1)
    uv, *_ = np.linalg.lstsq(m, p - a, rcond=None)
    return np.linalg.norm(m @ uv - (p - a)), uv


def test_samples_on_template_surface():
    frames = animate_body([BodyParams()], samples_per_frame=200, seed=3)
    samples = surface_samples(200, seed=3)
    mesh = smpl_map(np.zeros(10), np.zeros(72))
    for p, f in zip(frames[0].positions, samples.faces):
        dist, (u, v) = _barycentric_residual(p, mesh.vertices[mesh.faces[f]])
        assert dist < 1e-3
        assert u > -1e-9 and v > -1e-9 and u + v < 1 + 1e-9


def test_rigid_translation_moves_samples():
    base = standing_params((0.0, 2.5))
    moved = BodyParams(base.beta, base.gamma, base.translation + np.array([0.3, -0.2, 0.1]))
    a, b = animate_body([base, moved], samples_per_frame=150)
    np.testing.assert_allclose(b.positions - a.positions, np.broadcast_to([0.3, -0.2, 0.1], a.positions.shape),
                               atol=1e-12)


def test_identical_frames_identical_samples():
    p = standing_params((0.2, 2.8))
    a, b = animate_body([p, p.copy()], samples_per_frame=120, seed=9)
    np.testing.assert_array_equal(a.positions, b.positions)
    c, = animate_body([p], samples_per_frame=120, seed=9)
    np.testing.assert_array_equal(a.positions, c.positions)
