import numpy as np
import pytest

from seaintent.errors import InvalidArgument
from seaintent.geo import Scenario, Trajectory, compute_encounter_mask
from seaintent.scenario_io import INDEX_NAME, LABELS_NAME, load_dataset, read_labels
from seaintent.synthetic import SynthConfig, _track, generate, heading_program, prototype_modes, template_mode, write_corpus

import oracles


def test_config_validation():
    with pytest.raises(InvalidArgument):
        SynthConfig(turn_angles=(0.0,))
    with pytest.raises(InvalidArgument):
        SynthConfig(noise_deg=-1.0)
    assert SynthConfig().K_modes == 3 and SynthConfig().L == 18


def test_heading_program_shapes():
    cfg = SynthConfig()
    assert heading_program(cfg, 0).tolist() == [0.0] * 17
    left = heading_program(cfg, 1)
    assert left[:cfg.turn_start - 1].tolist() == [0.0] * (cfg.turn_start - 1)
    assert left.max() == 60.0 and np.all(np.diff(left) >= 0)
    np.testing.assert_array_equal(heading_program(cfg, 2), -left)


def test_noise_free_templates_recovered_exactly():
    cfg = SynthConfig(n_scenarios=60, noise_deg=0.0, seed=5)
    corpus = generate(cfg)
    for scn, modes in zip(corpus.scenarios, corpus.modes):
        for traj, mode in zip(scn.trajectories, modes):
            assert template_mode(traj.points, cfg) == mode


def test_noise_free_tracks_hold_heading_between_turns():
    cfg = SynthConfig(noise_deg=0.0)
    pts = _track(cfg, (122.1, 30.1), 45.0, 10.0, 0, 1.0, 1.0)
    step = np.diff(pts, axis=0)
    bearing = np.arctan2(step[:, 0] * np.cos(np.radians(pts[:-1, 1])), step[:, 1])
    assert np.ptp(bearing) < 1e-6


def test_head_on_pair_matches_cpa_oracle():
    cfg = SynthConfig(noise_deg=0.0)
    # 10 kn each, reciprocal courses on one meridian, 1 nm apart at the last observation
    north = _track(cfg, (122.1, 30.0), 0.0, 10.0, 0, 1.0, 1.0)
    south = _track(cfg, (122.1, 30.0), 180.0, 10.0, 0, 1.0, 1.0)
    south = south + (north[cfg.L_o - 1] - south[cfg.L_o - 1]) + [0.0, 1852.0 / 111_194.9]
    scn = Scenario([Trajectory(north, "1", 0.0, 30.0), Trajectory(south, "2", 0.0, 30.0)])
    obs = scn.split(cfg.L_o)[0]
    ours = compute_encounter_mask(obs)
    oracle = oracles.mask([t.points for t in obs.trajectories], 30.0)
    np.testing.assert_array_equal(ours, oracle)
    assert ours.tolist() == [[0, 1], [1, 0]]


def test_generated_masks_agree_with_oracle_geometry():
    cfg = SynthConfig(n_scenarios=30, encounter_fraction=0.6, noise_deg=0.0, seed=7)
    corpus = generate(cfg)
    assert any(m.any() for m in corpus.masks)
    for scn, want in zip(corpus.scenarios, corpus.masks):
        obs = [t.points[:cfg.L_o] for t in scn.trajectories]
        np.testing.assert_array_equal(oracles.mask(obs, cfg.dt_s), want)


def test_same_seed_same_bytes(tmp_path):
    cfg = SynthConfig(n_scenarios=8, seed=11)
    a = write_corpus(tmp_path / "a", generate(cfg), cfg)
    b = write_corpus(tmp_path / "b", generate(cfg), cfg)
    for p, q in zip(a, b):
        assert p.read_bytes() == q.read_bytes()
    for name in (INDEX_NAME, LABELS_NAME):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    other = write_corpus(tmp_path / "c", generate(SynthConfig(n_scenarios=8, seed=12)), cfg)
    assert other[0].read_bytes() != a[0].read_bytes()


def test_written_corpus_loads_like_preprocessed_data(tmp_path):
    cfg = SynthConfig(n_scenarios=5, seed=3)
    corpus = generate(cfg)
    write_corpus(tmp_path, corpus, cfg)
    items = load_dataset(tmp_path)
    assert len(items) == 5
    for it, scn in zip(items, corpus.scenarios):
        assert (it.L_o, it.L_p) == (6, 12) and it.scenario.m == scn.m
    labels = read_labels(tmp_path)
    assert labels["mode_names"] == ["straight", "left", "right"]
    assert labels["scenarios"][items[0].path]["modes"] == corpus.modes[0].tolist()


def test_prototype_modes_majority():
    clusters = np.array([0, 0, 0, 1, 1, 2])
    modes = np.array([2, 2, 1, 0, 0, 1])
    assert prototype_modes(clusters, modes, 4).tolist() == [2, 0, 1, -1]
