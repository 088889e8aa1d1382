import hashlib

import numpy as np
import pytest

from phaseflow.errors import ConfigError
from phaseflow.synth import SynthConfig, config_from_dict, make_centers, preset_config, synth_generate
from phaseflow.workflow import PhaseSet, TransitionGraph, phase_runs, validate_sequence


def _digest(ds):
    h = hashlib.sha256()
    for f, l in ds:
        h.update(f.data.tobytes())
        h.update(l.labels.tobytes())
    return h.hexdigest()


def test_zero_noise_rows_equal_centers():
    cfg = preset_config(num_videos=3, noise_std=0.0, separation=4.0)
    for f, l in synth_generate(cfg):
        np.testing.assert_array_equal(f.data, cfg.phase_centers[l.labels])


def test_same_seed_is_bit_identical():
    cfg = preset_config(num_videos=4, seed=11)
    assert _digest(synth_generate(cfg)) == _digest(synth_generate(cfg))


def test_distinct_seeds_differ():
    assert _digest(synth_generate(preset_config(num_videos=4, seed=1))) != \
        _digest(synth_generate(preset_config(num_videos=4, seed=2)))


def test_empirical_dwell_close_to_mean():
    cfg = preset_config(num_phases=8, mean_dwell=20, max_len=400, num_videos=10, seed=5)
    lengths = []
    for _, l in synth_generate(cfg):
        runs = phase_runs(l.labels)
        # the final visit may be cut by max_len
        lengths.extend(r[2] for r in runs[:-1])
        if len(l) < cfg.max_len:
            lengths.append(runs[-1][2])
    assert abs(np.mean(lengths) - 20) < 0.3 * 20


def test_chain_sequences_are_valid_and_monotone():
    cfg = preset_config(num_videos=10, seed=3)
    for _, l in synth_generate(cfg):
        assert validate_sequence(cfg.graph, l) == []
        assert np.all(np.diff(l.labels) >= 0)
        assert len(l) <= cfg.max_len


def test_absorbing_phase_ends_the_video():
    cfg = preset_config(num_phases=3, mean_dwell=5, max_len=1000, num_videos=5, seed=0)
    for _, l in synth_generate(cfg):
        assert l.labels[-1] == 2
        assert len(l) < 1000


def test_general_graph_respects_support():
    A = np.array([[0.8, 0.1, 0.1, 0.0],
                  [0.0, 0.7, 0.0, 0.3],
                  [0.2, 0.0, 0.8, 0.0],
                  [0.0, 0.0, 0.0, 1.0]])
    phases = PhaseSet.default(4)
    cfg = SynthConfig(phases, TransitionGraph(A), 6.0, make_centers(4, 3, 2.0, seed=1),
                      1.0, 20, 200, seed=9)
    ds = synth_generate(cfg)
    for _, l in ds:
        assert validate_sequence(cfg.graph, l) == []
        # the walk never picks a self-transition as the next phase
        for a, b in zip(l.labels[:-1], l.labels[1:]):
            assert a == b or A[a, b] > 0


def test_centers_separation():
    c = make_centers(8, 16, 2.0)
    d = np.sqrt(((c[:, None] - c[None]) ** 2).sum(-1))
    np.testing.assert_allclose(d[np.triu_indices(8, 1)], 2.0)
    c = make_centers(8, 3, 2.0, seed=4)
    d = np.sqrt(((c[:, None] - c[None]) ** 2).sum(-1))[np.triu_indices(8, 1)]
    assert d.min() == pytest.approx(2.0)


def test_hard_preset_lowers_separation():
    cfg = preset_config(hard=True, noise_std=2.0)
    d = np.linalg.norm(cfg.phase_centers[0] - cfg.phase_centers[1])
    assert d == pytest.approx(0.5 * 2.0)


def test_invalid_configs():
    phases = PhaseSet.default(3)
    g = TransitionGraph.chain(3)
    with pytest.raises(ConfigError, match="distinct"):
        SynthConfig(phases, g, 10.0, np.zeros((3, 2)), 1.0, 1, 10)
    with pytest.raises(ConfigError, match="max_len"):
        SynthConfig(phases, g, 10.0, np.eye(3), 1.0, 1, 2)
    with pytest.raises(ConfigError, match="unknown"):
        config_from_dict({"bogus": 1})


def test_config_from_dict_defaults():
    cfg = config_from_dict({"num_videos": 2, "seed": 4})
    assert cfg.phases.count == 8 and cfg.feature_dim == 16 and cfg.num_videos == 2
