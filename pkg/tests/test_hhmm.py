import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import hmm_enumerate, normal_pdf
from phaseflow.dataio import ConfidenceSequence
from phaseflow.errors import DataError, NumericalError
from phaseflow.gmm import GaussianMixture, GmmFitConfig
from phaseflow.hhmm import (ForwardState, HhmmModel, HhmmTrainConfig, bottom_state_count,
                            forward_filter, forward_init, forward_loglik, forward_step,
                            forward_step_log, hhmm_predict_online, hhmm_train, load_hhmm,
                            models_equal, predict_phase, save_hhmm)
from phaseflow.svm import SvmTrainConfig, svm_score_sequence, svm_train
from phaseflow.synth import preset_config, synth_generate
from phaseflow.workflow import LabelSequence, PhaseSet, TransitionGraph, estimate_transitions


def flat_model(pi, A, means, variances=None, num_phases=None):
    """One 1-D Gaussian bottom state per phase."""
    S = len(pi)
    variances = np.ones(S) if variances is None else variances
    phases = PhaseSet.default(num_phases or max(S, 2))
    em = tuple(GaussianMixture([1.0], [[m]], [[v]]) for m, v in zip(means, variances))
    return HhmmModel(phases, np.arange(S), np.asarray(A, float), np.asarray(pi, float), em)


def oracle_emissions(means, variances, obs):
    return [[normal_pdf(x, m, v) for m, v in zip(means, variances)] for x in obs]


TWO_STATE = dict(pi=[1.0, 0.0], A=[[0.9, 0.1], [0.1, 0.9]], means=[0.0, 5.0])


def test_two_state_matches_path_enumeration():
    model = flat_model(**TWO_STATE)
    obs = [0.0, 0.0, 5.0]
    dists, ll = forward_filter(model, np.array(obs)[:, None])
    ref_ll, ref_post = hmm_enumerate(TWO_STATE["pi"], TWO_STATE["A"],
                                     oracle_emissions([0, 5], [1, 1], obs))
    np.testing.assert_allclose(dists, ref_post, rtol=0, atol=1e-12)
    assert ll == pytest.approx(ref_ll, abs=1e-10)


def test_single_frame_loglik_base_case():
    model = flat_model([0.3, 0.7], [[0.5, 0.5], [0.5, 0.5]], [0.0, 2.0], [1.0, 0.5])
    x = 0.8
    ref = math.log(0.3 * normal_pdf(x, 0, 1) + 0.7 * normal_pdf(x, 2, 0.5))
    assert forward_loglik(model, [[x]]) == pytest.approx(ref, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4), st.integers(1, 8))
def test_random_models_match_enumeration(seed, S, T):
    rng = np.random.default_rng(seed)
    pi = rng.dirichlet(np.ones(S))
    A = rng.dirichlet(np.ones(S), size=S)
    A /= A.sum(axis=1, keepdims=True)
    means = rng.normal(0, 2, S)
    variances = rng.uniform(0.3, 2.0, S)
    obs = rng.normal(0, 2, T)
    model = flat_model(pi, A, means, variances)
    dists, ll = forward_filter(model, obs[:, None])
    ref_ll, ref_post = hmm_enumerate(pi, A, oracle_emissions(means, variances, obs))
    ref_post = np.array(ref_post)
    if S == 1:
        ref_post = np.column_stack([ref_post, np.zeros(T)])
    np.testing.assert_allclose(dists, ref_post, rtol=1e-9, atol=1e-12)
    assert ll == pytest.approx(ref_ll, rel=1e-9, abs=1e-12)


def test_forward_init_examples():
    onehot = flat_model([0, 0, 1, 0], np.eye(4), [0, 1, 2, 3])
    st0 = forward_init(onehot)
    assert st0.alpha.tolist() == [0, 0, 1, 0] and st0.t == 0 and st0.log_scale == 0.0
    uniform = flat_model([0.25] * 4, np.eye(4), [0, 1, 2, 3])
    assert forward_init(uniform).alpha.tolist() == [0.25] * 4


def test_single_state_model():
    model = flat_model([1.0], [[1.0]], [0.0])
    state = forward_init(model)
    for x in (0.0, 3.0, -1.0):
        state, dist = forward_step(model, state, [x])
        assert state.alpha.tolist() == [1.0]
        assert dist.tolist() == [1.0, 0.0]


def test_uninformative_observation_is_pure_propagation():
    rng = np.random.default_rng(0)
    A = rng.dirichlet(np.ones(3), size=3)
    A /= A.sum(axis=1, keepdims=True)
    model = flat_model([0.2, 0.5, 0.3], A, [0, 1, 2])
    state, _ = forward_step(model, forward_init(model), [0.4])
    before = state.log_scale
    state2, dist = forward_step_log(model, state, np.zeros(3))
    expected = state.alpha @ A
    np.testing.assert_allclose(state2.alpha, expected / expected.sum(), rtol=0, atol=1e-15)
    assert state2.log_scale == before


def test_scaling_invariance_of_emissions():
    rng = np.random.default_rng(1)
    A = rng.dirichlet(np.ones(4), size=4)
    A /= A.sum(axis=1, keepdims=True)
    model = flat_model(np.full(4, 0.25), A, [0, 1, 2, 3])
    state = forward_init(model)
    for _ in range(5):
        le = rng.normal(size=4)
        a, da = forward_step_log(model, state, le)
        b, db = forward_step_log(model, state, le + 7.3)
        np.testing.assert_allclose(a.alpha, b.alpha, rtol=0, atol=1e-12)
        np.testing.assert_allclose(da, db, rtol=0, atol=1e-12)
        state = a


def test_alpha_stays_normalized_over_long_sequences():
    model = flat_model(**TWO_STATE)
    obs = np.random.default_rng(2).normal(2.5, 3, 4000)[:, None]
    state = forward_init(model)
    for x in obs:
        state, dist = forward_step(model, state, x)
        assert abs(state.alpha.sum() - 1) < 1e-12
        assert abs(dist.sum() - 1) < 1e-12
    assert np.isfinite(state.log_scale)


@pytest.mark.parametrize("dist,expected", [((0.1, 0.9), 1), ((0.5, 0.5), 0), ((0.2, 0.3, 0.5), 2)])
def test_predict_phase(dist, expected):
    assert predict_phase(dist) == expected


def test_unreachable_emission_raises():
    model = flat_model(**TWO_STATE)
    with pytest.raises(NumericalError, match="frame 0"):
        forward_step_log(model, forward_init(model), np.array([-np.inf, 0.0]))


def test_observation_dimension_checked():
    model = flat_model(**TWO_STATE)
    with pytest.raises(DataError):
        forward_step(model, forward_init(model), [0.0, 1.0])


def test_invalid_models():
    with pytest.raises(DataError, match="row-stochastic"):
        flat_model([1, 0], [[0.5, 0.6], [0, 1]], [0, 1])
    with pytest.raises(DataError, match="initial"):
        flat_model([0.5, 0.6], np.eye(2), [0, 1])


@pytest.mark.parametrize("dur,expected", [(100, 2), (10, 1), (2000, 20), (75, 2), (74.9, 1)])
def test_bottom_state_count(dur, expected):
    assert bottom_state_count(dur, 50, 20) == expected


def _labelled(durations, dim=3, seed=0):
    """Videos walking a chain with fixed per-phase durations."""
    rng = np.random.default_rng(seed)
    confs, labs = [], []
    for v in range(3):
        lab = np.repeat(np.arange(len(durations)), durations)
        X = np.eye(dim)[lab] * 3 + rng.normal(0, 0.3, (lab.size, dim))
        confs.append(ConfidenceSequence(X, f"v{v}"))
        labs.append(LabelSequence(lab, f"v{v}"))
    return confs, labs


def test_training_structure():
    confs, labs = _labelled([100, 10, 2000])
    graph = estimate_transitions(labs, PhaseSet.default(3), 0.0)
    model = hhmm_train(confs, labs, graph, HhmmTrainConfig(gmm=GmmFitConfig(K=2)))
    assert model.bottom_counts.tolist() == [2, 1, 20]
    assert model.structure_violations(graph) == []
    # dwell per bottom state of phase 0 is 50 frames
    assert model.transmat[0, 0] == pytest.approx(1 - 1 / 50)
    # pi concentrates on the first state of phase 0
    assert model.initial[0] == pytest.approx(1.0, abs=1e-5)
    assert abs(model.initial.sum() - 1) < 1e-12
    # last phase is absorbing
    assert model.transmat[-1, -1] == 1.0


def test_training_errors():
    confs, labs = _labelled([5, 5])
    graph = TransitionGraph.chain(3)
    with pytest.raises(DataError, match="never occur"):
        hhmm_train(confs, labs, graph)
    with pytest.raises(DataError):
        hhmm_train(confs[:2], labs, TransitionGraph.chain(2))


@pytest.fixture(scope="module")
def zero_noise_setup():
    cfg = preset_config(num_videos=6, noise_std=0.0, seed=3)
    ds = synth_generate(cfg)
    phases = cfg.phases
    svm = svm_train(ds, phases.count, SvmTrainConfig(lam=1e-2, epochs=10))
    confs = [svm_score_sequence(svm, f) for f in ds.features]
    graph = estimate_transitions(ds.labels, phases, 0.0)
    model = hhmm_train(confs, ds.labels, graph, HhmmTrainConfig())
    return cfg, ds, confs, graph, model


def test_structural_zeros_respected_online(zero_noise_setup):
    cfg, ds, confs, graph, model = zero_noise_setup
    assert model.structure_violations(graph) == []
    for conf, lab in zip(confs, ds.labels):
        pred = np.array(list(hhmm_predict_online(model, conf.scores)))
        for a, b in zip(pred[:-1], pred[1:]):
            assert graph.allowed[a, b]
        np.testing.assert_array_equal(pred, lab.labels)


def test_online_prediction_is_causal(zero_noise_setup):
    _, _, confs, _, model = zero_noise_setup
    X = confs[0].scores
    full = list(hhmm_predict_online(model, X))
    cut = len(X) // 2
    assert list(hhmm_predict_online(model, X[:cut])) == full[:cut]


def test_em_refine_runs_and_keeps_structure():
    confs, labs = _labelled([120, 60, 150], seed=4)
    graph = estimate_transitions(labs, PhaseSet.default(3), 0.0)
    model = hhmm_train(confs, labs, graph, HhmmTrainConfig(em_refine=3))
    assert model.structure_violations(graph) == []
    pred = list(hhmm_predict_online(model, confs[0].scores))
    assert np.mean(np.array(pred) == labs[0].labels) > 0.95


def test_training_is_deterministic():
    confs, labs = _labelled([120, 60, 150], seed=5)
    graph = estimate_transitions(labs, PhaseSet.default(3), 0.0)
    a = hhmm_train(confs, labs, graph, HhmmTrainConfig(seed=3))
    b = hhmm_train(confs, labs, graph, HhmmTrainConfig(seed=3))
    assert models_equal(a, b)


def test_model_file_round_trip(tmp_path, zero_noise_setup):
    model = zero_noise_setup[-1]
    path = tmp_path / "m.hhmm"
    save_hhmm(model, path)
    assert models_equal(load_hhmm(path), model)


def test_forward_states_are_independent_streams():
    model = flat_model(**TWO_STATE)
    s0 = forward_init(model)
    a, _ = forward_step(model, s0, [5.0])
    b, _ = forward_step(model, s0, [0.0])
    assert isinstance(a, ForwardState) and a.log_scale != b.log_scale
    assert s0.alpha.tolist() == [1.0, 0.0]
