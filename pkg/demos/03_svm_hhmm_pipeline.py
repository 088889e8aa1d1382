"""Frame-wise SVM confidences filtered online by the hierarchical HMM."""
# %%
import numpy as np

from phaseflow.hhmm import HhmmTrainConfig, forward_init, forward_step, hhmm_train, predict_phase
from phaseflow.metrics import evaluate_dataset
from phaseflow.svm import SvmTrainConfig, svm_predict, svm_score_sequence, svm_train
from phaseflow.synth import preset_config, synth_generate
from phaseflow.workflow import estimate_transitions

cfg = preset_config(num_videos=15, seed=1)
ds = synth_generate(cfg)
train, test = ds.subset(range(10)), ds.subset(range(10, 15))

# %% One-vs-all linear SVM on raw features.
svm = svm_train(train, cfg.phases, SvmTrainConfig(lam=1e-2, epochs=20))
conf = [svm_score_sequence(svm, f) for f in train.features]

# %% HHMM over the confidence vectors; the graph comes from the training labels.
graph = estimate_transitions(train.labels, cfg.phases, 0.0)
hmm = hhmm_train(conf, train.labels, graph, HhmmTrainConfig(), cfg.phases)
print("bottom states per phase:", hmm.bottom_counts)

# %% Online filtering, one frame at a time.
preds = []
for f in test.features:
    state = forward_init(hmm)
    out = []
    for x in svm_score_sequence(svm, f).scores:
        state, dist = forward_step(hmm, state, x)
        out.append(predict_phase(dist))
    preds.append(np.array(out))

print(evaluate_dataset(test.labels, [svm_predict(svm, f) for f in test.features], cfg.phases).table("SVM"))
print(evaluate_dataset(test.labels, preds, cfg.phases).table("SVM+HHMM"))
