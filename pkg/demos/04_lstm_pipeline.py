"""LSTM trained on zero-padded videos, then run frame by frame."""
# %%
import numpy as np

from phaseflow.lstm import LstmOnlinePredictor, LstmTrainConfig, lstm_train
from phaseflow.metrics import evaluate_dataset
from phaseflow.synth import preset_config, synth_generate

cfg = preset_config(num_videos=15, max_len=300, seed=1)
ds = synth_generate(cfg)
train, test = ds.subset(range(10)), ds.subset(range(10, 15))

# %% Desk-scale settings; the defaults (H=1024, 30k iterations) are far larger.
config = LstmTrainConfig(hidden=16, lr=1e-2, iterations=1500, t_max=300, clip=5.0, seed=0)
model, trace = lstm_train(train, cfg.phases.count, config)
print(f"{model.num_params} parameters, loss {trace[:150].mean():.3f} -> {trace[-150:].mean():.3f}")

# %% Streaming prediction keeps (h, c) between frames; reset between videos.
predictor = LstmOnlinePredictor(model)
preds = []
for f in test.features:
    predictor.reset()
    preds.append(np.array([predictor.step(x) for x in f.data]))
print(evaluate_dataset(test.labels, preds, cfg.phases).table("LSTM"))
