"""Metrics by hand, then the whole pipeline through the command line."""
# %%
import json
import tempfile
from pathlib import Path

from phaseflow.cli import main
from phaseflow.metrics import accuracy, evaluate_video, jaccard_per_phase, summarize

gt, pred = [0, 0, 1, 1], [0, 1, 1, 1]
print(jaccard_per_phase(gt, pred, 3), accuracy(gt, pred))
print(summarize([evaluate_video(gt, pred, 3, "a"), evaluate_video(gt, gt, 3, "b")]).table("toy"))

# %% synth -> run, driven by two small JSON files.
work = Path(tempfile.mkdtemp())
(work / "synth.json").write_text(json.dumps({"num_videos": 12, "test_videos": 4, "seed": 2}))
main(["synth", "--config", str(work / "synth.json"), "--out", str(work / "data")])

run = {"pipeline": "hmm", "seed": 0,
       "paths": {"train": str(work / "data/train"), "test": str(work / "data/test"),
                 "out": str(work / "out"), "svm_model": str(work / "m.svm"),
                 "hmm_model": str(work / "m.hhmm")}}
(work / "run.json").write_text(json.dumps(run))
main(["run", "--config", str(work / "run.json")])
print(sorted(p.name for p in (work / "out").iterdir()))
