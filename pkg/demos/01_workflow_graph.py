"""Phase sets, transition graphs and label sequences."""
# %%
import numpy as np

from phaseflow.workflow import (LabelSequence, PhaseSet, TransitionGraph, estimate_transitions,
                                phase_runs, validate_sequence)

phases = PhaseSet(("prep", "dissect", "clip", "close"))
print(phases.count, phases.index("clip"))

# %% A left-to-right chain: stay with probability 0.9, else advance.
chain = TransitionGraph.chain(4, stay=0.9)
print(chain.matrix)
print("successors of dissect:", np.flatnonzero(chain.successors(1)))

# %% Estimate a graph from annotated videos and check a sequence against it.
videos = [LabelSequence([0, 0, 1, 1, 1, 2, 3, 3], "a"),
          LabelSequence([0, 1, 1, 2, 2, 2, 3], "b")]
graph = estimate_transitions(videos, phases, smoothing=0.0)
print(np.round(graph.matrix, 3))

bad = LabelSequence([0, 2, 3], "c")       # skips phase 1
print(validate_sequence(graph, bad))
print(phase_runs(videos[0].labels))
