"""``phaseflow`` command line.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, dataio, pipeline
from .errors import ConfigError, DataError, PhaseflowError
from .gmm import GmmFitConfig
from .hhmm import HhmmTrainConfig, hhmm_predict_online, save_hhmm
from .lstm import LstmTrainConfig, lstm_predict_online, save_loss_trace, save_lstm
from .metrics import ABSENT_POLICIES, evaluate_dataset
from .svm import SvmTrainConfig, load_svm, save_svm, svm_scores
from .synth import config_from_dict, synth_generate

log = logging.getLogger("phaseflow")


def _phases(args, directory):
    names = args.phases.split(",") if getattr(args, "phases", None) else None
    return pipeline.resolve_phases(directory, names)


def cmd_synth(args):
    raw = {}
    if args.config:
        try:
            raw = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON: {exc}") from None
    if args.seed is not None:
        raw["seed"] = args.seed
    if args.num_videos is not None:
        raw["num_videos"] = args.num_videos
    if args.hard:
        raw["hard"] = True
    fmt = args.format or raw.get("format", "csv")
    test_videos = int(raw.get("test_videos", 0))
    cfg = config_from_dict(raw)
    if not 0 <= test_videos < cfg.num_videos:
        raise ConfigError("test_videos must be in [0, num_videos)")
    dataset = synth_generate(cfg)
    out = Path(args.out)
    if test_videos:
        n_train = cfg.num_videos - test_videos
        splits = {"train": dataset.subset(range(n_train)),
                  "test": dataset.subset(range(n_train, cfg.num_videos))}
    else:
        splits = {"": dataset}
    for name, part in splits.items():
        target = out / name if name else out
        dataio.save_dataset(part, target, cfg.phases, fmt)
        pipeline.write_manifest(part, target, cfg.phases, cfg.seed, split=name or "all")
    print(f"wrote {cfg.num_videos} videos to {out}")


def cmd_train_svm(args):
    phases = _phases(args, args.data)
    data = dataio.load_dataset(args.data, phases)
    model = pipeline.train_svm_stage(data, phases, SvmTrainConfig(
        lam=args.lam, epochs=args.epochs, seed=args.seed, balanced=args.balanced))
    save_svm(model, args.out)


def cmd_train_hmm(args):
    phases = _phases(args, args.data)
    data = dataio.load_dataset(args.data, phases)
    svm = load_svm(args.svm)
    cfg = HhmmTrainConfig(seconds_per_state=args.d, max_states=args.smax,
                          gmm=GmmFitConfig(K=args.components), smoothing=args.smoothing,
                          seed=args.seed, em_refine=args.em_refine)
    save_hhmm(pipeline.train_hmm_stage(data, svm, phases, cfg), args.out)


def cmd_train_lstm(args):
    phases = _phases(args, args.data)
    data = dataio.load_dataset(args.data, phases)
    cfg = LstmTrainConfig(hidden=args.hidden, lr=args.lr, iterations=args.iters, t_max=args.tmax,
                          clip=args.clip, seed=args.seed)
    model, trace = pipeline.train_lstm_stage(data, phases, cfg)
    save_lstm(model, args.out)
    trace_path = args.trace or f"{args.out}.loss.csv"
    save_loss_trace(trace, trace_path)


def _emit(preds, out):
    if out in (None, "-"):
        for p in preds:
            sys.stdout.write(f"{int(p)}\n")
            sys.stdout.flush()
    else:
        with open(out, "w", encoding="utf-8") as fh:
            for p in preds:
                fh.write(f"{int(p)}\n")


def _stream(args, models, seq):
    if args.pipeline == "hmm":
        svm, hmm = models
        return hhmm_predict_online(hmm, (svm_scores(svm, x) for x in seq.data))
    return lstm_predict_online(models[0], seq.data)


def cmd_infer(args):
    models = pipeline.load_models(args.pipeline, args.svm, args.hmm, args.lstm)
    if (args.features is None) == (args.data is None):
        raise ConfigError("give exactly one of --features or --data")
    if args.features is not None:
        _emit(_stream(args, models, dataio.load_feature_sequence(args.features)), args.out)
        return
    if args.out in (None, "-"):
        raise ConfigError("--data needs --out <directory>")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for seq in dataio.load_feature_dir(args.data):
        _emit(_stream(args, models, seq), out / f"{seq.video_id}.pred.txt")


def cmd_evaluate(args):
    phases = _phases(args, args.gt)
    gts = dataio.load_label_dir(args.gt, phases)
    preds = dataio.load_label_dir(args.pred, phases, suffix=".pred.txt")
    if not gts:
        raise DataError(f"no *.labels.txt files in {args.gt}")
    missing = sorted(set(gts) - set(preds))
    if missing:
        raise DataError(f"no predictions for videos {missing}")
    vids = sorted(gts)
    report = evaluate_dataset([gts[v] for v in vids], [preds[v] for v in vids], phases,
                              args.absent_policy, args.ddof)
    if args.report:
        Path(args.report).write_text(report.to_json(), encoding="utf-8")
    sys.stdout.write(report.table(args.label))


def cmd_run(args):
    overrides = {"seed": args.seed, "pipeline": args.pipeline, "paths.out": args.out}
    cfg = pipeline.load_run_config(args.config, overrides)
    report = pipeline.run_pipeline(cfg)
    sys.stdout.write(report.table(cfg.pipeline.upper()))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="phaseflow", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"phaseflow {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--version", action="version", version=f"phaseflow {__version__}")
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "generate a synthetic workflow dataset")
    p.add_argument("--config", help="JSON synth configuration")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--num-videos", type=int)
    p.add_argument("--hard", action="store_true", help="center separation 0.5 x noise_std")
    p.add_argument("--format", choices=("csv", "bin"))

    p = add("train-svm", cmd_train_svm, "train the one-vs-all linear SVM")
    p.add_argument("--data", required=True)
    p.add_argument("--lambda", dest="lam", type=float, default=1e-2)
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--balanced", action="store_true")
    p.add_argument("--phases", help="comma-separated phase names")
    p.add_argument("--out", required=True)

    p = add("train-hmm", cmd_train_hmm, "train the hierarchical HMM on SVM confidences")
    p.add_argument("--data", required=True)
    p.add_argument("--svm", required=True)
    p.add_argument("--d", type=float, default=50.0, help="seconds per bottom-level state")
    p.add_argument("--smax", type=int, default=20, help="max bottom-level states per phase")
    p.add_argument("--components", type=int, default=5, help="Gaussians per emission mixture")
    p.add_argument("--smoothing", type=float, default=0.0)
    p.add_argument("--em-refine", type=int, default=0, metavar="ITERS")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--phases")
    p.add_argument("--out", required=True)

    p = add("train-lstm", cmd_train_lstm, "train the LSTM phase classifier")
    p.add_argument("--data", required=True)
    p.add_argument("--hidden", type=int, default=1024)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--iters", type=int, default=30000)
    p.add_argument("--tmax", type=int, default=3993)
    p.add_argument("--clip", type=float, default=5.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", help="loss trace CSV (default <out>.loss.csv)")
    p.add_argument("--phases")
    p.add_argument("--out", required=True)

    p = add("infer", cmd_infer, "causal per-frame phase predictions")
    p.add_argument("--pipeline", choices=pipeline.PIPELINES, required=True)
    p.add_argument("--svm")
    p.add_argument("--hmm")
    p.add_argument("--lstm")
    p.add_argument("--features", help="single feature file")
    p.add_argument("--data", help="directory of feature files")
    p.add_argument("--out", help="pred file (or '-' for stdout), or a directory with --data")

    p = add("evaluate", cmd_evaluate, "Jaccard / accuracy report")
    p.add_argument("--gt", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--report")
    p.add_argument("--absent-policy", choices=ABSENT_POLICIES, default="skip")
    p.add_argument("--ddof", type=int, default=1)
    p.add_argument("--label", default="pipeline")
    p.add_argument("--phases")

    p = add("run", cmd_run, "train, infer and evaluate one pipeline end to end")
    p.add_argument("--config", required=True)
    p.add_argument("--pipeline", choices=pipeline.PIPELINES)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except PhaseflowError as exc:
        print(f"phaseflow {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"phaseflow {args.command}: {exc}", file=sys.stderr)
        return DataError.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
