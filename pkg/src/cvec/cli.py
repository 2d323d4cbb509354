"""``cvec`` command line: corpus, train, diarize, score, selftest.

Exit codes: 0 success, 2 input error, 3 model error, 4 selftest failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .config import PipelineConfig, config_to_dict, load_config
from .corpus import SyntheticCorpusSpec, generate_synthetic_corpus, save_corpus
from .errors import ConfigError, TrainingDiverged
from .pipeline import (
    InputError,
    ModelError,
    diarize,
    load_models,
    load_recordings,
    save_models,
    train_models,
    with_epochs,
    write_hypotheses,
)
from .scoring import ScoreConfig, ScoreReport, score
from .selftest import format_outcomes, run_all
from .timeline import RttmError, read_rttm

EXIT_OK, EXIT_INPUT, EXIT_MODEL, EXIT_SELFTEST = 0, 2, 3, 4

log = logging.getLogger("cvec")


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = cfg.with_seed(args.seed)
    if getattr(args, "system", None):
        cfg = replace(cfg, system=args.system)
    if getattr(args, "epochs", None) is not None:
        cfg = with_epochs(cfg, args.epochs)
    if getattr(args, "segmentation", None):
        cfg = replace(cfg, segmentation=args.segmentation)
    return cfg


def cmd_corpus(args) -> int:
    base = SyntheticCorpusSpec()
    spec = SyntheticCorpusSpec(seed=args.seed, speakers=args.speakers, eval_speakers=min(base.eval_speakers, args.speakers))
    corpus = generate_synthetic_corpus(spec)
    save_corpus(corpus, Path(args.out))
    print(f"wrote {len(corpus.train)} train and {len(corpus.eval)} eval recordings to {args.out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args)
    recordings = load_recordings([], cfg, split="train")
    t0 = time.perf_counter()
    models, metrics = train_models(cfg, recordings)
    metrics["config"] = config_to_dict(cfg)
    save_models(models, cfg.paths.model, metrics)
    acc = metrics["heldout_accuracy"]
    for epoch, a in enumerate(acc):
        print(f"epoch {epoch}: held-out accuracy {a:.4f}")
    print(f"saved {cfg.system} model to {cfg.paths.model} in {time.perf_counter() - t0:.1f}s")
    return EXIT_OK


def cmd_diarize(args) -> int:
    cfg = _config(args)
    models = load_models(cfg.paths.model)
    recordings = load_recordings(args.recordings, cfg, split=args.split)
    hyps = diarize(recordings, models, cfg, jobs=args.jobs)
    combined = write_hypotheses(hyps, cfg.paths.output)
    for h in hyps:
        print(f"{h.rec_id}: {len(h)} segments, {len(h.labels)} speakers")
    print(f"wrote {combined}")
    return EXIT_OK


def cmd_score(args) -> int:
    for p in (args.ref, args.hyp):
        if not Path(p).is_file():
            raise InputError(f"RTTM file not found: {p}")
    report = score(read_rttm(args.ref), read_rttm(args.hyp), ScoreConfig(args.collar, args.score_overlap))
    print(render_report(report, args.format))
    return EXIT_OK


def render_report(report: ScoreReport, fmt: str) -> str:
    if fmt == "kv":
        return report.key_values().rstrip("\n")
    if fmt == "table":
        return report.table()
    return report.table() + "\n\n" + report.key_values().rstrip("\n")


def cmd_selftest(args) -> int:
    t0 = time.perf_counter()
    outcomes = run_all(include_gradients=not args.skip_gradients)
    print(format_outcomes(outcomes))
    failed = [o for o in outcomes if not o.passed]
    print(f"{len(outcomes) - len(failed)}/{len(outcomes)} passed in {time.perf_counter() - t0:.1f}s")
    return EXIT_SELFTEST if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cvec", description="Speaker diarisation with combined speaker embeddings.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", help="TOML pipeline config (defaults apply when omitted)")
        if seed:
            p.add_argument("--seed", type=int, help="global seed (overrides config and CVEC_SEED)")

    p = sub.add_parser("corpus", help="write the synthetic corpus to disk")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--speakers", type=int, default=8)
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("train", help="train VAD, CPD and the embedding system")
    common(p)
    p.add_argument("--system", help="TDNN, HORNN or a combiner variant")
    p.add_argument("--epochs", type=int, help="embedding epochs; 0 saves the initialisation only")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("diarize", help="write an RTTM hypothesis per recording")
    common(p)
    p.add_argument("recordings", nargs="*", help="recording directories (default: the corpus split)")
    p.add_argument("--split", default="eval", help="corpus split used when no recordings are given")
    p.add_argument("--segmentation", choices=("cpd", "window"))
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_diarize)

    p = sub.add_parser("score", help="score a hypothesis RTTM against a reference RTTM")
    p.add_argument("ref")
    p.add_argument("hyp")
    p.add_argument("--collar", type=float, default=0.25)
    p.add_argument("--score-overlap", action="store_true")
    p.add_argument("--format", choices=("table", "kv", "both"), default="both")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("selftest", help="run the oracle checks")
    p.add_argument("--skip-gradients", action="store_true", help="skip the finite-difference checks")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (ConfigError, InputError, RttmError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ModelError, TrainingDiverged) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL


if __name__ == "__main__":
    sys.exit(main())
