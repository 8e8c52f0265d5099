"""``v2s-lab`` command-line entry point.

Exit status: 0 ok, 1 configuration, 2 data, 3 training, 4 evaluation.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

from .corpus import CorpusSpec, load_corpus, one_hot, save_corpus, synth_corpus
from .errors import ContractError, FormatError, V2SError, ValidationError
from .evaluation import EvalCondition, emit_report, evaluate_condition
from .experiment import (
    EXIT_CONFIG,
    EXIT_DATA,
    EXIT_EVALUATION,
    EXIT_TRAINING,
    PARAVC_SIZES,
    StageError,
    config_hash,
    load_experiment_config,
    run_experiment,
    summarize,
    write_history,
)
from .models import preset, read_model, describe, write_model
from .pipeline import TrainingConfig, train_asr, train_asv, train_parallel_vc, train_v2s

SEED_ENV = "V2S_LAB_SEED"


def _env_seed() -> Optional[int]:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise StageError("config", EXIT_CONFIG, f"{SEED_ENV}={raw!r} is not an integer") from None


def _read_json(path, what: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise StageError("config", EXIT_CONFIG, f"{what} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise StageError("config", EXIT_CONFIG, f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None


def _training_config(args, **overrides) -> TrainingConfig:
    raw = _read_json(args.config, "config") if args.config else {}
    raw.update({k: v for k, v in overrides.items() if v is not None})
    seed = _env_seed()
    if seed is not None:
        raw["seed"] = seed
    try:
        return TrainingConfig.from_dict(raw)
    except (ValidationError, TypeError) as exc:
        raise StageError("config", EXIT_CONFIG, f"{args.config or 'training config'}: {exc}") from None


def _load_corpus(path):
    try:
        return load_corpus(path)
    except FileNotFoundError:
        raise StageError("data", EXIT_DATA, f"corpus file not found: {path}") from None
    except (FormatError, OSError) as exc:
        raise StageError("data", EXIT_DATA, f"{path}: {exc}") from None


def _load_model(path):
    try:
        return read_model(path)
    except FileNotFoundError:
        raise StageError("data", EXIT_DATA, f"model file not found: {path}") from None
    except (FormatError, OSError, ValidationError) as exc:
        raise StageError("data", EXIT_DATA, f"{path}: {exc}") from None


def _finish_training(args, role, stage, net, hist, conf, corpus, extra=None, upstream=()):
    arch_dict = {"sizes": list(net.sizes), "activations": list(net.activations)}
    meta = {
        "role": role,
        "stage": stage,
        "config_hash": config_hash(stage, corpus.digest, arch_dict, vars(conf), list(upstream), extra or {}),
        "corpus_hash": corpus.digest,
        "training": vars(conf),
        "epochs": conf.epochs,
        "seed": conf.seed,
        "final_loss": hist.losses[-1],
        "initial_loss": hist.initial_loss,
        "upstream": list(upstream),
    }
    meta.update(extra or {})
    write_model(args.out, net, meta, role)
    if args.history:
        write_history(args.history, hist)
    for rec in hist.records():
        print(json.dumps(rec, sort_keys=True))


def cmd_corpus(args) -> int:
    spec = CorpusSpec.full_dims() if args.preset == "full" else CorpusSpec()
    if args.spec:
        try:
            spec = CorpusSpec.from_dict({**json.loads(spec.to_json()), **_read_json(args.spec, "spec")})
        except (ValidationError, TypeError) as exc:
            raise StageError("config", EXIT_CONFIG, f"{args.spec}: {exc}") from None
    seed = _env_seed()
    if seed is not None:
        spec = CorpusSpec.from_dict({**json.loads(spec.to_json()), "seed": seed})
    corpus = synth_corpus(spec)
    save_corpus(corpus, args.out)
    print(f"wrote {len(corpus.utterances)} utterances ({corpus.n_speakers} speakers, D={corpus.feature_dim}) to {args.out}")
    return 0


def _train_classifier(args, role) -> int:
    corpus = _load_corpus(args.corpus)
    conf = _training_config(args)
    n_out = corpus.n_speakers if role == "asv" else corpus.n_phonemes
    arch = preset(role, args.arch).with_dims(corpus.feature_dim, n_out)
    trainer = train_asv if role == "asv" else train_asr
    try:
        net, hist = trainer(corpus, arch, conf)
    except V2SError as exc:
        raise StageError(f"train-{role}", EXIT_TRAINING, str(exc)) from None
    _finish_training(args, role, f"train-{role}", net, hist, conf, corpus)
    return 0


def cmd_train_paravc(args) -> int:
    corpus = _load_corpus(args.corpus)
    conf = _training_config(args)
    n = None if args.utts == "all" else int(args.utts)
    try:
        pairs = corpus.parallel_pairs(args.source, args.target, "train", n)
    except ValidationError as exc:
        raise StageError("data", EXIT_DATA, str(exc)) from None
    arch = preset("vc", args.arch).with_dims(corpus.feature_dim, corpus.feature_dim)
    try:
        net, hist = train_parallel_vc(pairs, arch, conf)
    except V2SError as exc:
        raise StageError("train-paravc", EXIT_TRAINING, str(exc)) from None
    extra = {"method": "ParaVC", "n_utts": n, "source": args.source, "target": args.target}
    _finish_training(args, "vc", "train-paravc", net, hist, conf, corpus, extra)
    return 0


def cmd_attack(args) -> int:
    corpus = _load_corpus(args.corpus)
    conf = _training_config(args, omega=args.omega)
    asv, asv_meta = _load_model(args.asv)
    asr, asr_meta = _load_model(args.asr)
    if asv.trainable or asr.trainable:
        raise StageError("attack", EXIT_TRAINING, "ASV/ASR checkpoints must be frozen models")
    try:
        code = one_hot(args.target, corpus.n_speakers)
    except ValidationError as exc:
        raise StageError("config", EXIT_CONFIG, str(exc)) from None
    xs = [u.features for u in corpus.select(args.source, "train")]
    arch = preset("vc", args.arch).with_dims(corpus.feature_dim, corpus.feature_dim)
    try:
        net, hist = train_v2s(xs, code, asv, asr, arch, conf)
    except (V2SError, ContractError) as exc:
        raise StageError("attack", EXIT_TRAINING, str(exc)) from None
    extra = {"method": "V2S", "omega": conf.omega, "source": args.source, "target": args.target}
    upstream = [asv_meta.get("config_hash", ""), asr_meta.get("config_hash", "")]
    _finish_training(args, "vc", "attack", net, hist, conf, corpus, extra, upstream)
    return 0


def cmd_evaluate(args) -> int:
    corpus = _load_corpus(args.corpus)
    vc, vc_meta = _load_model(args.vc)
    asv, asv_meta = _load_model(args.asv)
    asr, asr_meta = _load_model(args.asr)
    if not args.force:
        mixed = [
            p for p, m in ((args.vc, vc_meta), (args.asv, asv_meta), (args.asr, asr_meta)) if m.get("corpus_hash") != corpus.digest
        ]
        upstream = vc_meta.get("upstream") or []
        if upstream and upstream != [asv_meta.get("config_hash"), asr_meta.get("config_hash")]:
            mixed.append(f"{args.vc} (attacked different ASV/ASR checkpoints)")
        if mixed:
            raise StageError("evaluate", EXIT_DATA, f"config hash mismatch for {', '.join(mixed)}; rerun with --force to override")
    source = args.source if args.source is not None else vc_meta.get("source", 0)
    pairs = corpus.parallel_pairs(source, args.target, "heldout")
    method = args.method or vc_meta.get("method", "VC")
    h = config_hash(vc_meta.get("config_hash"), asv_meta.get("config_hash"), asr_meta.get("config_hash"), corpus.digest)
    try:
        cond = evaluate_condition(
            vc,
            asv,
            asr,
            [x for x, _ in pairs],
            args.target,
            [y for _, y in pairs],
            method=method,
            source=source,
            omega=vc_meta.get("omega") if method == "V2S" else None,
            n_utts=vc_meta.get("n_utts") if method == "ParaVC" else None,
            config_hash=h,
        )
        report = emit_report([cond], args.out, figures=not args.no_figures)
    except V2SError as exc:
        raise StageError("evaluate", EXIT_EVALUATION, str(exc)) from None
    print(summarize(report.to_dict()))
    return 0


def cmd_report(args) -> int:
    """Merge one or more report.json files into a single report."""
    conditions = []
    for path in args.inputs:
        raw = _read_json(path, "report")
        for c in raw.get("conditions", []):
            conditions.append(
                EvalCondition(c["method"], c["source"], c["target"], c["omega"], c["n_utts"], c["config_hash"], c["per_utterance"])
            )
    try:
        report = emit_report(conditions, args.out, figures=not args.no_figures)
    except V2SError as exc:
        raise StageError("report", EXIT_EVALUATION, str(exc)) from None
    print(report.table(), end="")
    return 0


def cmd_experiment(args) -> int:
    cfg = load_experiment_config(args.config)
    seed = _env_seed()
    if seed is not None:
        cfg.seed = seed
    out_dir = args.out_dir or cfg.output_dir
    if not out_dir:
        raise StageError("config", EXIT_CONFIG, "no output directory: pass --out-dir or set output_dir")
    path = run_experiment(cfg, out_dir, parallel=args.parallel)
    print(summarize(json.loads(Path(path).read_text())))
    print(f"report: {path}")
    return 0


def cmd_model_inspect(args) -> int:
    net, meta = _load_model(args.file)
    print(describe(net, meta))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="v2s-lab",
        description="Train voice converters against frozen speaker-verification and phoneme models.",
        epilog=f"Environment: {SEED_ENV} overrides the configured seed.",
    )
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    c = sub.add_parser("corpus", help="generate a synthetic corpus (.v2sc)")
    c.add_argument("--spec", help="JSON file of CorpusSpec overrides")
    c.add_argument("--preset", choices=("desk", "full"), default="desk")
    c.add_argument("--out", required=True)
    c.set_defaults(func=cmd_corpus)

    def training_parser(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="JSON file of TrainingConfig fields")
        sp.add_argument("--corpus", required=True)
        sp.add_argument("--out", required=True, help="output checkpoint (.v2sm)")
        sp.add_argument("--arch", choices=("desk", "full"), default="desk")
        sp.add_argument("--history", help="also write the JSON-lines history here")
        return sp

    training_parser("train-asv", "train the speaker classifier").set_defaults(func=lambda a: _train_classifier(a, "asv"))
    training_parser("train-asr", "train the phoneme classifier").set_defaults(func=lambda a: _train_classifier(a, "asr"))

    t = training_parser("train-paravc", "train the parallel-data VC baseline")
    t.add_argument("--utts", choices=[str(n) for n in PARAVC_SIZES] + ["all"], default="all")
    t.add_argument("--source", type=int, default=0)
    t.add_argument("--target", type=int, required=True)
    t.set_defaults(func=cmd_train_paravc)

    a = training_parser("attack", "train a converter from the frozen ASV/ASR only")
    a.add_argument("--target", type=int, required=True, help="speaker id to impersonate")
    a.add_argument("--omega", type=float, default=None, help="weight of the posteriorgram term (default 0.01)")
    a.add_argument("--source", type=int, default=0)
    a.add_argument("--asv", required=True)
    a.add_argument("--asr", required=True)
    a.set_defaults(func=cmd_attack)

    e = sub.add_parser("evaluate", help="score a converter on held-out utterances")
    e.add_argument("--vc", required=True)
    e.add_argument("--asv", required=True)
    e.add_argument("--asr", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--target", type=int, required=True)
    e.add_argument("--source", type=int, default=None)
    e.add_argument("--method", help="condition label (defaults to the checkpoint's)")
    e.add_argument("--out", required=True, help="report.json path")
    e.add_argument("--force", action="store_true", help="accept checkpoints from different configs")
    e.add_argument("--no-figures", action="store_true")
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("report", help="merge report.json files")
    r.add_argument("inputs", nargs="+")
    r.add_argument("--out", required=True)
    r.add_argument("--no-figures", action="store_true")
    r.set_defaults(func=cmd_report)

    x = sub.add_parser("experiment", help="run the full comparison from one config file")
    x.add_argument("--config", required=True)
    x.add_argument("--out-dir")
    x.add_argument("--parallel", type=int, default=1, metavar="N", help="train N conditions concurrently")
    x.set_defaults(func=cmd_experiment)

    m = sub.add_parser("model", help="checkpoint utilities")
    msub = m.add_subparsers(dest="model_command", required=True, metavar="ACTION")
    mi = msub.add_parser("inspect", help="print architecture and metadata")
    mi.add_argument("file")
    mi.set_defaults(func=cmd_model_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"v2s-lab: {exc}", file=sys.stderr)
        return exc.code
    except ValidationError as exc:
        print(f"v2s-lab: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
