"""End-to-end experiment: corpus -> ASV/ASR -> converters -> evaluation report."""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .corpus import Corpus, CorpusSpec, load_corpus, one_hot, save_corpus, synth_corpus
from .errors import FormatError, V2SError, ValidationError
from .evaluation import EvalCondition, emit_report, evaluate_condition
from .models import PRESETS, ArchSpec, write_model
from .nncore import Network
from .pipeline import TrainingConfig, TrainingHistory, train_asr, train_asv, train_parallel_vc, train_v2s

log = logging.getLogger(__name__)

EXIT_CONFIG, EXIT_DATA, EXIT_TRAINING, EXIT_EVALUATION = 1, 2, 3, 4
PARAVC_SIZES = (5, 10, 30)
TRAINING_STAGES = ("asv", "asr", "paravc", "v2s")


class StageError(V2SError):
    """A pipeline stage failed; ``code`` is the process exit status to use."""

    def __init__(self, stage: str, code: int, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.code = code


def stage_seed(global_seed: int, stage: str) -> int:
    """Independent per-stage seed, so adding a stage never shifts another's randomness."""
    digest = hashlib.sha256(f"{global_seed}:{stage}".encode()).digest()
    return int.from_bytes(digest[:4], "little")


def config_hash(*parts) -> str:
    blob = json.dumps(parts, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def parse_condition(name: str) -> tuple[str, Optional[int]]:
    """``"ParaVC-10"`` -> ("ParaVC", 10); ``"ParaVC-all"`` -> ("ParaVC", None); ``"V2S"`` -> ("V2S", None)."""
    if name == "V2S":
        return "V2S", None
    if name.startswith("ParaVC-"):
        n = name.split("-", 1)[1]
        if n == "all":
            return "ParaVC", None
        if n.isdigit() and int(n) > 0:
            return "ParaVC", int(n)
    raise ValidationError(f"unknown condition {name!r} (expected ParaVC-<n>, ParaVC-all or V2S)")


@dataclass
class ExperimentConfig:
    seed: int = 0
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    corpus_path: Optional[str] = None
    arch: dict = field(default_factory=lambda: dict(PRESETS["desk"]))
    training: dict = field(default_factory=lambda: {s: TrainingConfig() for s in TRAINING_STAGES})
    source: int = 0
    targets: tuple = (2, 4, 1, 3)
    conditions: tuple = ("ParaVC-5", "ParaVC-10", "ParaVC-30", "V2S")
    omega_ablation: tuple = (0.0,)
    output_dir: Optional[str] = None

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {"seed", "corpus", "corpus_path", "arch", "training", "source", "targets", "conditions", "omega_ablation", "output_dir"}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown experiment config field(s): {sorted(unknown)}")
        cfg = cls()
        if "seed" in d:
            cfg.seed = _int(d["seed"], "seed")
        if "corpus" in d:
            if isinstance(d["corpus"], str):
                cfg.corpus_path = d["corpus"]
            else:
                cfg.corpus = _field("corpus", CorpusSpec.from_dict, d["corpus"])
        if d.get("corpus_path"):
            cfg.corpus_path = d["corpus_path"]
        if "arch" in d:
            cfg.arch = _parse_arch(d["arch"])
        if "training" in d:
            cfg.training = _parse_training(d["training"])
        if "source" in d:
            cfg.source = _int(d["source"], "source")
        if "targets" in d:
            cfg.targets = tuple(_int(t, "targets") for t in d["targets"])
        if "conditions" in d:
            cfg.conditions = tuple(d["conditions"])
        if "omega_ablation" in d:
            cfg.omega_ablation = tuple(float(w) for w in d["omega_ablation"])
        cfg.output_dir = d.get("output_dir")
        cfg.check()
        return cfg

    def check(self) -> None:
        for name in self.conditions:
            _field("conditions", parse_condition, name)
        if any(w < 0 for w in self.omega_ablation):
            raise ValidationError("omega_ablation: weights must be >= 0")
        if not self.targets:
            raise ValidationError("targets: at least one target speaker is required")

    def check_speakers(self, n_speakers: int) -> None:
        for name, s in [("source", self.source)] + [("targets", t) for t in self.targets]:
            if not 0 <= s < n_speakers:
                raise ValidationError(f"{name}: speaker {s} outside corpus range [0, {n_speakers})")
        if self.source in self.targets:
            raise ValidationError("targets: source speaker cannot also be a target")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "corpus": json.loads(self.corpus.to_json()) if self.corpus_path is None else self.corpus_path,
            "arch": {k: v.to_dict() for k, v in sorted(self.arch.items())},
            "training": {k: vars(v) for k, v in sorted(self.training.items())},
            "source": self.source,
            "targets": list(self.targets),
            "conditions": list(self.conditions),
            "omega_ablation": list(self.omega_ablation),
        }


def _field(name, fn, value):
    try:
        return fn(value)
    except (ValidationError, TypeError, KeyError, ValueError) as exc:
        raise ValidationError(f"{name}: {exc}") from None


def _int(v, name) -> int:
    if isinstance(v, bool) or not isinstance(v, int):
        raise ValidationError(f"{name}: expected an integer, got {v!r}")
    return v


def _parse_arch(value) -> dict:
    if isinstance(value, str):
        if value not in PRESETS:
            raise ValidationError(f"arch: unknown preset {value!r} (choose from {sorted(PRESETS)})")
        return dict(PRESETS[value])
    out = dict(PRESETS["desk"])
    for role, spec in value.items():
        if role not in out:
            raise ValidationError(f"arch: unknown role {role!r}")
        out[role] = _field(f"arch.{role}", ArchSpec.from_dict, spec)
    return out


def _parse_training(value: dict) -> dict:
    out = {s: TrainingConfig() for s in TRAINING_STAGES}
    for stage, overrides in value.items():
        if stage not in out:
            raise ValidationError(f"training: unknown stage {stage!r} (choose from {list(TRAINING_STAGES)})")
        out[stage] = _field(f"training.{stage}", TrainingConfig.from_dict, overrides)
    return out


def load_experiment_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise StageError("config", EXIT_CONFIG, f"cannot read {path}: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise StageError("config", EXIT_CONFIG, f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    if not isinstance(raw, dict):
        raise StageError("config", EXIT_CONFIG, f"{path}: top level must be a JSON object")
    try:
        return ExperimentConfig.from_dict(raw)
    except ValidationError as exc:
        raise StageError("config", EXIT_CONFIG, f"{path}: {exc}") from None


def write_history(path, history: TrainingHistory) -> None:
    lines = [json.dumps(r, sort_keys=True) for r in history.records()]
    Path(path).write_text("\n".join(lines) + "\n")


def _stage_config(cfg: ExperimentConfig, stage: str, key: str) -> TrainingConfig:
    return cfg.training[stage].replace(seed=stage_seed(cfg.seed, key))


def _train_condition(job: dict) -> tuple:
    """Train one converter; runs in worker processes under --parallel."""
    corpus: Corpus = job["corpus"]
    method, n_utts = parse_condition(job["condition"])
    src, tgt, conf = job["source"], job["target"], job["config"]
    if method == "ParaVC":
        vc, hist = train_parallel_vc(corpus.parallel_pairs(src, tgt, "train", n_utts), job["arch"], conf)
    else:
        xs = [u.features for u in corpus.select(src, "train")]
        vc, hist = train_v2s(xs, one_hot(tgt, corpus.n_speakers), job["asv"], job["asr"], job["arch"], conf)
    return job["name"], vc, hist


def run_experiment(cfg: ExperimentConfig, out_dir, parallel: int = 1) -> Path:
    """Run every stage and write checkpoints, histories, report.json/.tsv and figures to ``out_dir``.

    Raises StageError carrying the failing stage and its exit code; artifacts
    already written by earlier stages are left in place.
    """
    from .plotting import plot_histories

    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StageError("config", EXIT_CONFIG, f"output directory {out} is not writable: {exc}") from None

    # corpus
    try:
        corpus = load_corpus(cfg.corpus_path) if cfg.corpus_path else synth_corpus(cfg.corpus)
    except FileNotFoundError:
        raise StageError("corpus", EXIT_DATA, f"corpus file not found: {cfg.corpus_path}") from None
    except (FormatError, OSError) as exc:
        raise StageError("corpus", EXIT_DATA, f"{cfg.corpus_path}: {exc}") from None
    try:
        cfg.check_speakers(corpus.n_speakers)
    except ValidationError as exc:
        raise StageError("config", EXIT_CONFIG, str(exc)) from None
    save_corpus(corpus, out / "corpus.v2sc")
    corpus_hash = corpus.digest
    arch = {
        "vc": cfg.arch["vc"].with_dims(corpus.feature_dim, corpus.feature_dim),
        "asv": cfg.arch["asv"].with_dims(corpus.feature_dim, corpus.n_speakers),
        "asr": cfg.arch["asr"].with_dims(corpus.feature_dim, corpus.n_phonemes),
    }
    histories: dict = {}

    # frozen oracles
    frozen = {}
    for role, trainer in (("asv", train_asv), ("asr", train_asr)):
        conf = _stage_config(cfg, role, role)
        h = config_hash(role, corpus_hash, arch[role].to_dict(), vars(conf))
        log.info("training %s", role)
        try:
            net, hist = trainer(corpus, arch[role], conf)
        except V2SError as exc:
            raise StageError(f"train-{role}", EXIT_TRAINING, str(exc)) from None
        meta = _meta(role, f"train-{role}", h, corpus_hash, conf, hist)
        write_model(out / f"{role}.v2sm", net, meta, role)
        write_history(out / f"{role}.history.jsonl", hist)
        frozen[role] = (net, h)
        histories[role.upper()] = hist
    asv, asr = frozen["asv"][0], frozen["asr"][0]

    # converters
    jobs = []
    for tgt in cfg.targets:
        runs = [(c, None) for c in cfg.conditions]
        if "V2S" in cfg.conditions:
            runs += [("V2S", w) for w in cfg.omega_ablation if w != cfg.training["v2s"].omega]
        for cond, omega in runs:
            method, n_utts = parse_condition(cond)
            stage = "paravc" if method == "ParaVC" else "v2s"
            key = f"{cond}:{cfg.source}->{tgt}" + ("" if omega is None else f":omega={omega:g}")
            conf = _stage_config(cfg, stage, key)
            if omega is not None:
                conf = conf.replace(omega=omega)
            tag = cond.lower() + ("" if omega is None else f"_w{omega:g}")
            name = f"vc_{tag}_{cfg.source}to{tgt}"
            upstream = [frozen["asv"][1], frozen["asr"][1]] if method == "V2S" else []
            jobs.append(
                {
                    "name": name,
                    "condition": cond,
                    "source": cfg.source,
                    "target": tgt,
                    "config": conf,
                    "arch": arch["vc"],
                    "corpus": corpus,
                    "asv": asv,
                    "asr": asr,
                    "hash": config_hash(name, corpus_hash, arch["vc"].to_dict(), vars(conf), upstream),
                    "method": method,
                    "n_utts": n_utts if method == "ParaVC" else None,
                    "omega": conf.omega if method == "V2S" else None,
                    "upstream": upstream,
                }
            )
    try:
        if parallel > 1:
            with ProcessPoolExecutor(max_workers=parallel) as pool:
                results = list(pool.map(_train_condition, jobs))
        else:
            results = [_train_condition(j) for j in jobs]
    except V2SError as exc:
        raise StageError("train-vc", EXIT_TRAINING, str(exc)) from None

    conditions = []
    try:
        for job, (name, vc, hist) in zip(jobs, results):
            meta = _meta("vc", job["condition"], job["hash"], corpus_hash, job["config"], hist)
            meta.update(source=job["source"], target=job["target"], upstream=job["upstream"])
            write_model(out / f"{name}.v2sm", vc, meta, "vc")
            write_history(out / f"{name}.history.jsonl", hist)
            histories[name] = hist
            conditions.append(_evaluate(vc, asv, asr, corpus, job))
        for tgt in cfg.targets:
            ref = {"method": "Source", "source": cfg.source, "target": tgt, "n_utts": None, "omega": None, "hash": corpus_hash}
            conditions.append(_evaluate(None, asv, asr, corpus, ref))
        report_path = out / "report.json"
        emit_report(conditions, report_path, config_hash(cfg.to_dict(), corpus_hash))
        plot_histories(histories, out / "training_curves.png")
    except V2SError as exc:
        raise StageError("evaluate", EXIT_EVALUATION, str(exc)) from None
    return report_path


def _meta(role: str, stage: str, h: str, corpus_hash: str, conf: TrainingConfig, hist: TrainingHistory) -> dict:
    return {
        "role": role,
        "stage": stage,
        "config_hash": h,
        "corpus_hash": corpus_hash,
        "training": vars(conf),
        "epochs": conf.epochs,
        "seed": conf.seed,
        "final_loss": hist.losses[-1],
        "initial_loss": hist.initial_loss,
    }


def _evaluate(vc: Optional[Network], asv: Network, asr: Network, corpus: Corpus, job: dict) -> EvalCondition:
    src, tgt = job["source"], job["target"]
    pairs = corpus.parallel_pairs(src, tgt, "heldout")
    if not pairs:
        raise ValidationError("corpus has no held-out utterances to evaluate on")
    return evaluate_condition(
        vc,
        asv,
        asr,
        [x for x, _ in pairs],
        tgt,
        [y for _, y in pairs],
        method=job["method"],
        source=src,
        omega=job["omega"],
        n_utts=job["n_utts"],
        config_hash=job["hash"],
    )


def summarize(report: dict) -> str:
    """Short plain-text digest of a report dict for terminal output."""
    rows = []
    for c in report["conditions"]:
        a = c["aggregate"]
        mcd = "-" if a["mcd_vs_target"] is None else f"{a['mcd_vs_target']:.3f}"
        rows.append(f"{c['key']:<32} post={a['target_posterior']:.3f} top1={a['target_top1']:.3f} ret={a['retention_mse']:.4f} mcd={mcd}")
    return "\n".join(rows)

