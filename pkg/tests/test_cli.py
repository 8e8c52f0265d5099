import json

import pytest

from v2s_lab.cli import build_parser, main
from v2s_lab.experiment import ExperimentConfig, config_hash, parse_condition, stage_seed

SMALL_SPEC = {"n_speakers": 4, "utterances_per_speaker": 6, "heldout_per_speaker": 2, "min_frames": 20, "max_frames": 30}
FAST = {"epochs": 2}


@pytest.fixture
def workdir(tmp_path):
    (tmp_path / "spec.json").write_text(json.dumps(SMALL_SPEC))
    (tmp_path / "fast.json").write_text(json.dumps(FAST))
    return tmp_path


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_help_lists_subcommands(capsys):
    with pytest.raises(SystemExit) as info:
        main(["--help"])
    assert info.value.code == 0
    out = capsys.readouterr().out
    for cmd in ("corpus", "train-asv", "train-asr", "train-paravc", "attack", "evaluate", "report", "experiment", "model"):
        assert cmd in out
    assert "V2S_LAB_SEED" in out


@pytest.mark.parametrize(
    "cmd,flags",
    [
        ("train-paravc", ["--utts", "--source", "--target", "--corpus", "--config"]),
        ("attack", ["--target", "--omega", "--asv", "--asr"]),
        ("evaluate", ["--vc", "--asv", "--asr", "--force"]),
        ("experiment", ["--config", "--out-dir", "--parallel"]),
    ],
)
def test_subcommand_help_lists_flags(capsys, cmd, flags):
    with pytest.raises(SystemExit):
        main([cmd, "--help"])
    out = capsys.readouterr().out
    for f in flags:
        assert f in out


def test_missing_corpus_exit_2(capsys, tmp_path):
    missing = tmp_path / "nope.v2sc"
    code, _, err = _run(capsys, "train-asv", "--corpus", missing, "--out", tmp_path / "a.v2sm")
    assert code == 2
    assert str(missing) in err


def test_bad_config_exit_1(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text('{"seed": 0,\n "targets": [1, }')
    code, _, err = _run(capsys, "experiment", "--config", bad, "--out-dir", tmp_path / "o")
    assert code == 1
    assert "line 2" in err


def test_unknown_config_field_exit_1(capsys, tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"sed": 1}))
    code, _, err = _run(capsys, "experiment", "--config", bad, "--out-dir", tmp_path / "o")
    assert code == 1 and "sed" in err


def test_bad_seed_env(capsys, workdir, monkeypatch):
    monkeypatch.setenv("V2S_LAB_SEED", "abc")
    code, _, _ = _run(capsys, "corpus", "--spec", workdir / "spec.json", "--out", workdir / "c.v2sc")
    assert code == 1


def test_stage_seed_independent():
    assert stage_seed(0, "asv") != stage_seed(0, "asr")
    assert stage_seed(0, "asv") == stage_seed(0, "asv")
    assert 0 <= stage_seed(123, "v2s") < 2**32


def test_parse_condition():
    assert parse_condition("ParaVC-10") == ("ParaVC", 10)
    assert parse_condition("ParaVC-all") == ("ParaVC", None)
    assert parse_condition("V2S") == ("V2S", None)
    with pytest.raises(ValueError):
        parse_condition("NonparaVC")


def test_config_round_trip():
    cfg = ExperimentConfig.from_dict({"seed": 3, "corpus": SMALL_SPEC, "training": {"v2s": FAST}, "targets": [1]})
    again = ExperimentConfig.from_dict(cfg.to_dict())
    assert config_hash(cfg.to_dict()) == config_hash(again.to_dict())


def test_pipeline_through_cli(capsys, workdir):
    w = workdir
    assert _run(capsys, "corpus", "--spec", w / "spec.json", "--out", w / "c.v2sc")[0] == 0
    common = ["--corpus", w / "c.v2sc", "--config", w / "fast.json"]
    code, out, _ = _run(capsys, "train-asv", *common, "--out", w / "asv.v2sm", "--history", w / "asv.jsonl")
    assert code == 0
    assert [json.loads(l)["epoch"] for l in out.splitlines()] == [1, 2]
    assert len((w / "asv.jsonl").read_text().splitlines()) == 2
    assert _run(capsys, "train-asr", *common, "--out", w / "asr.v2sm")[0] == 0
    assert _run(capsys, "train-paravc", *common, "--utts", "5", "--target", 1, "--out", w / "pvc.v2sm")[0] == 0
    code, _, _ = _run(capsys, "attack", *common, "--target", 1, "--asv", w / "asv.v2sm", "--asr", w / "asr.v2sm", "--out", w / "v2s.v2sm")
    assert code == 0

    code, out, _ = _run(capsys, "model", "inspect", w / "v2s.v2sm")
    assert code == 0 and "role: vc" in out and '"V2S"' in out

    models = ["--asv", w / "asv.v2sm", "--asr", w / "asr.v2sm", "--corpus", w / "c.v2sc", "--target", 1]
    assert _run(capsys, "evaluate", "--vc", w / "pvc.v2sm", *models, "--out", w / "r1.json", "--no-figures")[0] == 0
    assert _run(capsys, "evaluate", "--vc", w / "v2s.v2sm", *models, "--out", w / "r2.json")[0] == 0
    code, out, _ = _run(capsys, "report", w / "r1.json", w / "r2.json", "--out", w / "all.json", "--no-figures")
    assert code == 0
    methods = {c["method"] for c in json.loads((w / "all.json").read_text())["conditions"]}
    assert methods == {"ParaVC", "V2S"}

    # a converter attacked against a different ASV is refused unless forced
    (w / "fast2.json").write_text(json.dumps({"epochs": 1}))
    assert _run(capsys, "train-asv", "--corpus", w / "c.v2sc", "--config", w / "fast2.json", "--out", w / "asv2.v2sm")[0] == 0
    mixed = ["--vc", w / "v2s.v2sm", "--asv", w / "asv2.v2sm", "--asr", w / "asr.v2sm", "--corpus", w / "c.v2sc", "--target", 1]
    code, _, err = _run(capsys, "evaluate", *mixed, "--out", w / "r3.json", "--no-figures")
    assert code == 2 and "--force" in err
    assert _run(capsys, "evaluate", *mixed, "--out", w / "r3.json", "--no-figures", "--force")[0] == 0


def test_corpus_from_other_spec_refused(capsys, workdir):
    w = workdir
    assert _run(capsys, "corpus", "--spec", w / "spec.json", "--out", w / "c.v2sc")[0] == 0
    (w / "spec2.json").write_text(json.dumps({**SMALL_SPEC, "seed": 5}))
    assert _run(capsys, "corpus", "--spec", w / "spec2.json", "--out", w / "c2.v2sc")[0] == 0
    common = ["--corpus", w / "c.v2sc", "--config", w / "fast.json"]
    _run(capsys, "train-asv", *common, "--out", w / "asv.v2sm")
    _run(capsys, "train-asr", *common, "--out", w / "asr.v2sm")
    _run(capsys, "train-paravc", *common, "--utts", "5", "--target", 1, "--out", w / "pvc.v2sm")
    args = ["--vc", w / "pvc.v2sm", "--asv", w / "asv.v2sm", "--asr", w / "asr.v2sm", "--target", 1, "--no-figures"]
    code, _, _ = _run(capsys, "evaluate", *args, "--corpus", w / "c2.v2sc", "--out", w / "r.json")
    assert code == 2


def test_experiment_minimal(capsys, tmp_path):
    cfg = {
        "corpus": SMALL_SPEC,
        "targets": [1],
        "conditions": ["ParaVC-5", "V2S"],
        "omega_ablation": [],
        "training": {s: FAST for s in ("asv", "asr", "paravc", "v2s")},
    }
    (tmp_path / "exp.json").write_text(json.dumps(cfg))
    code, out, _ = _run(capsys, "experiment", "--config", tmp_path / "exp.json", "--out-dir", tmp_path / "run")
    assert code == 0
    report = json.loads((tmp_path / "run" / "report.json").read_text())
    assert {c["method"] for c in report["conditions"]} == {"ParaVC", "V2S", "Source"}
    assert (tmp_path / "run" / "report.tsv").exists()
    assert (tmp_path / "run" / "training_curves.png").exists()
    assert "report:" in out


def test_parser_builds():
    assert build_parser().prog == "v2s-lab"
