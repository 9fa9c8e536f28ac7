import json

import numpy as np
import pytest

from transducer_cl.cli import TemplateParseError, main, parse_templates, read_report_wer
from transducer_cl.config import ConfigErrors, load_run_config, parse_config_text
from transducer_cl.exceptions import InvalidArgumentError, UnknownTokenError
from transducer_cl.features import read_feature_dump
from transducer_cl.io import ManifestRecord, Vocabulary, read_manifest, read_wav, write_manifest, write_wav
from transducer_cl.synth import Waveform
from workspace import build_workspace, write


@pytest.fixture(scope="module")
def ws(tmp_path_factory):
    return build_workspace(tmp_path_factory.mktemp("ws"))


# --- io ------------------------------------------------------------------------

def test_vocabulary(tmp_path):
    v = Vocabulary(["a", "b"])
    assert len(v) == 3
    assert v.encode("b a") == (2, 1)
    assert v.decode((1, 2)) == "a b"
    with pytest.raises(UnknownTokenError):
        v.encode("c")
    v.save(tmp_path / "v.txt")
    assert Vocabulary.load(tmp_path / "v.txt").words == ["a", "b"]


def test_wav_roundtrip(tmp_path):
    x = Waveform(np.sin(np.arange(1600) / 7.0) * 0.5)
    write_wav(tmp_path / "a.wav", x)
    y = read_wav(tmp_path / "a.wav")
    assert np.max(np.abs(x.samples - y.samples)) <= 1.0 / 32767


def test_manifest_roundtrip_and_errors(tmp_path):
    recs = [ManifestRecord("u1", "wav/u1.wav", "play music", "real"),
            ManifestRecord("u2", "wav/u2.wav", "stop", "synthetic")]
    write_manifest(tmp_path / "m.tsv", recs)
    assert read_manifest(tmp_path / "m.tsv") == recs
    with pytest.raises(InvalidArgumentError):
        write_manifest(tmp_path / "m.tsv", recs + recs[:1])
    write(tmp_path / "bad.tsv", "u1\tx.wav\tplay\tspoken\n")
    with pytest.raises(InvalidArgumentError):
        read_manifest(tmp_path / "bad.tsv")


def test_parse_templates():
    assert parse_templates("call <slot>\n\n<slot> please\n") == ["call <slot>", "<slot> please"]
    with pytest.raises(TemplateParseError) as e:
        parse_templates("call <slot>\nplay music\n")
    assert e.value.line == 2


# --- config -----------------------------------------------------------------

def test_config_line_numbers():
    with pytest.raises(ConfigErrors) as e:
        parse_config_text("seed = 1\nno equals sign\n", "x.cfg")
    assert "2" in str(e.value)


def test_config_reports_every_error(tmp_path):
    write(tmp_path / "bad.cfg", "seed = x\nfoo = 1\nstages.1.mix.real_pct = 50\nstages.3.steps = 4\n")
    with pytest.raises(ConfigErrors) as e:
        load_run_config(tmp_path / "bad.cfg")
    text = "\n".join(e.value.errors)
    for key in ("seed", "foo", "stages.1.steps", "without gaps", "data.real"):
        assert key in text


def test_config_defaults_and_overrides(ws):
    cfg = load_run_config(ws / "train.cfg", seed_override=9, out_override=ws / "elsewhere")
    assert cfg.seed == 9
    assert cfg.out_dir == ws / "elsewhere"
    assert [s.name for s in cfg.stages] == ["stage1", "stage2", "stage3", "stage4"]
    assert cfg.stages[0].mix.synth_pct == 5
    assert cfg.stages[0].freeze_encoder and not cfg.stages[1].freeze_encoder
    assert cfg.stages[2].elastic.lam == 10.0
    assert cfg.stages[2].elastic.component_scope == {"decoder", "joint"}
    assert [s.seed for s in cfg.stages] == [10, 11, 12, 13]
    assert cfg.model_config(15).enc_units == 8


# --- CLI ----------------------------------------------------------------------

def test_synth_writes_all_combinations(ws):
    recs = read_manifest(ws / "synth" / "manifest.tsv")
    assert len(recs) == 3 * 5 * 2
    assert all(r.source == "synthetic" for r in recs)
    assert len(list((ws / "synth" / "wav").glob("*.wav"))) == 30
    assert {r.source for r in read_manifest(ws / "real" / "manifest.tsv")} == {"real"}


def test_bad_template_exits_2(ws, capsys):
    write(ws / "bad.txt", "call <slot>\nplay music\n")
    cfg = (ws / "synth.cfg").read_text().replace("templates.txt", "bad.txt").replace("out_dir = synth",
                                                                                       "out_dir = badsynth")
    write(ws / "bad.cfg", cfg)
    assert main(["synth", "--config", str(ws / "bad.cfg")]) == 2
    assert "line 2" in capsys.readouterr().err


def test_invalid_config_exits_2(ws, capsys):
    write(ws / "broken.cfg", "seed = x\nfoo = 1\n")
    assert main(["train", "--config", str(ws / "broken.cfg")]) == 2
    err = capsys.readouterr().err
    assert "seed" in err and "foo" in err


def test_missing_input_exits_2(ws):
    assert main(["decode", "--config", str(ws / "train.cfg"), "--checkpoint", str(ws / "nope.npz"),
                 "--manifest", str(ws / "real" / "manifest.tsv")]) == 2


def test_corrupt_preview(ws):
    out = ws / "prev"
    assert main(["corrupt-preview", "--config", str(ws / "train.cfg"), "--out", str(out),
                 str(ws / "real" / "wav" / sorted(p.name for p in (ws / "real" / "wav").iterdir())[0])]) == 0
    lines = (out / "preview.tsv").read_text().splitlines()
    assert len(lines) == 2
    assert lines[1].split("\t")[2] in ("clean", "reverb", "noise", "both")
    assert len(list(out.glob("*.corrupt.wav"))) == 1


def test_features_dump(ws):
    out = ws / "feats"
    assert main(["features-dump", "--config", str(ws / "train.cfg"), "--out", str(out),
                 "--manifest", str(ws / "real" / "manifest.tsv")]) == 0
    dumps = sorted(out.glob("*.feat"))
    assert len(dumps) == len(read_manifest(ws / "real" / "manifest.tsv"))
    F = read_feature_dump(dumps[0])
    assert F.values.shape[1] == 192 and F.frame_rate_ms == 30.0


@pytest.fixture(scope="module")
def trained(ws):
    assert main(["train", "--config", str(ws / "train.cfg")]) == 0
    assert main(["train", "--config", str(ws / "train.cfg"), "--out", str(ws / "run2")]) == 0
    return ws


def test_train_outputs(trained):
    run = trained / "run"
    names = ["stage1_stage1", "stage2_stage2", "stage3_stage3", "stage4_stage4"]
    assert sorted(p.stem for p in (run / "checkpoints").glob("*.npz")) == names
    summary = json.loads((run / "summary.json").read_text())
    assert len(summary["stages"]) == 4
    log = (run / "stage1_stage1.log").read_text().splitlines()
    assert len(log) == 3 and log[0].startswith("step 0 lr ")


def test_train_is_bit_identical(trained):
    for a in sorted((trained / "run" / "checkpoints").glob("*.npz")):
        assert a.read_bytes() == (trained / "run2" / "checkpoints" / a.name).read_bytes()
    assert (trained / "run" / "summary.json").read_text() == (trained / "run2" / "summary.json").read_text()


def test_decode_and_eval(trained, capsys):
    ck = str(trained / "run" / "checkpoints" / "stage4_stage4.npz")
    manifest = str(trained / "real" / "manifest.tsv")
    cfg = str(trained / "train.cfg")
    assert main(["decode", "--config", cfg, "--checkpoint", ck, "--manifest", manifest]) == 0
    hyp = (trained / "run" / "manifest.hyp.tsv").read_text().splitlines()
    assert len(hyp) == len(read_manifest(manifest))

    assert main(["eval", "--config", cfg, "--checkpoint", ck, "--manifest", manifest, "--name", "base"]) == 0
    base = trained / "run" / "base.report"
    assert "# summary" in base.read_text()
    assert main(["eval", "--config", cfg, "--checkpoint", ck, "--manifest", manifest, "--name", "self",
                 "--baseline", str(base), "--nwer"]) == 0
    report = (trained / "run" / "self.report").read_text()
    if read_report_wer(base) > 0:
        assert "nwer 100.00" in report
    capsys.readouterr()
    assert main(["eval", "--config", cfg, "--checkpoint", ck, "--manifest", manifest, "--nwer"]) == 2


def test_unknown_word_in_manifest_exits_2(trained):
    bad = trained / "real" / "unknown.tsv"
    rec = read_manifest(trained / "real" / "manifest.tsv")[0]
    write_manifest(bad, [ManifestRecord(rec.id, rec.audio_path, "zebra", "real")])
    ck = str(trained / "run" / "checkpoints" / "stage4_stage4.npz")
    assert main(["eval", "--config", str(trained / "train.cfg"), "--checkpoint", ck, "--manifest", str(bad)]) == 2
