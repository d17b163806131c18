import csv
import io
import json
import re

import numpy as np
import pytest

from tafilter.cli import main
from tafilter.data import read_manifest, write_features, write_manifest


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def parse_kv(text):
    return dict(line.split("\t", 1) for line in text.strip().splitlines() if "\t" in line)


@pytest.fixture(scope="module")
def small_manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_data")
    assert main(["synth", "--out", str(out), "--train-count", "30", "--test-count", "15",
                 "--dim", "4"]) == 0
    return out / "manifest.tsv"


def test_synth_defaults(tmp_path, capsys):
    code, out, _ = run(capsys, "synth", "--out", tmp_path, "--train-count", "10", "--test-count", "5")
    assert code == 0
    assert out.strip() == str(tmp_path / "manifest.tsv")
    m = read_manifest(out.strip())
    assert m.class_count == 5
    assert sum(e.split == "train" for e in m.entries) == 10


def test_synth_rejects_single_class(tmp_path, capsys):
    code, _, err = run(capsys, "synth", "--out", tmp_path, "--classes", "1")
    assert code == 1
    assert "2 classes" in err


def test_synth_same_seed_same_files(tmp_path, capsys):
    for name in ("a", "b"):
        assert run(capsys, "synth", "--out", tmp_path / name, "--train-count", "6",
                   "--test-count", "3", "--seed", "9")[0] == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_bad_flags_are_usage_errors(tmp_path, capsys, small_manifest):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--manifest", str(small_manifest), "--model", "bogus", "--out", "x"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main([])
    assert exc.value.code == 1
    code, _, _ = run(capsys, "train", "--manifest", small_manifest, "--model", "mean",
                     "--momentum", "1.5", "--out", tmp_path / "m.json")
    assert code == 1


def test_missing_manifest_is_data_error(tmp_path, capsys):
    code, _, err = run(capsys, "train", "--manifest", tmp_path / "nope.tsv", "--model", "mean",
                       "--out", tmp_path / "m.json")
    assert code == 2
    assert err


def test_train_then_eval_agree(tmp_path, capsys, small_manifest):
    ckpt = tmp_path / "static.json"
    code, out, _ = run(capsys, "train", "--manifest", small_manifest, "--model", "static",
                       "--filters", "3", "--taps", "2", "--hidden", "8", "--iters", "15",
                       "--batch", "10", "--eval-every", "5", "--out", ckpt)
    assert code == 0
    reported = parse_kv(out)
    doc = json.loads(ckpt.read_text())
    assert doc["kind"] == "static"

    rows = list(csv.DictReader(open(f"{ckpt}.history.tsv"), delimiter="\t"))
    assert list(rows[0]) == ["iteration", "batch_loss", "eval_accuracy"]
    assert len(rows) == 15
    assert [r["iteration"] for r in rows if r["eval_accuracy"]] == ["5", "10", "15"]

    code, out, _ = run(capsys, "eval", "--checkpoint", ckpt, "--manifest", small_manifest)
    assert code == 0
    lines = out.strip().splitlines()
    assert lines[0] == f"accuracy\t{reported['test_accuracy']}"
    cm = np.array([[int(v) for v in line.split("\t")[1:]] for line in lines[2:]])
    labels = [e.label for e in read_manifest(small_manifest).entries if e.split == "test"]
    assert np.array_equal(cm.sum(axis=1), np.bincount(labels, minlength=5))


def test_train_mean_has_no_filters(tmp_path, capsys, small_manifest):
    ckpt = tmp_path / "mean.json"
    assert run(capsys, "train", "--manifest", small_manifest, "--model", "mean", "--hidden", "4",
               "--iters", "3", "--batch", "5", "--out", ckpt)[0] == 0
    doc = json.loads(ckpt.read_text())
    assert "filters" not in doc["arrays"]
    code, out, err = run(capsys, "inspect", "--checkpoint", ckpt)
    assert code == 0
    assert out.strip() == "m\titeration\tg\tdelta\tsigma\tg_rel\tdelta_rel"
    assert "no temporal filters" in err


def test_one_vs_all_round_trip(tmp_path, capsys, small_manifest):
    ckpt = tmp_path / "ova.json"
    code, out, _ = run(capsys, "train", "--manifest", small_manifest, "--model", "static",
                       "--filters", "2", "--hidden", "4", "--iters", "3", "--batch", "5",
                       "--one-vs-all", "--out", ckpt)
    assert code == 0
    assert json.loads(ckpt.read_text())["kind"] == "one_vs_all"
    code, out2, _ = run(capsys, "eval", "--checkpoint", ckpt, "--manifest", small_manifest)
    assert code == 0
    assert out2.splitlines()[0] == "accuracy\t" + parse_kv(out)["test_accuracy"]
    code, out3, _ = run(capsys, "inspect", "--checkpoint", ckpt, "--member", "4")
    assert code == 0 and len(out3.strip().splitlines()) == 3


def test_eval_errors(tmp_path, capsys, small_manifest):
    ckpt = tmp_path / "m.json"
    assert run(capsys, "train", "--manifest", small_manifest, "--model", "max", "--hidden", "4",
               "--iters", "1", "--batch", "4", "--out", ckpt)[0] == 0

    m = read_manifest(small_manifest)
    train_only = tmp_path / "train_only.tsv"
    write_manifest(train_only, [e for e in m.entries if e.split == "train"], classes=5)
    code, _, err = run(capsys, "eval", "--checkpoint", ckpt, "--manifest", train_only)
    assert code == 2 and "empty" in err

    rng = np.random.default_rng(0)
    entries = []
    for n in range(4):
        path = tmp_path / f"wide{n}.taf"
        write_features(path, rng.normal(size=(20, 7)))
        entries.append(type(m.entries[0])(path=str(path), label=n % 2, split="test" if n % 2 else "train"))
    wide = tmp_path / "wide.tsv"
    write_manifest(wide, entries, classes=5)
    code, _, err = run(capsys, "eval", "--checkpoint", ckpt, "--manifest", wide)
    assert code == 2 and "D=" in err


@pytest.mark.parametrize("kind", ["static", "lstm", "max", "pyramid"])
def test_gradcheck_passes(kind, capsys):
    code, out, _ = run(capsys, "gradcheck", "--model", kind)
    assert code == 0
    assert out.strip().splitlines()[-1].startswith(f"{kind}: PASS")


def test_gradcheck_impossible_tolerance(capsys):
    code, out, _ = run(capsys, "gradcheck", "--model", "static", "--tol", "1e-12")
    assert code != 0
    assert "FAIL" in out


def _rows(text):
    return list(csv.DictReader(io.StringIO(text), delimiter="\t"))


def test_inspect_untrained_lstm(tmp_path, capsys, small_manifest):
    ckpt = tmp_path / "lstm.json"
    assert run(capsys, "train", "--manifest", small_manifest, "--model", "lstm", "--filters", "2",
               "--taps", "5", "--hidden", "4", "--lstm-hidden", "3", "--iters", "0",
               "--out", ckpt)[0] == 0
    code, out, err = run(capsys, "inspect", "--checkpoint", ckpt, "--length", "64")
    assert code == 0
    assert "initialization-time" in err
    rows = _rows(out)
    assert len(rows) == 2
    for r in rows:
        assert r["iteration"] == "1"
        assert float(r["g_rel"]) == pytest.approx(0.5, abs=1e-12)
        assert float(r["delta_rel"]) == pytest.approx(1.0, abs=1e-12)
        assert float(r["g"]) == pytest.approx(32.0)

    feats = tmp_path / "clip.taf"
    write_features(feats, np.random.default_rng(1).normal(size=(37, 4)))
    code, out, err = run(capsys, "inspect", "--checkpoint", ckpt, "--features", feats,
                         "--svg", tmp_path / "f.svg")
    assert code == 0 and not err
    rows = _rows(out)
    assert sorted({r["iteration"] for r in rows}) == ["1", "2", "3", "4"]
    assert float(rows[0]["g"]) == pytest.approx(18.5)


def test_inspect_pyramid_and_svg(tmp_path, capsys, small_manifest):
    ckpt = tmp_path / "pyr.json"
    assert run(capsys, "train", "--manifest", small_manifest, "--model", "pyramid",
               "--pyramid-level", "1", "--hidden", "4", "--iters", "1", "--batch", "3",
               "--out", ckpt)[0] == 0
    tsv, svg = tmp_path / "p.tsv", tmp_path / "p.svg"
    code, out, _ = run(capsys, "inspect", "--checkpoint", ckpt, "--tsv", tsv, "--svg", svg)
    assert code == 0 and out == ""
    rows = _rows(tsv.read_text())
    assert len(rows) == 1 and float(rows[0]["g_rel"]) == 0.5
    text = svg.read_text()
    assert 'width="800"' in text and 'height="80"' in text
    polyline = re.search(r'points="([^"]+)"', text).group(1)
    assert len(polyline.split()) == 256


def test_inspect_static_lanes(tmp_path, capsys, small_manifest):
    ckpt = tmp_path / "s.json"
    assert run(capsys, "train", "--manifest", small_manifest, "--model", "static", "--filters", "3",
               "--taps", "2", "--hidden", "4", "--iters", "2", "--batch", "3", "--out", ckpt)[0] == 0
    svg = tmp_path / "s.svg"
    code, out, _ = run(capsys, "inspect", "--checkpoint", ckpt, "--svg", svg)
    assert code == 0
    assert 'height="240"' in svg.read_text()
    assert svg.read_text().count("<polyline") == 6
    doc = json.loads(ckpt.read_text())
    filters = np.array(doc["arrays"]["filters"]["values"]).reshape(-1, 3)
    g_rel = [float(r["g_rel"]) for r in _rows(out)]
    assert g_rel == pytest.approx(0.5 * (filters[:, 0] + 1.0), abs=1e-6)
