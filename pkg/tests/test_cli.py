import csv
import json

import pytest

from flowtree import cli
from flowtree.flowparse import read_flows_jsonl

import pcap_fixtures as F

FAST = ["--scale", "0.002", "--epochs", "3", "--hidden", "8", "--seed", "1"]


def three_flow_pcap(path):
    frames = [F.UDP_AB, F.TCP_EMPTY, F.TCP_OPTS_GET, F.udp_frame([10, 0, 0, 7], 123, [10, 0, 0, 3], 123, b"ntp")]
    path.write_bytes(F.GLOBAL_LE + b"".join(F.record(100 + i, 0, f) for i, f in enumerate(frames)))
    return path


def label_csv(path, rows):
    path.write_text("flow_key,label\n" + "".join(f"{k},{v}\n" for k, v in rows))
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_featurize_three_flows(tmp_path, capsys):
    pcap = three_flow_pcap(tmp_path / "x.pcap")
    labels = label_csv(tmp_path / "l.csv", [
        ("10.0.0.1:5353-10.0.0.2:53/UDP", "Bot"),
        ("93.184.216.34:80-192.168.1.10:40000/TCP", "Cerber"),  # numeric order, not string order
    ])
    out = tmp_path / "f.csv"
    assert cli.main(["featurize", str(pcap), "--labels", str(labels), "--default-label", "Benign", "--out", str(out)]) == 0
    rows = read_csv(out)
    assert len(rows) == 4 and all(len(r) == 534 for r in rows)
    assert [r[-1] for r in rows[1:]] == ["Bot", "Cerber", "Benign"]
    assert "3 flows" in capsys.readouterr().out


def test_featurize_empty_pcap(tmp_path):
    (tmp_path / "e.pcap").write_bytes(F.GLOBAL_BE)
    assert cli.main(["featurize", str(tmp_path / "e.pcap"), "--out", str(tmp_path / "e.csv")]) == 0
    rows = read_csv(tmp_path / "e.csv")
    assert len(rows) == 1 and len(rows[0]) == 534


def test_featurize_unlabeled_is_data_error(tmp_path, capsys):
    pcap = three_flow_pcap(tmp_path / "x.pcap")
    assert cli.main(["featurize", str(pcap), "--out", str(tmp_path / "f.csv")]) == cli.EXIT_DATA
    assert "no label" in capsys.readouterr().err


def test_bad_magic_is_data_error(tmp_path):
    (tmp_path / "bad.pcap").write_bytes(b"\x0a\x0d\x0d\x0a" + b"\x00" * 40)
    assert cli.main(["featurize", str(tmp_path / "bad.pcap"), "--default-label", "Benign",
                     "--out", str(tmp_path / "f.csv")]) == cli.EXIT_DATA


def test_config_errors(tmp_path):
    assert cli.main(["compare", *FAST, "--eta", "-1", "--out-dir", str(tmp_path)]) == cli.EXIT_CONFIG
    assert cli.main(["zero-shot", *FAST, "--holdout", "Benign", "--out-dir", str(tmp_path)]) == cli.EXIT_CONFIG
    assert cli.main(["partial-flow", *FAST, "--fractions", "0,1", "--out-dir", str(tmp_path)]) == cli.EXIT_CONFIG
    (tmp_path / "c.json").write_text('{"Nope": 2}')
    assert cli.main(["compare", *FAST, "--coeff-file", str(tmp_path / "c.json"), "--out-dir", str(tmp_path)]) == cli.EXIT_CONFIG
    with pytest.raises(SystemExit) as e:
        cli.main(["compare", "--methods"])
    assert e.value.code == 2


def test_gen_data_and_featurize_roundtrip(tmp_path):
    jsonl, pcap = tmp_path / "d.jsonl", tmp_path / "d.pcap"
    assert cli.main(["gen-data", "--scale", "0.002", "--seed", "2", "--out", str(jsonl), "--pcap", str(pcap)]) == 0
    flows = read_flows_jsonl(jsonl)
    assert cli.main(["featurize", str(pcap), "--labels", str(tmp_path / "d_labels.csv"),
                     "--idle-timeout", "100000", "--out", str(tmp_path / "p.csv")]) == 0
    assert cli.main(["featurize", str(jsonl), "--out", str(tmp_path / "j.csv")]) == 0
    assert len(read_csv(tmp_path / "j.csv")) == len(flows) + 1


def test_compare_outputs_and_determinism(tmp_path):
    args = ["compare", *FAST, "--methods", "vanilla-dnn,tsdnn-qdbp"]
    assert cli.main([*args, "--out-dir", str(tmp_path / "a")]) == 0
    assert cli.main([*args, "--out-dir", str(tmp_path / "b")]) == 0
    names = ["report_vanilla-dnn.json", "report_tsdnn-qdbp.json", "matrix_tsdnn-qdbp.csv", "comparison.csv"]
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()
    rep = json.loads((tmp_path / "a" / "report_tsdnn-qdbp.json").read_text())
    assert rep["config"]["seed"] == 1 and rep["artifact_version"]
    assert set(rep) >= {"experiment", "seed", "accuracy", "avg_precision", "per_class", "matrix"}
    assert read_csv(tmp_path / "a" / "comparison.csv")[0] == ["method", "accuracy", "precision"]


def test_partial_flow_rows(tmp_path):
    assert cli.main(["partial-flow", *FAST, "--fractions", "0.05,0.25,0.5,1.0", "--out-dir", str(tmp_path)]) == 0
    rows = read_csv(tmp_path / "partial_flow.csv")
    assert rows[0] == ["fraction", "accuracy"] and len(rows) == 5


def test_zero_shot_excludes_holdout(tmp_path):
    assert cli.main(["zero-shot", *FAST, "--holdout", "Cerber", "--out-dir", str(tmp_path)]) == 0
    res = json.loads((tmp_path / "zero_shot.json").read_text())
    assert "Cerber" not in res["trained_classes"] and len(res["trained_classes"]) == 11
    assert set(res["per_family"]) == {"Cerber"}


def test_train_then_eval(tmp_path, capsys):
    assert cli.main(["train", *FAST, "--out-dir", str(tmp_path)]) == 0
    model = tmp_path / "model_tsdnn-qdbp.json"
    assert cli.main(["eval", *FAST, "--model", str(model), "--out-dir", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "eval_tsdnn-qdbp.json").read_text())
    assert 0 <= rep["accuracy"] <= 1
    assert cli.main(["train", *FAST, "--method", "dnn-qdbp", "--out-dir", str(tmp_path)]) == 0
    assert cli.main(["eval", *FAST, "--model", str(tmp_path / "model_dnn-qdbp.json"), "--out-dir", str(tmp_path)]) == 0


def test_coeff_file_reaches_config(tmp_path):
    (tmp_path / "c.json").write_text('{"Cryptomix": 1.5}')
    assert cli.main(["compare", *FAST, "--methods", "dnn-qdbp", "--coeff-file", str(tmp_path / "c.json"),
                     "--out-dir", str(tmp_path)]) == 0
    rep = json.loads((tmp_path / "report_dnn-qdbp.json").read_text())
    assert rep["config"]["coefficients"] == {"Cryptomix": 1.5}
