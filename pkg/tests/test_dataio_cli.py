import csv
import json

import numpy as np
import pytest
from numpy.random import default_rng

from ordcfa import build_model_spec, make_constraints
from ordcfa import dataio
from ordcfa.cli import main
from ordcfa.dataio import (
    DataError,
    load_params,
    load_responses,
    parse_model_spec,
    parse_study_config,
    save_params,
    write_rows_csv,
)
from ordcfa.identify import random_parameter_set
from ordcfa.simulate import generate_dataset


# ----------------------------------------------------------------- model txt

def test_parse_model_spec_happy():
    spec = parse_model_spec(
        "# survey design\n"
        "F1: a=3 b=4   # trailing comment\n"
        "\n"
        "F2: c=2 d=5\n"
    )
    assert spec.item_names == ("a", "b", "c", "d")
    assert spec.K == (3, 4, 2, 5)
    assert spec.factor_names == ("F1", "F2")


@pytest.mark.parametrize(
    "text,fragment",
    [
        ("just words\n", "line 1"),
        ("F: a=x\n", "bad category count"),
        ("F: a=1\n", "at least 2 categories"),
        ("F: a=3 a=4\n", "redeclared"),
        ("F: a=3\nF: b=3\n", "duplicate factor"),
        ("F: a\n", "needs '=K' on first mention"),
        ("F:\n", "no items"),
        ("", "defines no factors"),
    ],
)
def test_parse_model_spec_errors(text, fragment):
    with pytest.raises(DataError, match=fragment):
        parse_model_spec(text)


# ------------------------------------------------------------- response CSVs

_SPEC2 = build_model_spec({"a": 3, "b": 4}, {"f": ["a", "b"]})


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_load_responses_counts_and_notes(tmp_path):
    p = _write(
        tmp_path / "r.csv",
        "junk,a,b\n"
        "x,1,2\n"
        "\n"
        "y,,3\n"
        "z,3,2\n",
    )
    data, report = load_responses(p, _SPEC2)
    assert data.n == 2
    assert report.n_rows_read == 3
    assert report.n_dropped_missing == 1
    # category 2 of item a and 1/4 of item b never occur
    joined = " ".join(report.notes)
    assert "item a" in joined and "item b" in joined
    assert report.lines()[0] == "rows read: 3, kept: 2, dropped for missing values: 1"


def test_load_responses_field_count_error(tmp_path):
    p = _write(tmp_path / "r.csv", "a,b\n1,2\n3\n")
    with pytest.raises(DataError, match="line 3: expected 2 fields, got 1"):
        load_responses(p, _SPEC2)


def test_load_responses_code_errors(tmp_path):
    p = _write(tmp_path / "r.csv", "a,b\n1,9\n")
    with pytest.raises(DataError, match="line 2: item b: code 9 outside 1..4"):
        load_responses(p, _SPEC2)
    p = _write(tmp_path / "r2.csv", "a,b\noften,2\n")
    with pytest.raises(DataError, match="use --recode"):
        load_responses(p, _SPEC2)


def test_load_responses_missing_column(tmp_path):
    p = _write(tmp_path / "r.csv", "a,zz\n1,2\n")
    with pytest.raises(DataError, match="lacks columns b"):
        load_responses(p, _SPEC2)


def test_recode_label_orders(tmp_path):
    # numeric labels sort by value, not as text
    p = _write(tmp_path / "r.csv", "a,b\n10,never\n2,often\n10,always\n")
    data, report = load_responses(p, _SPEC2, recode=True)
    assert report.recode_maps["a"] == {"2": 1, "10": 2}
    assert report.recode_maps["b"] == {"always": 1, "never": 2, "often": 3}
    assert data.y[:, 0].tolist() == [2, 1, 2]
    # more labels than categories is an error
    p = _write(tmp_path / "r2.csv", "a,b\nw,1\nx,1\ny,1\nz,1\n")
    with pytest.raises(DataError, match="item a: 4 distinct labels exceed 3"):
        load_responses(p, _SPEC2, recode=True)


# ------------------------------------------------------------ parameter JSON

def _integer_params():
    spec = build_model_spec(
        {"u": 3, "v": 3, "w": 4}, {"g": ["u", "v", "w"]}
    )
    cs = make_constraints(spec, "integer")
    ps = random_parameter_set(spec, cs, default_rng(12))
    return spec, ps


def test_params_roundtrip_exact(tmp_path):
    spec, ps = _integer_params()
    path = str(tmp_path / "p.json")
    save_params(path, ps, spec, "integer", extra={"loglik": -12.5})
    got, spec2, regime, payload = load_params(path)
    assert regime == "integer"
    assert spec2.item_names == spec.item_names and spec2.K == spec.K
    assert np.array_equal(got.nu, ps.nu)
    assert np.array_equal(got.lam, ps.lam)
    for a, b in zip(got.tau, ps.tau):
        assert np.array_equal(a, b)
    assert np.array_equal(got.theta, ps.theta)
    assert np.array_equal(got.kappa, ps.kappa)
    assert np.array_equal(got.phi, ps.phi)
    assert np.array_equal(got.fixed.lam, ps.fixed.lam)
    assert payload["fit"] == {"loglik": -12.5}


def test_params_file_validation(tmp_path):
    spec, ps = _integer_params()
    path = str(tmp_path / "p.json")
    save_params(path, ps, spec, "integer")
    payload = json.loads(open(path).read())

    untagged = dict(payload)
    untagged["regime"] = ""
    q = tmp_path / "untagged.json"
    q.write_text(json.dumps(untagged))
    with pytest.raises(DataError, match="without a constraint-regime tag"):
        load_params(str(q))

    wrong = dict(payload)
    wrong["format"] = "something-else"
    q = tmp_path / "wrong.json"
    q.write_text(json.dumps(wrong))
    with pytest.raises(DataError, match="not a ordcfa-params-v1 file"):
        load_params(str(q))

    tampered = json.loads(json.dumps(payload))
    tampered["spec"]["items"][0][1] = 5
    q = tmp_path / "tampered.json"
    q.write_text(json.dumps(tampered))
    with pytest.raises(DataError, match="fingerprint"):
        load_params(str(q))

    q = tmp_path / "garbled.json"
    q.write_text("{not json")
    with pytest.raises(DataError, match="not valid JSON"):
        load_params(str(q))


def test_write_rows_csv_float_roundtrip(tmp_path):
    vals = [0.1 + 0.2, 1.0 / 3.0, -2.5e-17, float(np.pi)]
    path = tmp_path / "rows.csv"
    write_rows_csv(str(path), [("x", "label")] + [(v, "r") for v in vals])
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x", "label"]
    for (text, _), want in zip(rows[1:], vals):
        assert float(text) == want  # exact, not approximate


# ---------------------------------------------------------------- study cfg

def test_parse_study_config_happy():
    conditions, options = parse_study_config(
        "[study]\n"
        "reps = 7\n"
        "nodes = 9\n"
        "n = 250\n"
        "[corner]\n"
        "indicators_per_factor = 6\n"
        "loading = 0.4\n"
        "K = 3\n"
        "distribution = skewed\n"
        "[easy]\n"
        "indicators_per_factor = 3\n"
        "loading = 0.8\n"
        "K = 5\n"
        "distribution = symmetric\n"
        "prop_sparse = 0.5\n"
        "n = 900\n"
        "seed = 4\n"
    )
    assert options == {"reps": 7, "nodes": 9, "n": 250}
    assert len(conditions) == 2
    corner, easy = conditions
    assert corner.K == 3 and corner.n == 250 and corner.seed is None
    assert corner.prop_sparse == 1.0
    assert easy.K == 5 and easy.n == 900 and easy.seed == 4
    assert easy.prop_sparse == 0.5


@pytest.mark.parametrize(
    "body,fragment",
    [
        ("[c]\nindicators_per_factor = 3\nloading = .6\nK = 3\n",
         "missing distribution"),
        ("[c]\nindicators_per_factor = 3\nloading = .6\nK = 3\n"
         "distribution = symmetric\nshape = 2\n", "unknown keys shape"),
        ("[c]\nindicators_per_factor = 3\nloading = .6\nK = 4\n"
         "distribution = bathtub\n", "cell \\[c\\]"),
        ("[study]\nreps = 5\n", "defines no cells"),
    ],
)
def test_parse_study_config_errors(body, fragment):
    with pytest.raises(DataError, match=fragment):
        parse_study_config(body)


def test_manifest_is_deterministic(tmp_path):
    src = tmp_path / "input.txt"
    src.write_text("payload\n")
    m1, m2 = str(tmp_path / "m1.json"), str(tmp_path / "m2.json")
    for m in (m1, m2):
        dataio.write_manifest(
            m, command=["ordcfa", "fit", "x"], inputs=[str(src)],
            seeds={"master_seed": 3}, settings={"nodes": 11},
        )
    assert open(m1, "rb").read() == open(m2, "rb").read()
    payload = json.loads(open(m1).read())
    assert payload["inputs"][str(src)] == dataio.file_sha256(str(src))
    assert payload["seeds"] == {"master_seed": 3}
    assert "numpy" in payload["versions"]


# ----------------------------------------------------------------------- CLI

@pytest.fixture(scope="module")
def clidir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cliwork")
    spec = build_model_spec(
        {"it1": 3, "it2": 3, "it3": 3, "it4": 3},
        {"f": ["it1", "it2", "it3", "it4"]},
    )
    cs = make_constraints(spec, "traditional")
    pop = random_parameter_set(spec, cs, default_rng(404))
    data = generate_dataset(pop, 300, 11)
    lines = ["respondent,it1,it2,it3,it4"]
    for i, row in enumerate(data.y):
        lines.append("%d,%s" % (i + 1, ",".join(map(str, row))))
    (d / "resp.csv").write_text("\n".join(lines) + "\n")
    (d / "model.txt").write_text("f: it1=3 it2=3 it3=3 it4=3\n")
    return d


def test_cli_fit_transform_score_roundtrip(clidir, capsys):
    data, modeltxt = str(clidir / "resp.csv"), str(clidir / "model.txt")
    fitted = str(clidir / "fit.json")
    rc = main(["fit", data, modeltxt, "--constraints", "integer",
               "--out", fitted])
    out = capsys.readouterr().out
    assert rc == 0
    assert "converged: True" in out
    params, spec, regime, payload = load_params(fitted)
    assert regime == "integer"
    assert payload["fit"]["converged"] is True
    assert json.load(open(fitted + ".manifest.json"))["outputs"]

    moved = str(clidir / "trad.json")
    rc = main(["transform", fitted, "--to", "traditional", "--out", moved])
    assert rc == 0
    assert "target constraint residual" in capsys.readouterr().out
    _, _, regime2, _ = load_params(moved)
    assert regime2 == "traditional"
    audit = json.load(open(moved + ".transform.json"))
    assert audit["source_regime"] == "integer"
    assert len(audit["d"]) == spec.m

    scores = str(clidir / "scores.csv")
    rc = main(["score", data, fitted, "--method", "map", "--out", scores])
    assert rc == 0
    with open(scores, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["row", "average", "eta_f", "diverged"]
    assert len(rows) == 301
    first = rows[1]
    # row 1 average equals the mean of its codes
    with open(data, newline="") as fh:
        raw = list(csv.reader(fh))
    codes = [int(c) for c in raw[1][1:]]
    assert float(first[1]) == pytest.approx(np.mean(codes))
    assert all(r[3] == "0" for r in rows[1:])

    rc = main(["score", data, fitted, "--method", "ml",
               "--out", str(clidir / "ml.csv")])
    assert rc == 0
    with open(clidir / "ml.csv", newline="") as fh:
        header = next(csv.reader(fh))
    assert header == ["row", "average", "eta_f", "diverged", "direction_f"]


def test_cli_input_errors(clidir, tmp_path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("it1,it2,it3,it4\n1,2\n")
    rc = main(["fit", str(bad), str(clidir / "model.txt")])
    assert rc == 1
    assert "expected 4 fields" in capsys.readouterr().err

    untagged = tmp_path / "untagged.json"
    untagged.write_text("{}")
    rc = main(["score", str(clidir / "resp.csv"), str(untagged)])
    assert rc == 1

    rc = main(["sweep", "--p", "12", "--K", "5", "--cap", "100",
               "--out", str(tmp_path / "s.csv")])
    assert rc == 1
    assert "cap" in capsys.readouterr().err


def test_cli_sweep(tmp_path):
    out = str(tmp_path / "sweep.csv")
    rc = main(["sweep", "--p", "2..3", "--K", "3", "--out", out])
    assert rc == 0
    with open(out, newline="") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:4] == ["p", "pattern", "average", "map"]
    by_p = {}
    for r in rows[1:]:
        by_p.setdefault(int(r[0]), []).append(r)
    # all K^p patterns of interchangeable items, one row each
    assert len(by_p[2]) == 9 and len(by_p[3]) == 27
    extremes = [r for r in by_p[2] if r[7] == "1"]
    assert len(extremes) == 8  # every pattern except (2,2) touches an endpoint


def test_cli_sumscore_test(clidir, capsys):
    out = str(clidir / "lr.json")
    rc = main(["sumscore-test", str(clidir / "resp.csv"),
               str(clidir / "model.txt"), "--out", out])
    assert rc == 0
    res = json.load(open(out))
    assert set(res) == {"statistic", "df", "p_value", "integer_loglik",
                        "sumscore_loglik", "n_obs"}
    assert res["df"] > 0 and res["statistic"] >= 0
    assert res["integer_loglik"] >= res["sumscore_loglik"]


def test_cli_simulate_runs_and_reruns_byte_identical(tmp_path, capsys):
    cfg = tmp_path / "study.ini"
    cfg.write_text(
        "[study]\n"
        "reps = 1\n"
        "master_seed = 7\n"
        "nodes = 11\n"
        "eval_nodes = 21\n"
        "n = 300\n"
        "[cell]\n"
        "indicators_per_factor = 3\n"
        "loading = 0.6\n"
        "K = 3\n"
        "distribution = symmetric\n"
    )
    outdir = tmp_path / "study_out"
    argv = ["simulate", str(cfg), "--out", str(outdir), "--verbose"]
    rc = main(argv)
    assert rc == 0
    captured = capsys.readouterr()
    assert "rep 0 done" in captured.err
    names = ["rates.csv", "identical_fit.csv", "attribution.csv",
             "records.csv", "manifest.json"]
    first = {n: (outdir / n).read_bytes() for n in names}
    with open(outdir / "records.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert len(rows) == 1 + 6  # header + 3 regimes x 2 starts
    assert rows[0][-1] == "iterations"  # wall-clock seconds stay out

    rc = main(argv)
    assert rc == 0
    for n in names:
        assert (outdir / n).read_bytes() == first[n], n
