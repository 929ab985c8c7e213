import csv
import io
import json

import pytest

from simplexq import cli
from simplexq.errors import ConfigError


def run(argv, capsys):
    code = cli.main(argv)
    out, err = capsys.readouterr()
    return code, out, err


def test_parse_simulate_flags():
    spec = cli.parse_spec("simulate --k 2 --policy reptoall --dist exp:1 --lambda 0.6 "
                          "--requests 100000 --seed 7".split())
    assert (spec.k, spec.lam, spec.requests, spec.seed) == (2, 0.6, 100000, 7)


def test_config_file_and_override(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"policy": "selectone", "weights": [0.5, 0.5], "k": 2,
                                "lambda": 0.4, "seed": 3}))
    spec = cli.parse_spec(["simulate", "--config", str(path), "--seed", "11"])
    assert spec.weights == (0.5, 0.5) and spec.seed == 11 and spec.lam == 0.4


def test_unknown_key(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"lambda": 0.4, "colour": "red"}))
    code, _, err = run(["analytic", "--config", str(path)], capsys)
    assert code == 2 and "colour" in err


def test_bad_weights(capsys):
    code, _, err = run("simulate --k 2 --policy selectone --weights 0.5,0.4 --lambda 1".split(), capsys)
    assert code == 2 and "weights" in err
    with pytest.raises(ConfigError):
        cli.parse_spec("analytic --k 2 --dist gamma:1 --lambda 0.1".split())


def test_compare_t1_header(capsys):
    code, out, _ = run("compare --k 2 --dist exp:1 --sweep 0.2 0.6 3 --requests 5000".split(), capsys)
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert rows[0] == ["lambda", "sim_mean", "sim_ci", "mg1_approx", "lb_st", "ub_splitmerge", "ub_ma"]
    assert len(rows) == 4
    assert "\r\n" in out


def test_analytic_zero_lambda(capsys):
    code, out, _ = run("analytic --k 3 --dist exp:1 --lambda 0 --method naive".split(), capsys)
    row = next(csv.DictReader(io.StringIO(out)))
    want = sum([16 / 35, 11 / 30, 0.3, 0.25]) / 4
    assert code == 0 and float(row["mg1_approx"]) == pytest.approx(want)


def test_json_round_trip(capsys):
    code, out, _ = run("analytic --k 3 --dist exp:1 --sweep 0.5 2.5 3 --format json".split(), capsys)
    data = json.loads(out)
    assert code == 0 and len(data) == 3
    # split-merge is unstable at 2.5; its cell is null
    assert data[-1]["ub_splitmerge"] is None


def test_byte_identical(tmp_path):
    outs = []
    for name in ("a.csv", "b.csv"):
        path = tmp_path / name
        code = cli.main(f"sweep --k 3 --dist exp:1 --sweep 0.5 1.0 2 --requests 4000 --seed 5 "
                        f"--output {path}".split())
        assert code == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]


def test_instability_exit(capsys):
    code, out, err = run("sweep --k 1 --dist exp:1 --sweep 0.5 3 2 --requests 200000".split(), capsys)
    assert code == 3
    rows = list(csv.reader(io.StringIO(out)))
    assert len(rows) == 2 and rows[1][0] == "0.5"


def test_qbd_and_fairnessfirst(capsys):
    code, out, _ = run("qbd --k 2 --lambda 0.5 --format json".split(), capsys)
    assert code == 0 and json.loads(out)[0]["normalization"] == pytest.approx(1)
    code, out, _ = run("compare --k 3 --policy fairnessfirst --arrivals hotcold --lambda 0.2 "
                       "--lambda-c 0.1 --requests 5000".split(), capsys)
    assert code == 0 and "ff_lowtraffic" in out


def test_heterogeneous_rates(capsys):
    code, out, _ = run("compare --k 2 --gamma 2 --alpha 1 --beta 1 --lambda 0.5 --requests 5000".split(),
                       capsys)
    row = next(csv.DictReader(io.StringIO(out)))
    assert code == 0 and row["ub_ma"] and row["lb_st"] == ""
