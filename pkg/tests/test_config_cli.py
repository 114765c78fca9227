import csv
import hashlib
import json
import math

import pytest

from conftest import needs_mnist
from moreau_fl import cli
from moreau_fl import config as cfg
from moreau_fl import experiment as ex


def tiny(**changes):
    doc = {
        "name": "tiny", "algorithm": "pfedme", "model": "mlr",
        "dataset": {"kind": "synthetic", "seed": 1, "size_min": 40, "size_max": 120},
        "N": 5, "S": 2, "T": 4, "R": 2, "K": 3, "batch_size": 8,
        "lambda": 15, "eta": 0.01, "beta": 1.0, "inner_lr": 0.01, "seed": 0,
    }
    doc.update(changes)
    return doc


def write(tmp_path, name, doc):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


# ---- config ------------------------------------------------------------------

def test_schema_errors_name_the_field():
    for doc, field in [
        (tiny(eta=-1), "eta"),
        (tiny(algorithm="sgd"), "algorithm"),
        (tiny(S=0), "S"),
        (tiny(bogus=1), "<root>"),
        (tiny(dataset={"kind": "synthetic", "alpha_bar": -2}), "dataset.alpha_bar"),
    ]:
        with pytest.raises(cfg.ConfigError, match=field):
            cfg.config_from_dict(doc)
    with pytest.raises(cfg.ConfigError, match="S"):
        cfg.config_from_dict(tiny(S=6))
    with pytest.raises(cfg.ConfigError, match="dataset.N"):
        cfg.config_from_dict(tiny(dataset={"kind": "synthetic", "N": 7}))


def test_all_presets_load():
    names = sorted(p.stem for p in cfg.preset_dir().glob("*.json"))
    assert len(names) >= 12
    for name in names:
        c = cfg.load_preset(name)
        assert c.name == name and c.description
        assert cfg.config_from_dict(c.to_json()) == c


def test_with_updates_revalidates():
    c = cfg.config_from_dict(tiny())
    assert c.with_updates(lam=30).lam == 30 and c.lam == 15
    with pytest.raises(cfg.ConfigError):
        c.with_updates(batch_size=0)


def test_invalid_json_is_config_error(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{nope")
    with pytest.raises(cfg.ConfigError):
        cfg.load_config(bad)


@pytest.mark.parametrize("value, text", [(3, "3"), (0.1, "0.1"), (1 / 3, "0.333333"), (2.0, "2"),
                                         (1234567.0, "1.23457e+06")])
def test_fmt(value, text):
    assert ex.fmt(value) == text


# ---- run -----------------------------------------------------------------------

def test_metrics_csv_schema(tmp_path):
    c = cfg.config_from_dict(tiny(T=1))
    ex.run_repeats(c, tmp_path, 1, record_time=False)
    rows = read_csv(tmp_path / "seed_0" / "metrics.csv")
    assert tuple(rows[0]) == ex.METRIC_COLUMNS
    assert len(rows) == 2 and rows[1][0] == "0" and rows[1][-1] == "0"
    for cell in rows[1][1:-1]:
        assert ex.fmt(float(cell)) == cell and 0 <= float(cell)


def test_repeats_summary(tmp_path):
    s = ex.run_repeats(cfg.config_from_dict(tiny()), tmp_path, 3, record_time=False)
    assert s.seeds == [0, 1, 2]
    vals = s.final_personalized_acc.values
    mean = sum(vals) / 3
    assert s.final_personalized_acc.std == pytest.approx(math.sqrt(sum((v - mean) ** 2 for v in vals) / 2))
    doc = json.loads((tmp_path / "summary.json").read_text())
    assert doc["dataset_hash"] == s.dataset_hash and doc["config"]["name"] == "tiny"
    one = ex.run_repeats(cfg.config_from_dict(tiny()), tmp_path / "one", 1, record_time=False)
    assert one.final_global_acc.std == 0.0


def test_cli_run_and_sweep_cells_match(tmp_path):
    conf = write(tmp_path, "c.json", tiny())
    assert cli.main(["run", "--config", conf, "--out", str(tmp_path / "run"), "--repeats", "1",
                     "--no-timing"]) == 0
    assert cli.main(["sweep", "--config", conf, "--out", str(tmp_path / "sw"), "--param", "lambda",
                     "--values", "15", "--no-timing"]) == 0
    assert sha(tmp_path / "run" / "seed_0" / "metrics.csv") == \
        sha(tmp_path / "sw" / "lambda=15" / "seed_0" / "metrics.csv")
    sweep = read_csv(tmp_path / "sw" / "sweep.csv")
    assert sweep[0][:2] == ["param", "param_value"] and {r[1] for r in sweep[1:]} == {"15"}
    info = json.loads((tmp_path / "sw" / "sweep.json").read_text())
    assert info["param"] == "lambda" and info["values"] == [15]


def test_cli_sweep_multiple_values(tmp_path):
    conf = write(tmp_path, "c.json", tiny(T=2))
    assert cli.main(["sweep", "--config", conf, "--out", str(tmp_path), "--param", "beta",
                     "--values", "1,2.5", "--no-timing"]) == 0
    assert {r[1] for r in read_csv(tmp_path / "sweep.csv")[1:]} == {"1", "2.5"}


def test_threads_env_and_flag_agree(tmp_path, monkeypatch):
    conf = write(tmp_path, "c.json", tiny())
    assert cli.main(["run", "--config", conf, "--out", str(tmp_path / "a"), "--repeats", "1",
                     "--no-timing"]) == 0
    monkeypatch.setenv("MOREAU_FL_THREADS", "4")
    assert cli.main(["run", "--config", conf, "--out", str(tmp_path / "b"), "--repeats", "1",
                     "--no-timing", "--lazy-clients"]) == 0
    assert sha(tmp_path / "a" / "seed_0" / "metrics.csv") == sha(tmp_path / "b" / "seed_0" / "metrics.csv")
    monkeypatch.setenv("MOREAU_FL_THREADS", "many")
    assert cli.main(["run", "--config", conf, "--out", str(tmp_path / "c")]) == cli.EXIT_CONFIG


def test_cli_config_errors(tmp_path, capsys):
    conf = write(tmp_path, "c.json", tiny(eta="fast"))
    assert cli.main(["run", "--config", conf, "--out", str(tmp_path)]) == cli.EXIT_CONFIG
    assert "eta" in capsys.readouterr().err
    good = write(tmp_path, "g.json", tiny())
    assert cli.main(["run", "--config", good, "--out", str(tmp_path), "--repeats", "0"]) == cli.EXIT_CONFIG


def test_cli_missing_data_file(tmp_path):
    conf = write(tmp_path, "c.json", tiny(dataset={"kind": "file", "path": str(tmp_path / "none.fds")}))
    assert cli.main(["run", "--config", conf, "--out", str(tmp_path)]) == cli.EXIT_DATA


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code_keeps_partial_csv(tmp_path, capsys):
    conf = write(tmp_path, "c.json", tiny(algorithm="fedavg", eta=1e300, T=5))
    out = tmp_path / "out"
    assert cli.main(["run", "--config", conf, "--out", str(out), "--repeats", "1"]) == cli.EXIT_DIVERGED
    assert "round" in capsys.readouterr().err
    rows = read_csv(out / "seed_0" / "metrics.csv")
    assert tuple(rows[0]) == ex.METRIC_COLUMNS and len(rows) >= 2


# ---- compare -------------------------------------------------------------------

def test_compare_same_config_twice(tmp_path):
    conf = write(tmp_path, "c.json", tiny())
    assert cli.main(["compare", "--config", conf, conf, "--out", str(tmp_path / "o"), "--no-timing"]) == 0
    rows = read_csv(tmp_path / "o" / "compare.csv")
    k = len(ex.METRIC_COLUMNS) - 1
    assert rows[0][1].startswith("tiny:") and rows[0][1 + k].startswith("tiny#2:")
    for r in rows[1:]:
        assert r[1:1 + k] == r[1 + k:]
    ranking = read_csv(tmp_path / "o" / "ranking.csv")
    assert ranking[0] == ["rank", "entry", "model", "final_test_acc"] and len(ranking) == 5
    accs = [float(r[3]) for r in ranking[1:]]
    assert accs == sorted(accs, reverse=True)


def test_compare_ranking_entries(tmp_path):
    configs = [cfg.config_from_dict(tiny(name=a, algorithm=a)) for a in ("pfedme", "fedavg", "perfedavg")]
    table = ex.run_compare(configs, tmp_path, record_time=False)
    assert sorted(e for e, _, _ in table) == ["fedavg-GM", "perfedavg-PM", "pfedme-GM", "pfedme-PM"]


def test_compare_refuses_mismatch(tmp_path):
    a = write(tmp_path, "a.json", tiny())
    for other in (tiny(seed=1), tiny(dataset={"kind": "synthetic", "seed": 2, "size_min": 40, "size_max": 120})):
        b = write(tmp_path, "b.json", other)
        assert cli.main(["compare", "--config", a, b, "--out", str(tmp_path / "o")]) == cli.EXIT_CONFIG


# ---- gen-data ------------------------------------------------------------------

def test_gen_data_hash_stable(tmp_path, capsys):
    spec = write(tmp_path, "d.json", {"kind": "synthetic", "N": 4, "seed": 0, "size_min": 40, "size_max": 100})
    assert cli.main(["gen-data", "--config", spec, "--out", str(tmp_path / "a.fds")]) == 0
    first = capsys.readouterr().out
    assert first.startswith("sha256 ") and "client   3" in first
    ex._DATA_CACHE.clear()
    assert cli.main(["gen-data", "--config", spec, "--out", str(tmp_path / "b.fds")]) == 0
    assert capsys.readouterr().out.splitlines()[0] == first.splitlines()[0]
    assert sha(tmp_path / "a.fds") == sha(tmp_path / "b.fds")
    spec2 = write(tmp_path, "e.json", {"kind": "synthetic", "N": 4, "seed": 1, "size_min": 40, "size_max": 100})
    assert cli.main(["gen-data", "--config", spec2, "--out", str(tmp_path / "c.fds")]) == 0
    assert capsys.readouterr().out.splitlines()[0] != first.splitlines()[0]


def test_gen_data_bad_sizes(tmp_path):
    spec = write(tmp_path, "d.json", {"kind": "synthetic", "N": 4, "size_max": 100})
    assert cli.main(["gen-data", "--config", spec, "--out", str(tmp_path / "a.fds")]) == cli.EXIT_CONFIG


def test_gen_data_then_run_from_file(tmp_path):
    spec = write(tmp_path, "d.json", {"kind": "synthetic", "N": 5, "seed": 1, "size_min": 40, "size_max": 120})
    assert cli.main(["gen-data", "--config", spec, "--out", str(tmp_path / "d.fds")]) == 0
    direct = ex.run_repeats(cfg.config_from_dict(tiny()), tmp_path / "x", 1, record_time=False)
    from_file = ex.run_repeats(cfg.config_from_dict(tiny(dataset={"kind": "file", "path": str(tmp_path / "d.fds")})),
                               tmp_path / "y", 1, record_time=False)
    assert direct.dataset_hash == from_file.dataset_hash
    assert sha(tmp_path / "x" / "seed_0" / "metrics.csv") == sha(tmp_path / "y" / "seed_0" / "metrics.csv")


@needs_mnist
def test_gen_data_mnist_sizes_in_range(tmp_path, capsys):
    spec = write(tmp_path, "m.json", {"kind": "mnist", "seed": 0})
    assert cli.main(["gen-data", "--config", spec, "--out", str(tmp_path / "m.fds")]) == 0
    lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith("client ")]
    sizes = [int(l.split()[2]) for l in lines]
    assert len(sizes) == 20 and all(1165 <= n <= 3834 for n in sizes)


@needs_mnist
@pytest.mark.slow
def test_mnist_compare_ranks_pfedme_pm_first(tmp_path):
    configs = [cfg.load_preset(f"mnist_mlr_same_{a}").with_updates(eval_every=100, lazy_clients=True)
               for a in ("pfedme", "fedavg", "perfedavg")]
    table = ex.run_compare(configs, tmp_path, record_time=False)
    assert table[0][0] == "mnist_mlr_same_pfedme-PM"
