import csv
import json

import pytest

from kcfield.cli import main
from kcfield.config import ConfigError, ExperimentConfig, bundled_config_path, bundled_configs, load_config

SMALL_BM = {"name": "small", "kind": "BrownianMotion", "p_grid": [4, 8, 16], "points_per_axis": 513,
            "levels": [2, 3, 4, 5, 6, 7, 8], "n_replicates": 300, "holder_replicates": 100, "master_seed": 1}


def write(tmp_path, payload, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


def run(tmp_path, *argv):
    return main(list(argv) + ["--out", str(tmp_path / "out")])


def read_csv(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def test_bundled_configs_load():
    names = bundled_configs()
    for name in ("bm", "fbm-03", "fbm-07", "integrated-bm", "brownian-sheet", "sphere-decay4", "constant"):
        assert name in names
    for name in names:
        load_config(bundled_config_path(name))


def test_config_rejects_unknown_key():
    with pytest.raises(ConfigError, match="colour"):
        ExperimentConfig.from_dict({"colour": 1})


def test_config_rejects_wrong_type():
    with pytest.raises(ConfigError, match="n_replicates"):
        ExperimentConfig.from_dict({"n_replicates": 1.5})
    with pytest.raises(ConfigError, match="p_grid"):
        ExperimentConfig.from_dict({"p_grid": 8})


def test_config_rejects_bad_spec():
    with pytest.raises(ConfigError, match="hurst"):
        ExperimentConfig.from_dict({"kind": "FractionalBM", "hurst": 1.5})


def test_config_round_trip():
    cfg = ExperimentConfig.from_dict(SMALL_BM)
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


def test_verify_pass(tmp_path):
    assert run(tmp_path, "verify", "--config", write(tmp_path, SMALL_BM)) == 0
    report = json.loads((tmp_path / "out" / "small_report.json").read_text())
    assert report["verdict"] == "pass"
    assert report["config"]["master_seed"] == 1
    rows = read_csv(tmp_path / "out" / "small_structure.csv")
    assert list(rows[0]) == ["p", "alpha", "lag", "estimate", "se"]


def test_verify_forced_fail(tmp_path):
    cfg = dict(SMALL_BM, tolerance=1e-6)
    assert run(tmp_path, "verify", "--config", write(tmp_path, cfg)) == 2


def test_verify_malformed(tmp_path, capsys):
    assert run(tmp_path, "verify", "--config", write(tmp_path, dict(SMALL_BM, levles=[2, 3]))) == 1
    assert "levles" in capsys.readouterr().err
    bad = tmp_path / "broken.json"
    bad.write_text("{not json")
    assert run(tmp_path, "verify", "--config", str(bad)) == 1


def test_verify_constant(tmp_path):
    cfg = {"name": "c", "kind": "CovarianceField", "covariance": "zero", "points_per_axis": 257,
           "levels": [2, 3, 4, 5], "n_replicates": 100, "holder_replicates": 20}
    assert run(tmp_path, "verify", "--config", write(tmp_path, cfg)) == 0
    assert json.loads((tmp_path / "out" / "c_report.json").read_text())["verdict"] == "constant"


def test_seed_override_and_threads(tmp_path):
    path = write(tmp_path, SMALL_BM)
    main(["verify", "--config", path, "--out", str(tmp_path / "a"), "--seed", "9"])
    main(["verify", "--config", path, "--out", str(tmp_path / "b"), "--seed", "9", "--threads", "3"])
    a = (tmp_path / "a" / "small_report.json").read_bytes()
    assert a == (tmp_path / "b" / "small_report.json").read_bytes()
    assert json.loads(a)["seeds"]["master_seed"] == 9


def test_sobolev_boundary_command(tmp_path):
    cfg = {"name": "sb", "mode": "sobolev-boundary", "kind": "BrownianMotion", "p": 4.0,
           "nus": [0.0, 0.3, 0.45, 0.55, 0.7], "ms": [257, 513, 1025], "n_replicates": 200}
    assert run(tmp_path, "sobolev-boundary", "--config", write(tmp_path, cfg)) == 0
    rows = read_csv(tmp_path / "out" / "sb_boundary.csv")
    assert list(rows[0]) == ["nu", "m", "estimate", "se", "divergent"]
    flags = {float(r["nu"]): r["divergent"] for r in rows}
    assert flags == {0.0: "false", 0.3: "false", 0.45: "false", 0.55: "true", 0.7: "true"}


def test_embedding_command(tmp_path):
    cfg = {"name": "emb", "mode": "embedding-ratio", "t": 0.0, "s": 1.0, "p": 2.0, "k_max": 5}
    assert run(tmp_path, "embedding-ratio", "--config", write(tmp_path, cfg)) == 0
    rows = read_csv(tmp_path / "out" / "emb_embedding.csv")
    assert list(rows[0]) == ["k", "holder", "sobolev", "ratio"]
    assert float(rows[0]["ratio"]) == pytest.approx(1.0)


def test_embedding_rejects_edge(tmp_path):
    cfg = {"name": "emb", "mode": "embedding-ratio", "t": 1.0, "s": 1.5, "p": 2.0}
    assert run(tmp_path, "embedding-ratio", "--config", write(tmp_path, cfg)) == 1


def test_sample_and_covering(tmp_path):
    cfg = dict(SMALL_BM, covering_dim=1, covering_m=257, covering_levels=[1, 2, 3, 4, 5])
    path = write(tmp_path, cfg)
    assert run(tmp_path, "sample", "--config", path) == 0
    assert (tmp_path / "out" / "small_sample.csv").read_text().startswith("# n,1")
    assert run(tmp_path, "covering", "--config", path) == 0
    rows = read_csv(tmp_path / "out" / "small_covering.csv")
    assert [int(r["count"]) for r in rows][:2] == [1, 2]


def test_bundled_name_resolution(tmp_path):
    assert run(tmp_path, "covering", "--config", "constant") == 0
    assert run(tmp_path, "covering", "--config", "no-such-config") == 1
