from __future__ import annotations

import json
from pathlib import Path

import pytest

from pcacftp.cli import main
from pcacftp.core import save_kernel
from pcacftp.models import constant_rows

GOLDEN = Path(__file__).parent / "golden"


def run(out: Path, *args) -> int:
    return main([*args, "--out", str(out)])


def read(p: Path) -> bytes:
    return p.read_bytes()


def test_certify_fully_random_model(tmp_path):
    assert run(tmp_path, "certify", "--model", "noisy-majority", "--eps", "0.5", "--L", "2",
               "--trials", "10000") == 0
    cert = json.loads((tmp_path / "certificate.json").read_text())
    assert cert["rho_hat"] == 0 and cert["verdict"] == "certified"
    meta = json.loads((tmp_path / "meta.json").read_text())
    assert meta["kernel_hash"] == cert["kernel_hash"]
    assert meta["params"]["trials"] == 10000 and "threads" not in meta["params"]


def test_certify_inconclusive_exit_code(tmp_path):
    assert run(tmp_path, "certify", "--eps", "0.3", "--L", "2", "--trials", "500") == 2


def test_golden_certificate(tmp_path):
    assert run(tmp_path, "certify", "--eps", "0.3", "--L", "2", "--trials", "2000", "--seed", "7") == 2
    assert read(tmp_path / "certificate.json") == read(GOLDEN / "certificate_eps0.3_L2_seed7.json")


def test_golden_samples(tmp_path):
    assert run(tmp_path, "sample", "--eps", "0.3", "--L", "4", "--window", "-2:2", "--count", "20",
               "--seed", "7") == 0
    assert read(tmp_path / "samples.jsonl") == read(GOLDEN / "samples_eps0.3_L4_seed7.jsonl")


def test_sample_thousand_windows(tmp_path):
    assert run(tmp_path, "sample", "--model", "noisy-majority", "--eps", "0.3", "--L", "4",
               "--window", "-2:2", "--count", "1000") == 0
    lines = (tmp_path / "samples.jsonl").read_text().splitlines()
    assert len(lines) == 1000
    rec = [json.loads(x) for x in lines]
    assert all(len(r["window"]) == 5 for r in rec)
    assert json.loads((tmp_path / "meta.json").read_text())["truncations"] == 0


def test_sample_truncation_is_an_error(tmp_path, capsys):
    assert run(tmp_path, "sample", "--eps", "0.3", "--L", "2", "--window", "0:0", "--count", "300",
               "--max-depth", "2") == 1
    assert "did not coalesce" in capsys.readouterr().err


def test_geometry_selfsim(tmp_path):
    assert run(tmp_path, "geometry", "selfsim", "--alpha", "1", "--ell0", "4", "--n", "3") == 0
    data = json.loads((tmp_path / "geometry_selfsim.json").read_text())
    assert data["ell"] == [4, 10, 25, 62] and data["violations"] == []
    assert read(tmp_path / "geometry_selfsim.json") == read(GOLDEN / "geometry_selfsim.json")
    svg = (tmp_path / "geometry_selfsim.svg").read_text()
    assert svg.startswith("<?xml") and "<svg" in svg


@pytest.mark.parametrize("kind", ["w", "slice", "tiling"])
def test_geometry_other_plans(tmp_path, kind):
    extra = ["--L", "50"] if kind == "slice" else []
    assert run(tmp_path, "geometry", kind, *extra) == 0
    assert json.loads((tmp_path / f"geometry_{kind}.json").read_text())["violations"] == []
    assert (tmp_path / f"geometry_{kind}.svg").exists()


def test_geometry_error_exit(tmp_path, capsys):
    assert run(tmp_path, "geometry", "w", "--L", "3", "--L1", "1", "--K1", "3") == 1
    assert "even" in capsys.readouterr().err


def test_tail_and_tv_artifacts(tmp_path):
    assert run(tmp_path / "t", "tail", "--L", "4", "--runs", "500", "--trials", "2000") == 0
    header = (tmp_path / "t" / "tail.csv").read_text().splitlines()[0]
    assert header == "n,survival,bound_rho_hat,bound_rho_upper"
    assert json.loads((tmp_path / "t" / "tail.json").read_text())["bound_violations"] == []
    assert run(tmp_path / "v", "tv-decay", "--window", "-1:1", "--horizon", "10", "--runs", "5000") == 0
    rows = (tmp_path / "v" / "tv_decay.csv").read_text().splitlines()
    assert rows[0] == "t,tv,bias_bound" and len(rows) == 11
    assert (tmp_path / "v" / "tv_decay.svg").exists()


def test_perturb(tmp_path):
    code = run(tmp_path, "perturb", "--eps", "0.3", "--target-eps", "0.31", "--L", "2",
               "--trials", "2000")
    assert code == 2  # L = 2 is far from certified for either kernel
    rep = json.loads((tmp_path / "perturbation.json").read_text())
    assert rep["m"] == 12 and rep["epsilon"] == pytest.approx(1 - 0.69 / 0.7)


def test_kernel_file(tmp_path):
    path = tmp_path / "k.json"
    save_kernel(constant_rows([0.4, 0.6]), path)
    assert run(tmp_path / "o", "certify", "--kernel", str(path), "--trials", "1000") == 0
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"alphabet": ["0", "1"], "rows": {"000": [0.5, 0.5]}}))
    assert run(tmp_path / "o2", "certify", "--kernel", str(bad)) == 1


def test_config_precedence(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"trials": 1234, "L": 3, "seed": 5}))
    assert run(tmp_path / "a", "certify", "--config", str(cfg), "--L", "2") == 2
    cert = json.loads((tmp_path / "a" / "certificate.json").read_text())
    assert (cert["trials"], cert["L"], cert["seed"]) == (1234, 2, 5)
    cfg.write_text(json.dumps({"bogus": 1}))
    assert run(tmp_path / "b", "certify", "--config", str(cfg)) == 1


def test_regenerate_from_meta(tmp_path):
    assert run(tmp_path / "a", "sample", "--eps", "0.35", "--L", "4", "--count", "300", "--seed", "3",
               "--window", "-3:1") == 0
    meta = json.loads((tmp_path / "a" / "meta.json").read_text())
    assert run(tmp_path / "b", "sample", "--config", str(tmp_path / "a" / "meta.json")) == 0
    assert main([*meta["argv"], "--out", str(tmp_path / "c")]) == 0
    for d in ("b", "c"):
        for name in ("samples.jsonl", "meta.json"):
            assert read(tmp_path / d / name) == read(tmp_path / "a" / name)


def test_bad_arguments(tmp_path):
    assert run(tmp_path, "sample", "--window", "3:1") == 2  # argparse usage error
    assert main(["certify", "--threads", "0", "--out", str(tmp_path)]) == 1
