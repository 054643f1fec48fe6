import json
import shutil
import struct
import subprocess
import sys

import numpy as np
import pytest

from ooolab import cli, models
from ooolab.checkpoint import save_checkpoint
from ooolab.synthdata import IMAGE_SIZE, read_ppm
from ooolab.weaksampler import read_triplet_file

SMALL_SWEEP = dict(
    kinds=["beta_vae"], hypers={"beta_vae": [1]}, seeds=[0, 1, 2], steps=5,
    m_train=60, m_test=30, mlp_epochs=1, wren=False,
    metric_overrides={"beta_batch": 4, "factor_batch": 4, "std_samples": 100,
                      "logistic_epochs": 10},
)


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture
def tiny_ckpt(tmp_path):
    cfg = models.ModelConfig(kind="beta_vae", beta=6.0, enc_hidden=(8,), dec_hidden=(8,))
    return save_checkpoint(models.ModelCheckpoint.initialise(cfg), tmp_path / "m.ckpt")


def test_gen_preview(tmp_path):
    assert run("gen-preview", "--seed", 3, "--out", tmp_path / "p", "--grids", 2) == 0
    files = sorted((tmp_path / "p").glob("*.ppm"))
    assert len(files) == 2
    assert read_ppm(files[0]).shape[2] == 3


def test_sample_triplets_layout(tmp_path):
    out = tmp_path / "t.bin"
    assert run("sample-triplets", "--n", 5, "--seed", 1, "--k", 2, "--out", out) == 0
    data = out.read_bytes()
    assert struct.unpack_from("<5I", data) == (7, 5, 32, 32, 3)
    assert len(data) == 20 + 5 * (3 * IMAGE_SIZE * 4 + 3 * 7 * 2 + 1)
    images, codes, labels = read_triplet_file(out)
    assert images.dtype == np.float32 and codes.dtype == np.uint16
    for c, y in zip(codes.astype(int), labels):
        pair = [i for i in range(3) if i != y]
        # the two non-odd panels differ in k factors; the odd one in d-k and d
        assert (c[pair[0]] != c[pair[1]]).sum() == 2
        assert sorted((c[y] != c[i]).sum() for i in pair) == [5, 7]
    assert set(labels.tolist()) <= {0, 1, 2}


def test_sample_triplets_reproducible(tmp_path):
    a, b = tmp_path / "a.bin", tmp_path / "b.bin"
    run("sample-triplets", "--n", 3, "--seed", 9, "--out", a)
    run("sample-triplets", "--n", 3, "--seed", 9, "--k", "rnd", "--out", b)
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.parametrize("k", ["0", "4", "x"])
def test_sample_triplets_bad_k(tmp_path, k):
    with pytest.raises(SystemExit) as exc:
        run("sample-triplets", "--n", 3, "--k", k, "--out", tmp_path / "t.bin")
    assert exc.value.code == 1


def test_eval_report_schema(tiny_ckpt, tmp_path):
    out = tmp_path / "report.json"
    code = run("eval", "--ckpt", tiny_ckpt, "--metrics", "all", "--seed", 2,
               "--m-train", 40, "--m-test", 20, "--out", out)
    assert code == 0
    report = json.loads(out.read_text())
    assert set(report) == {"model_id", "config", "scores"}
    assert set(report["scores"]) == {"beta_vae", "factor_vae", "dci", "triplet"}
    assert report["config"]["metrics"]["seed"] == 2


def test_eval_unknown_metric(tiny_ckpt, tmp_path):
    assert run("eval", "--ckpt", tiny_ckpt, "--metrics", "mig", "--out", tmp_path / "r.json") == 1


def test_eval_corrupt_checkpoint(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"OOOL1\x00")
    assert run("eval", "--ckpt", bad, "--out", tmp_path / "r.json") == 1


def test_rpm_train_curve(tmp_path):
    out = tmp_path / "curve.csv"
    assert run("rpm-train", "--embed", "gt", "--steps", 2, "--seed", 0, "--eval-every", 1,
               "--eval-batches", 1, "--out", out) == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "step,accuracy,loss"
    assert [ln.split(",")[0] for ln in lines[1:]] == ["0", "1", "2"]


def test_rpm_train_ckpt_source(tiny_ckpt, tmp_path):
    out = tmp_path / "curve.csv"
    assert run("rpm-train", "--embed", f"ckpt:{tiny_ckpt}", "--steps", 1, "--eval-every", 1,
               "--eval-batches", 1, "--out", out) == 0


def test_rpm_train_bad_source(tmp_path):
    assert run("rpm-train", "--embed", "pixels", "--steps", 1, "--out", tmp_path / "c.csv") == 1


def test_sweep_bad_config(tmp_path):
    cfg = tmp_path / "s.json"
    cfg.write_text(json.dumps({"kinds": ["nope"]}))
    assert run("sweep", "--config", cfg) == 1
    assert run("sweep", "--config", tmp_path / "missing.json") == 1


def _write_sweep(tmp_path, **over):
    cfg = tmp_path / "sweep.json"
    cfg.write_text(json.dumps({**SMALL_SWEEP, "out_dir": str(tmp_path / "out"), **over}))
    return cfg


def test_sweep_correlate_export(tmp_path, monkeypatch):
    monkeypatch.delenv("OOO_LAB_OUT", raising=False)
    cfg = _write_sweep(tmp_path)
    assert run("sweep", "--config", cfg) == 0
    runs = tmp_path / "out"
    assert run("correlate", "--runs", runs, "--out", tmp_path / "corr.csv") == 0
    header = (tmp_path / "corr.csv").read_text().splitlines()[0]
    assert header == "metric,beta_vae,factor_vae,dci,triplet"
    assert run("export", "--runs", runs, "--kind", "scores_csv") == 0
    rows = (runs / "scores.csv").read_text().splitlines()
    assert rows[0] == "run_id,kind,hyper,seed,beta_vae,factor_vae,dci,triplet"
    assert len(rows) == 4
    # second invocation resumes and still succeeds
    assert run("sweep", "--config", cfg) == 0


def test_sweep_partial_failure_exit_code(tmp_path, monkeypatch):
    from ooolab.errors import NumericFailure
    real = models.train

    def flaky(kind, hyper, seed, steps, **kw):
        if seed == 2:
            raise NumericFailure("diverged")
        return real(kind, hyper, seed, steps, **kw)

    monkeypatch.setattr(models, "train", flaky)
    monkeypatch.setenv("OOO_LAB_OUT", str(tmp_path / "env_out"))
    assert run("sweep", "--config", _write_sweep(tmp_path)) == 2
    assert (tmp_path / "env_out" / "index.json").exists()
    assert not (tmp_path / "out").exists()


def test_correlate_without_index(tmp_path):
    assert run("correlate", "--runs", tmp_path, "--out", tmp_path / "c.csv") == 1


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        run()
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        run("export", "--runs", ".", "--kind", "pdf")
    assert exc.value.code == 1


def test_console_script_entry_point():
    exe = shutil.which("ooo-lab")
    argv = [exe] if exe else [sys.executable, "-m", "ooolab.cli"]
    proc = subprocess.run(argv + ["--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "sample-triplets" in proc.stdout
