import json

import numpy as np
import pytest

from ddptycho import io
from ddptycho.cli import (EXIT_CONFIG, EXIT_DIVERGED, EXIT_FORMAT, EXIT_OK, EXIT_PLAN, load_dataset,
                          main)

SMALL = ["--size", "64", "--probe-side", "16", "--step", "4", "--margin", "4", "--flux", "1e4"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("ds")
    assert main(["simulate", *SMALL, "--seed", "1", "--out", str(out)]) == EXIT_OK
    return out


def test_simulate_defaults_geometry(tmp_path, monkeypatch):
    # default parser values describe the 256^2, probe 64, step 8 scan (25 x 25 frames)
    from ddptycho.cli import build_parser
    args = build_parser().parse_args(["simulate", "--out", str(tmp_path)])
    assert (args.size, args.probe_side, args.step) == (256, 64, 8)


def test_simulate_writes_dataset(dataset):
    data = load_dataset(dataset)
    assert data["geometry"].grid_shape == (13, 13)
    assert data["frames"].shape == (169, 16, 16)
    assert data["meta"]["schema_version"] == io.SCHEMA_VERSION
    assert data["meta"]["vacuum_margin"] == 4
    assert data["vacuum"].sum() == 64 * 64 - 56 * 56


def test_simulate_is_reproducible(tmp_path, dataset):
    assert main(["simulate", *SMALL, "--seed", "1", "--out", str(tmp_path)]) == EXIT_OK
    for name in ("frames.ptya", "probe.ptya", "sample.ptya", "meta.json"):
        assert (tmp_path / name).read_bytes() == (dataset / name).read_bytes()


def test_simulate_noisy(tmp_path):
    assert main(["simulate", *SMALL, "--noise-snr-db", "29.9", "--out", str(tmp_path)]) == EXIT_OK
    noise = io.read_meta(tmp_path / "meta.json")["noise"]
    assert abs(noise["achieved_snr_db"] - 29.9) <= 0.5


def test_simulate_external_images(tmp_path):
    from PIL import Image
    grad = np.tile(np.linspace(30, 255, 32).astype(np.uint8), (32, 1))
    Image.fromarray(grad).save(tmp_path / "mag.png")
    Image.fromarray(grad.T.copy()).save(tmp_path / "ph.png")
    out = tmp_path / "ds"
    rc = main(["simulate", *SMALL, "--magnitude", str(tmp_path / "mag.png"),
               "--phase", str(tmp_path / "ph.png"), "--out", str(out)])
    assert rc == EXIT_OK
    sample = io.read_array(out / "sample.ptya")
    assert sample.shape == (64, 64)
    assert np.abs(sample).max() <= 1 + 1e-12


def test_reconstruct_and_evaluate(tmp_path, dataset, capsys):
    runs = {}
    for D in (1, 2):
        out = tmp_path / f"run{D}"
        rc = main(["reconstruct", str(dataset), "-D", str(D), "--r", "50", "--out", str(out),
                   "--record-lagrangian", "--png"])
        assert rc == EXIT_OK
        runs[D] = out
        summary = io.read_meta(out / "summary.json")
        assert summary["final_rf"] <= 1e-5 and summary["converged"]
        assert summary["plan"]["D"] == D
        assert summary["snr_db"] > 30
        assert (out / "magnitude.png").exists() and (out / "phase.png").exists()
        cols = io.read_csv(out / "convergence.csv")
        assert len(cols["iter"]) == summary["iterations"]
        assert all(f"t_sub_{d}_ms" in cols for d in range(D))
        assert np.all(np.isfinite(cols["lagrangian"]))
        assert len(list(out.glob("sub_*.ptya"))) == D
    capsys.readouterr()
    assert main(["evaluate", str(runs[1]), str(runs[2]), "--speedup"]) == EXIT_OK
    text = capsys.readouterr().out
    assert "SNR=" in text and "eff" in text


def test_evaluate_against_itself_is_infinite(tmp_path, dataset, capsys):
    out = tmp_path / "run"
    assert main(["reconstruct", str(dataset), "--r", "50", "--max-iters", "3", "--out", str(out)]) == 0
    capsys.readouterr()
    assert main(["evaluate", str(out), "--truth", str(out / "image.ptya")]) == EXIT_OK
    assert "SNR=inf" in capsys.readouterr().out


def test_evaluate_without_truth(tmp_path, dataset, capsys):
    out = tmp_path / "run"
    assert main(["reconstruct", str(dataset), "--r", "50", "--max-iters", "2", "--out", str(out)]) == 0
    empty = tmp_path / "empty"
    empty.mkdir()
    capsys.readouterr()
    assert main(["evaluate", str(out), "--dataset", str(empty)]) == EXIT_OK
    assert "SNR omitted" in capsys.readouterr().out


def test_threads_identical(tmp_path, dataset):
    images = []
    for t in (1, 2):
        out = tmp_path / f"t{t}"
        assert main(["reconstruct", str(dataset), "-D", "2", "--r", "50", "--max-iters", "20",
                     "--threads", str(t), "--out", str(out)]) == EXIT_OK
        images.append(io.read_array(out / "image.ptya"))
    assert np.max(np.abs(images[0] - images[1])) <= 1e-12


def test_blind_command(tmp_path, dataset):
    out = tmp_path / "blind"
    rc = main(["blind", str(dataset), "--r", "50", "--mu", "5", "--max-iters", "30",
               "--out", str(out)])
    assert rc == EXIT_OK
    assert io.read_array(out / "probe.ptya").shape == (16, 16)
    summary = json.loads((out / "summary.json").read_text())
    assert summary["kind"] == "blind" and summary["iterations"] == 30


def test_noisy_preset(tmp_path, dataset):
    out = tmp_path / "noisy"
    assert main(["reconstruct", str(dataset), "--preset", "noisy-mild", "--max-iters", "2",
                 "--out", str(out)]) == EXIT_OK
    cfg = io.read_meta(out / "summary.json")["config"]
    assert cfg["r"] == 90.0 and cfg["tol_re"] == 1e-3


def test_exit_codes(tmp_path, dataset):
    out = str(tmp_path / "x")
    assert main(["reconstruct", str(dataset), "--eta", "-1", "--out", out]) == EXIT_CONFIG
    assert main(["reconstruct", str(dataset), "-D", "99", "--out", out]) == EXIT_PLAN
    assert main(["reconstruct", str(tmp_path / "nowhere"), "--out", out]) == EXIT_FORMAT

    broken = tmp_path / "broken"
    broken.mkdir()
    for name in ("meta.json", "probe.ptya", "sample.ptya"):
        (broken / name).write_bytes((dataset / name).read_bytes())
    (broken / "frames.ptya").write_bytes((dataset / "frames.ptya").read_bytes()[:100])
    assert main(["reconstruct", str(broken), "--out", out]) == EXIT_FORMAT

    bad = tmp_path / "bad"
    bad.mkdir()
    for name in ("meta.json", "probe.ptya", "sample.ptya"):
        (bad / name).write_bytes((dataset / name).read_bytes())
    frames = io.read_array(dataset / "frames.ptya")
    frames[0, 0, 0] = np.inf
    io.write_array(bad / "frames.ptya", frames)
    with np.errstate(all="ignore"):
        assert main(["reconstruct", str(bad), "--out", out]) == EXIT_DIVERGED

    assert len({EXIT_CONFIG, EXIT_FORMAT, EXIT_PLAN, EXIT_DIVERGED, EXIT_OK}) == 5
