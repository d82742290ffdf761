import json

import numpy as np
import pytest
from PIL import Image

from tiltforge import phantom
from tiltforge.cli import main
from tiltforge.core import PerTiltStats, ProjectionStack, evenly_spaced_geometry
from tiltforge.mrcio import read_mrc, write_mrc
from tiltforge.noise import NoiseModel, per_tilt_moments


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    write_mrc(d / "vol.mrc", phantom.scattered_particles((32, 32, 32), 15, (2, 4), seed=3).data)
    write_mrc(d / "vol2.mrc", phantom.scattered_particles((32, 32, 32), 15, (2, 4), seed=4).data)
    assert main(["project", "--in", str(d / "vol.mrc"), "--out", str(d / "clean.mrc"), "--tilts", "11"]) == 0
    assert main(["project", "--in", str(d / "vol2.mrc"), "--out", str(d / "clean2.mrc"), "--tilts", "11"]) == 0
    g = evenly_spaced_geometry(-60, 60, 11)
    th = g.as_array()
    model = NoiseModel(g.angles_deg, PerTiltStats(tuple(50 - 0.002 * th**2), tuple(5 + 0.0005 * th**2)), (0.0002, 0, 1.0), 1.0)
    model.save(d / "model.json")
    return d


def test_project_outputs(work, capsys):
    data, h = read_mrc(work / "clean.mrc")
    assert data.shape == (11, 32, 32) and h.ispg == 0
    manifest = json.loads((work / "clean.mrc.manifest.json").read_text())
    assert manifest["command"] == "project"
    assert "threads" not in manifest["parameters"]
    assert set(manifest["inputs"]) == {str(work / "vol.mrc")}


def test_project_errors(work, tmp_path):
    assert main(["project", "--in", str(tmp_path / "missing.mrc"), "--out", str(tmp_path / "o.mrc")]) == 2
    assert main(["project", "--in", str(work / "vol.mrc"), "--out", str(tmp_path / "o.mrc"), "--tilts", "1"]) == 3
    assert main(["project", "--out", str(tmp_path / "o.mrc")]) == 3
    assert main(["project", "--in", str(work / "vol.mrc"), "--out", str(work / "vol.mrc")]) == 3
    bad = tmp_path / "bad.mrc"
    bad.write_bytes(b"junk" * 300)
    assert main(["project", "--in", str(bad), "--out", str(tmp_path / "o.mrc")]) == 2


def test_fit_noise_single_pair(work, tmp_path):
    clean, _ = read_mrc(work / "clean.mrc")
    rng = np.random.default_rng(0)
    th = evenly_spaced_geometry(-60, 60, 11).as_array()
    target = clean + (0.0005 * th**2 + 1.5)[:, None, None] * rng.standard_normal(clean.shape)
    write_mrc(tmp_path / "target.mrc", target)
    out = tmp_path / "m.json"
    assert main(["fit-noise", "--targets", str(tmp_path / "target.mrc"), "--noiseless", str(work / "clean.mrc"), "--out", str(out)]) == 0
    model = NoiseModel.load(out)
    assert model.geometry.T == 11
    np.testing.assert_allclose(model.target_stats.mean, per_tilt_moments(ProjectionStack(target, model.geometry)).mean, rtol=1e-5)
    assert abs(model.sigma_poly[0] - 0.0005) < 2e-4
    assert (tmp_path / "m.json.manifest.json").exists()


def test_fit_noise_mismatched_pairs(work, tmp_path):
    args = ["fit-noise", "--targets", str(work / "clean.mrc"), str(work / "clean2.mrc"),
            "--noiseless", str(work / "clean.mrc"), "--out", str(tmp_path / "m.json")]
    assert main(args) == 3


def test_simulate_baseline_moments(work, tmp_path):
    out = tmp_path / "base.mrc"
    assert main(["simulate", "--mode", "baseline", "--in", str(work / "clean.mrc"), "--model", str(work / "model.json"),
                 "--out", str(out), "--seed", "1"]) == 0
    data, _ = read_mrc(out)
    model = NoiseModel.load(work / "model.json")
    got = per_tilt_moments(ProjectionStack(data, model.geometry))
    np.testing.assert_allclose(got.mean, model.target_stats.mean, atol=1e-4)
    np.testing.assert_allclose(got.std, model.target_stats.std, atol=1e-4)


def test_simulate_needs_seed(work, tmp_path):
    assert main(["simulate", "--in", str(work / "clean.mrc"), "--model", str(work / "model.json"),
                 "--out", str(tmp_path / "x.mrc")]) == 3


def faket_args(work, out, threads):
    return ["simulate", "--mode", "faket", "--in", str(work / "clean.mrc"), "--model", str(work / "model.json"),
            "--style", str(work / "clean2.mrc"), "--random-net", "0", "--iterations", "1",
            "--out", str(out), "--seed", "7", "--threads", str(threads)]


def test_faket_telemetry_and_determinism(work, tmp_path):
    a, b, c = tmp_path / "a.mrc", tmp_path / "b.mrc", tmp_path / "c.mrc"
    assert main(faket_args(work, a, 1)) == 0
    assert main(faket_args(work, b, 1)) == 0
    assert main(faket_args(work, c, 8)) == 0
    assert a.read_bytes() == b.read_bytes() == c.read_bytes()
    lines = (tmp_path / "a.mrc.loss.tsv").read_text().splitlines()
    assert lines[0].split("\t")[0] == "tilt"
    assert len(lines) == 1 + 11 * 2
    ma = json.loads((tmp_path / "a.mrc.manifest.json").read_text())
    mc = json.loads((tmp_path / "c.mrc.manifest.json").read_text())
    assert list(ma["outputs"].values()) == list(mc["outputs"].values())


def test_faket_without_style(work, tmp_path):
    args = faket_args(work, tmp_path / "x.mrc", 1)
    i = args.index("--style")
    del args[i:i + 2]
    assert main(args) == 3


def test_faket_without_net(work, tmp_path):
    args = faket_args(work, tmp_path / "x.mrc", 1)
    i = args.index("--random-net")
    del args[i:i + 2]
    assert main(args) == 3


def test_faket_with_weight_file(work, tmp_path):
    net = tmp_path / "net.fnw"
    assert main(["init-net", "--seed", "0", "--out", str(net)]) == 0
    args = faket_args(work, tmp_path / "x.mrc", 1)
    i = args.index("--random-net")
    args[i:i + 2] = ["--net", str(net)]
    assert main(args) == 0
    assert main(faket_args(work, tmp_path / "y.mrc", 1)) == 0
    assert (tmp_path / "x.mrc").read_bytes() == (tmp_path / "y.mrc").read_bytes()


def test_reconstruct_default_depth(work, tmp_path):
    out = tmp_path / "rec.mrc"
    assert main(["reconstruct", "--in", str(work / "clean.mrc"), "--out", str(out)]) == 0
    assert read_mrc(out)[0].shape == (32, 32, 32)
    assert main(["reconstruct", "--in", str(work / "clean.mrc"), "--out", str(out), "--bin2x", "--depth", "8"]) == 0
    assert read_mrc(out)[0].shape == (8, 16, 16)


def test_reconstruct_recovers_phantom(tmp_path):
    vol = phantom.cylinder(48, 4, 48, 14)
    write_mrc(tmp_path / "cyl.mrc", vol.data)
    assert main(["project", "--in", str(tmp_path / "cyl.mrc"), "--out", str(tmp_path / "p.mrc"),
                 "--min", "-90", "--max", "89", "--tilts", "180", "--no-negate"]) == 0
    assert main(["reconstruct", "--in", str(tmp_path / "p.mrc"), "--out", str(tmp_path / "r.mrc"),
                 "--min", "-90", "--max", "89", "--no-gaussian", "--no-circle", "--crowther", "1"]) == 0
    rec, _ = read_mrc(tmp_path / "r.mrc")
    z, x = np.meshgrid(np.arange(48) - 23.5, np.arange(48) - 23.5, indexing="ij")
    inner = (z**2 + x**2) <= 10**2
    err = np.linalg.norm(rec[:, 2][inner] - vol.data[:, 2][inner]) / np.linalg.norm(vol.data[:, 2][inner])
    assert err < 0.1


def test_export_png(tmp_path, capsys):
    stack = np.zeros((2, 4, 256), np.float32)
    stack[1] = np.arange(256)[None, :]
    write_mrc(tmp_path / "s.mrc", stack)
    assert main(["export-png", "--in", str(tmp_path / "s.mrc"), "--index", "0", "--out", str(tmp_path / "a.png")]) == 0
    assert np.all(np.asarray(Image.open(tmp_path / "a.png")) == 128)
    assert main(["export-png", "--in", str(tmp_path / "s.mrc"), "--index", "1", "--out", str(tmp_path / "b.png")]) == 0
    assert "max=255" in capsys.readouterr().out
    np.testing.assert_array_equal(np.asarray(Image.open(tmp_path / "b.png"))[0], np.arange(256))
    assert main(["export-png", "--in", str(tmp_path / "s.mrc"), "--index", "2", "--out", str(tmp_path / "c.png")]) == 3


def test_dump_filter(tmp_path):
    out = tmp_path / "f.npy"
    assert main(["dump-filter", "--height", "64", "--width", "64", "--out", str(out)]) == 0
    f = np.load(out)
    assert f.shape == (64, 64) and f[32, 32] == 0
    assert main(["dump-filter", "--height", "64", "--width", "64", "--out", str(tmp_path / "f.png")]) == 0


def test_config_file_and_override(work, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"tilts": 5, "min": -40, "max": 40}))
    out = tmp_path / "p.mrc"
    assert main(["project", "--config", str(cfg), "--in", str(work / "vol.mrc"), "--out", str(out)]) == 0
    assert read_mrc(out)[0].shape[0] == 5
    assert main(["project", "--config", str(cfg), "--in", str(work / "vol.mrc"), "--out", str(out), "--tilts", "7"]) == 0
    assert read_mrc(out)[0].shape[0] == 7
    cfg.write_text(json.dumps({"bogus": 1}))
    assert main(["project", "--config", str(cfg), "--in", str(work / "vol.mrc"), "--out", str(out)]) == 3
    cfg.write_text("{not json")
    assert main(["project", "--config", str(cfg), "--in", str(work / "vol.mrc"), "--out", str(out)]) == 3


def test_threads_env(monkeypatch):
    from tiltforge.cli import parse_args

    monkeypatch.setenv("TILTFORGE_THREADS", "3")
    assert parse_args(["init-net", "--out", "x"]).threads == 3
    monkeypatch.setenv("TILTFORGE_THREADS", "nope")
    assert parse_args(["init-net", "--out", "x"]).threads == 1
