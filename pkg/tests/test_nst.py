import numpy as np
import pytest

from tiltforge import featnet, nst
from tiltforge.core import GeometryMismatch, ProjectionStack, ShapeMismatch, ValidationError, evenly_spaced_geometry
from tiltforge.featnet import LayerSpec
from tiltforge.noise import per_tilt_moments


def tiny_net(seed=0):
    spec = [
        LayerSpec("conv3x3", "c1", 1, 4),
        LayerSpec("relu", "r1"),
        LayerSpec("pool2", "p1"),
        LayerSpec("conv3x3", "c2", 4, 8),
        LayerSpec("relu", "r2"),
    ]
    return featnet.init_random(spec, seed=seed)


def images(seed, n=64):
    rng = np.random.default_rng(seed)
    from scipy.ndimage import gaussian_filter

    content = gaussian_filter(rng.standard_normal((n, n)), 2.0)
    init = content + 0.5 * rng.standard_normal((n, n))
    style = gaussian_filter(rng.standard_normal((n, n)), 1.0)
    return init, content, style


def test_config_validation():
    with pytest.raises(ValidationError):
        nst.NstConfig(iterations=0)
    with pytest.raises(ValidationError):
        nst.NstConfig(learning_rate=0)
    with pytest.raises(ValidationError):
        nst.NstConfig(beta=-1)


def test_standardize():
    z, mu, sd = nst.standardize(np.array([1.0, 3.0]))
    np.testing.assert_allclose(z, [-1, 1])
    assert (mu, sd) == (2.0, 1.0)
    z, mu, sd = nst.standardize(np.full(4, 5.0))
    assert not z.any() and sd == 1.0


def test_descent_at_small_learning_rate():
    net = tiny_net()
    init, content, style = images(0)
    cfg = nst.NstConfig(learning_rate=1e-3, iterations=10)
    _, hist = nst.transfer_tilt(net, init, content, style, cfg, return_history=True)
    totals = [r.total for r in hist]
    assert [r.iteration for r in hist] == list(range(11))
    assert all(b <= a for a, b in zip(totals, totals[1:]))
    assert totals[-1] < totals[0]


def test_fixed_point():
    net = tiny_net()
    _, content, _ = images(1)
    out = nst.transfer_tilt(net, content, content, content, nst.NstConfig(iterations=3))
    assert np.linalg.norm(out - content) / np.linalg.norm(content) < 1e-4


def test_beta_zero_with_content_init_is_unchanged():
    net = tiny_net()
    init, content, style = images(2)
    out = nst.transfer_tilt(net, content, content, style, nst.NstConfig(beta=0.0, iterations=2))
    np.testing.assert_allclose(out, content, rtol=0, atol=1e-5 * np.abs(content).max())


def test_output_follows_affine_map_of_init():
    net = tiny_net()
    init, content, style = images(3)
    cfg = nst.NstConfig(iterations=2)
    base = nst.transfer_tilt(net, init, content, style, cfg)
    scaled = nst.transfer_tilt(net, 10 * init + 3, 2 * content, style - 1, cfg)
    assert scaled.dtype == np.float32
    np.testing.assert_allclose(scaled, 10 * base.astype(np.float64) + 3, rtol=0, atol=1e-4 * np.abs(scaled).max())


def test_shape_mismatch():
    net = tiny_net()
    with pytest.raises(ShapeMismatch):
        nst.transfer_tilt(net, np.zeros((16, 16)), np.zeros((16, 16)), np.zeros((16, 17)))


def _stack(seed, T=3, n=32):
    g = evenly_spaced_geometry(-30, 30, T)
    return ProjectionStack(np.stack([images(seed + i, n)[0] for i in range(T)]), g)


def test_single_tilt_stack_reduces_to_transfer_tilt():
    net = tiny_net()
    g = evenly_spaced_geometry(-1, 1, 2)
    init, content, style = images(4, 32)
    S = lambda a: ProjectionStack(np.stack([a, a]), g)
    out = nst.transfer_stack(net, S(init), S(content), S(style), nst.NstConfig(iterations=2))
    ref = nst.transfer_tilt(net, init.astype(np.float32), content.astype(np.float32), style.astype(np.float32), nst.NstConfig(iterations=2))
    assert out.data[0].tobytes() == ref.tobytes()


def test_stack_checks():
    net = tiny_net()
    a = _stack(0)
    with pytest.raises(ShapeMismatch):
        nst.transfer_stack(net, a, a, _stack(0, n=16))
    other = ProjectionStack(a.data, evenly_spaced_geometry(-20, 20, 3))
    with pytest.raises(GeometryMismatch):
        nst.transfer_stack(net, a, a, other)
    with pytest.raises(ShapeMismatch):
        nst.transfer_stack(net, a, a, a, style_targets=[{}])


def test_stack_threads_identical():
    net = tiny_net()
    a, b, c = _stack(0), _stack(10), _stack(20)
    cfg = nst.NstConfig(iterations=2)
    one = nst.transfer_stack(net, a, b, c, cfg, threads=1)
    many = nst.transfer_stack(net, a, b, c, cfg, threads=4)
    assert one.data.tobytes() == many.data.tobytes()


def test_content_seed_is_distinct_and_stable():
    assert nst.content_seed(0) == nst.content_seed(0)
    assert nst.content_seed(0) != nst.content_seed(1)
    assert nst.content_seed(3) != 3


def test_telemetry_format():
    recs = [nst.LossRecord(0, 0, 1.0, 2.0, 2001.0), nst.LossRecord(0, 1, 0.5, 1.0, 1000.5)]
    text = nst.format_telemetry(recs)
    lines = text.splitlines()
    assert lines[0] == "tilt\titeration\tcontent_loss\tstyle_loss\ttotal_loss"
    assert lines[2].split("\t") == ["0", "1", "0.5", "1", "1000.5"]


@pytest.fixture(scope="module")
def faket_run(noiseless61, style61, model61):
    net = featnet.init_random(seed=0)
    cfg = nst.NstConfig(iterations=1)
    out, hist = nst.build_faket(noiseless61, style61, model61, net, cfg, seed=11, return_history=True)
    return net, cfg, out, hist


def test_faket_keeps_content(faket_run, noiseless61):
    _, _, out, _ = faket_run
    assert np.all(np.isfinite(out.data))
    for a, b in zip(out.data, noiseless61.data):
        assert np.corrcoef(a.ravel(), b.ravel())[0, 1] > 0.5


def test_faket_moments_near_style(faket_run, style61):
    _, _, out, _ = faket_run
    got, want = per_tilt_moments(out), per_tilt_moments(style61)
    np.testing.assert_allclose(got.mean, want.mean, rtol=0.1)
    np.testing.assert_allclose(got.std, want.std, rtol=0.1)


def test_faket_loss_drops(faket_run):
    _, _, _, hist = faket_run
    by_tilt = {}
    for r in hist:
        by_tilt.setdefault(r.tilt, []).append(r.total)
    assert len(by_tilt) == 61
    assert sum(v[1] < v[0] for v in by_tilt.values()) >= 0.95 * 61


def test_cached_style_targets_identical(faket_run, noiseless61, style61, model61):
    net, cfg, out, _ = faket_run
    targets = nst.precompute_style_targets(net, style61)
    again = nst.build_faket(noiseless61, style61, model61, net, cfg, seed=11, style_targets=targets)
    assert again.data.tobytes() == out.data.tobytes()
