import csv
import json
import math

import numpy as np
import pytest

from rela.core_math import RngStream
from rela.data_factory import TargetStore, identity_prior, make_image_mixture, mlp_prior
from rela.evaluation import linear_probe
from rela.mlp import MLP
from rela.rela_train import (
    NonFiniteLossError,
    RelaState,
    TrainConfig,
    combined_loss,
    init_transport,
    make_encoder,
    rela_grad,
    rela_loss,
    replay_flip_step,
    scheduler_step,
    train_rela,
    write_run_log,
    write_summary,
)
from rela.ssl_zoo import SslConfig
from rela.gradcheck import numeric_grad, rel_error


# --- transport loss -----------------------------------------------------------------------


def test_rela_loss_reference_angles():
    W, b = np.eye(2), np.zeros(2)
    z = np.array([[1.0, 0.0]])
    assert rela_loss(z, W, b, [[3.0, 0.0]]) == pytest.approx(0.0, abs=1e-15)
    assert rela_loss(z, W, b, [[-2.0, 0.0]]) == pytest.approx(2.0, abs=1e-15)
    assert rela_loss(z, W, b, [[0.0, 5.0]]) == pytest.approx(1.0, abs=1e-15)


def test_rela_loss_scale_invariance(nprng):
    z, y = nprng.normal(size=(5, 4)), nprng.normal(size=(5, 3))
    W, b = nprng.normal(size=(3, 4)), nprng.normal(size=3)
    base = rela_loss(z, W, b, y)
    assert rela_loss(z, 2.5 * W, 2.5 * b, 0.1 * y) == pytest.approx(base, abs=1e-14)


def test_rela_loss_rejects_zero_norm():
    with pytest.raises(ValueError):
        rela_loss([[1.0, 0.0]], np.eye(2), np.zeros(2), [[0.0, 0.0]])
    with pytest.raises(ValueError):
        rela_loss([[0.0, 0.0]], np.eye(2), np.zeros(2), [[1.0, 0.0]])


def test_rela_gradient_fd(nprng):
    z, y = nprng.normal(size=(6, 4)), nprng.normal(size=(6, 3))
    W, b = nprng.normal(size=(3, 4)), nprng.normal(size=3)
    dz, dW, db = rela_grad(z, W, b, y)
    assert rel_error(dz, numeric_grad(lambda Z: rela_loss(Z, W, b, y), z.copy())) <= 1e-6
    assert rel_error(dW, numeric_grad(lambda M: rela_loss(z, M, b, y), W.copy())) <= 1e-6
    assert rel_error(db, numeric_grad(lambda v: rela_loss(z, W, v, y), b.copy())) <= 1e-6


@pytest.mark.parametrize("m,n", [(4, 4), (6, 3), (3, 6)])
def test_transport_init(m, n):
    W, b = init_transport(m, n, RngStream(0))
    assert W.shape == (m, n) and np.all(b == 0)
    if m == n:
        assert np.array_equal(W, np.eye(n))
    else:
        small = W.T @ W if m > n else W @ W.T
        assert np.allclose(small, np.eye(min(m, n)))


# --- scheduler ------------------------------------------------------------------------------


def _oracle_flip(ell_c=1.0):
    # independent transcription of the weighting rule with plain floats
    s, f = 2.0, 1.0
    t = 0
    while True:
        t += 1
        f = 0.999 * f + 0.001 * ell_c
        s = 0.99 * s + 0.01 * f
        if math.exp(-max(s - f, 0.0)) >= 0.995:
            return t


def test_constant_stream_flips_at_527():
    assert _oracle_flip() == 527
    assert math.ceil(math.log(-math.log(0.995)) / math.log(0.99)) == 527
    assert replay_flip_step([1.0] * 2000) == 527


def test_flip_is_one_way():
    s = RelaState()
    for _ in range(600):
        s = scheduler_step(s, 1.0)
    assert s.lam == 0
    frozen = (s.ell_s, s.ell_f)
    for _ in range(10**6):
        s = scheduler_step(s, None)
    assert s.lam == 0 and (s.ell_s, s.ell_f) == frozen and s.step == 600 + 10**6


def test_held_gap_never_triggers():
    s = RelaState()
    for _ in range(10**5):
        c = s.ell_f - 5.0 if s.ell_s - s.ell_f < 0.05 else s.ell_f + 5.0
        s = scheduler_step(s, c)
        assert s.ell_s - s.ell_f > 0.01
    assert s.lam == 1


def test_scheduler_rejects_nonfinite():
    with pytest.raises(ValueError):
        scheduler_step(RelaState(), math.nan)


def test_combined_loss_evaluates_one_term():
    calls = {"rela": 0, "ssl": 0}

    def term(name, value):
        def f():
            calls[name] += 1
            return value
        return f

    assert combined_loss(RelaState(lam=1), term("rela", 0.3), term("ssl", 0.7)) == 0.3
    assert calls == {"rela": 1, "ssl": 0}
    assert combined_loss(RelaState(lam=0), term("rela", 0.3), term("ssl", 0.7)) == 0.7
    assert calls == {"rela": 1, "ssl": 1}
    for lam in (0, 1):
        v = combined_loss(RelaState(lam=lam), lambda: 0.3, lambda: 0.7)
        assert v == lam * 0.3 + (1 - lam) * 0.7


# --- training driver --------------------------------------------------------------------------


@pytest.fixture(scope="module")
def task():
    data = make_image_mixture(64, RngStream(1), size=6)
    probe = make_image_mixture(60, RngStream(2), size=6)
    return data, probe


def _store(data, out=8):
    net = MLP.init([36, 16, out], RngStream(3))
    prior = mlp_prior(net)
    return TargetStore(prior(data.flat), prior.id, 3), prior


def test_zero_steps_logs_initial_loss(task):
    data, _ = task
    store, _ = _store(data)
    res = train_rela(make_encoder(36, 8, RngStream(4)), data.images, store, TrainConfig(epochs=0), RngStream(5))
    assert len(res.log) == 1 and res.log[0].loss > 0


def test_identity_everything_gives_zero_loss(task):
    data, _ = task
    store = TargetStore(identity_prior(36)(data.flat), "identity", 0)
    res = train_rela(MLP.identity(36), data.images, store, TrainConfig(epochs=0, batch_size=16), RngStream(6))
    assert res.log[0].loss == pytest.approx(0.0, abs=1e-6)


def test_rela_phase_reduces_loss(task):
    data, _ = task
    store, _ = _store(data)
    cfg = TrainConfig(epochs=40, batch_size=16, learning_rate=3e-3, augment=False)
    res = train_rela(make_encoder(36, 8, RngStream(7)), data.images, store, cfg, RngStream(8))
    first = np.mean([r.loss for r in res.log[1:11]])
    last = np.mean([r.loss for r in res.log[-10:]])
    assert last < first


def test_store_row_mismatch(task):
    data, _ = task
    store = TargetStore(np.ones((3, 8)), "x", 0)
    with pytest.raises(ValueError):
        train_rela(make_encoder(36, 8, RngStream(0)), data.images, store, TrainConfig(epochs=1), RngStream(0))


def test_nonfinite_loss_aborts(task):
    data, _ = task
    store, _ = _store(data)
    enc = make_encoder(36, 8, RngStream(9))
    enc.weights[0][0, 0] = math.nan
    with pytest.raises(NonFiniteLossError) as err:
        train_rela(enc, data.images, store, TrainConfig(epochs=1, batch_size=16), RngStream(9))
    assert err.value.step == 0


@pytest.fixture(scope="module")
def flipped_run(task):
    data, _ = task
    store, _ = _store(data)
    cfg = TrainConfig(epochs=2000, batch_size=16, learning_rate=3e-3, max_steps=3300, augment=False)
    return train_rela(make_encoder(36, 8, RngStream(10)), data.images, store, cfg, RngStream(11))


def test_run_flips_and_replays(flipped_run):
    res = flipped_run
    assert res.flip_step is not None
    stream = [r.loss for r in res.log[1:] if r.phase == "rela"]
    assert replay_flip_step(stream) == res.flip_step
    lams = [r.lam for r in res.log]
    assert set(lams) == {0, 1} and all(b <= a for a, b in zip(lams, lams[1:]))
    phases = [r.phase for r in res.log[1:]]
    assert phases == ["rela"] * res.flip_step + ["ssl"] * (len(phases) - res.flip_step)


def test_run_log_and_summary_files(flipped_run, tmp_path):
    write_run_log(tmp_path / "log.csv", flipped_run.log)
    rows = list(csv.reader(open(tmp_path / "log.csv")))
    assert rows[0] == ["step", "epoch", "phase", "loss", "lambda", "ell_s", "ell_f"]
    assert len(rows) == len(flipped_run.log) + 1
    write_summary(tmp_path / "s.json", flipped_run.summary())
    s = json.loads((tmp_path / "s.json").read_text())
    assert s["flip_step"] == flipped_run.flip_step and set(s["final_losses"]) == {"rela", "ssl"}


@pytest.mark.parametrize("method", ["byol", "simsiam", "infonce", "barlow"])
def test_ssl_only_runs(task, method):
    data, _ = task
    cfg = TrainConfig(epochs=2, batch_size=16, use_rela=False, ssl=SslConfig(method=method))
    res = train_rela(make_encoder(36, 8, RngStream(12)), data.images, None, cfg, RngStream(13))
    assert all(r.phase == "ssl" and r.lam == 0 and math.isfinite(r.loss) for r in res.log)
    assert res.flip_step is None


def test_training_replays_exactly(task):
    data, probe = task
    store, _ = _store(data)
    cfg = TrainConfig(epochs=3, batch_size=16, probe_every=4)
    a = train_rela(make_encoder(36, 8, RngStream(14)), data.images, store, cfg, RngStream(15),
                   (probe.images, probe.labels))
    b = train_rela(make_encoder(36, 8, RngStream(14)), data.images, store, cfg, RngStream(15),
                   (probe.images, probe.labels))
    assert [r.loss for r in a.log] == [r.loss for r in b.log]
    assert a.probes == b.probes and len(a.probes) == 4


def test_frozen_encoder_probe_is_deterministic(task):
    _, probe = task
    enc = make_encoder(36, 8, RngStream(16))
    feats = enc(probe.flat)
    assert linear_probe(feats, probe.labels, rng=RngStream(3)) == linear_probe(feats, probe.labels, rng=RngStream(3))


def test_target_refresh_regenerates(task):
    data, _ = task
    store, prior = _store(data)
    seen = prior.samples_seen
    cfg = TrainConfig(epochs=3, batch_size=16, target_refresh_k=1)
    train_rela(make_encoder(36, 8, RngStream(17)), data.images, store, cfg, RngStream(18), prior=prior)
    assert prior.samples_seen == seen + 2 * 64


def test_input_samples_untouched(task):
    data, _ = task
    store, _ = _store(data)
    before = data.images.copy()
    train_rela(make_encoder(36, 8, RngStream(19)), data.images, store, TrainConfig(epochs=1, batch_size=16),
               RngStream(20))
    assert np.array_equal(before, data.images)
