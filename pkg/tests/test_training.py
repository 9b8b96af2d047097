"""Optimizer, scheduler, loss, checkpoint, and train-loop contracts."""

import math
import os

import numpy as np
import pytest
from gradcheck import check_grads

from pdpcrn import dataset as D
from pdpcrn import stft
from pdpcrn import tensor as tz
from pdpcrn import training as T
from pdpcrn.models import build_model, tiny_config
from pdpcrn.tensor import Tensor


@pytest.fixture(scope="module")
def tiny_rows(tmp_path_factory):
    out = tmp_path_factory.mktemp("data")
    manifest = D.synthesize_dataset(str(out), 2, seed=7, num_mics=2, duration=0.8)
    return D.load_manifest(manifest)


def _tiny_train_cfg(**kw):
    base = dict(lr=1e-3, epochs=3, batch_size=2, segment_seconds=0.8, seed=1)
    base.update(kw)
    return T.TrainConfig(**base)


# ---------------------------------------------------------------------------
# Adam


def test_adam_matches_a_hand_rolled_scalar_trace():
    w = Tensor(np.array([1.0]), requires_grad=True)
    opt = T.Adam([("w", w)], lr=0.1)
    got = []
    for _ in range(10):
        w.grad = 2.0 * w.data  # d/dw of w^2
        opt.step()
        got.append(float(w.data[0]))

    wv, m, v = 1.0, 0.0, 0.0
    want = []
    for t in range(1, 11):
        g = 2.0 * wv
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        wv -= (0.1 / (1.0 - 0.9**t)) * m / (math.sqrt(v / (1.0 - 0.999**t)) + 1e-8)
        want.append(wv)
    assert max(abs(a - b) for a, b in zip(got, want)) < 1e-12


def test_adam_constant_gradient_steps_at_the_learning_rate():
    # with constant g the bias corrections cancel and every step is
    # lr * g / (|g| + eps), i.e. lr in magnitude, against the gradient
    w = Tensor(np.array([0.0, 0.0]), requires_grad=True)
    opt = T.Adam([("w", w)], lr=0.05)
    g = np.array([3.0, -0.2])
    for _ in range(5):
        before = w.data.copy()
        w.grad = g.copy()
        opt.step()
        step = w.data - before
        assert np.all(np.abs(np.abs(step) - 0.05) < 1e-8)
        assert np.all(np.sign(step) == -np.sign(g))


def test_adam_zero_gradient_decays_moments_only():
    w = Tensor(np.array([1.5, -2.0]), requires_grad=True)
    opt = T.Adam([("w", w)], lr=0.1)
    before = w.data.copy()
    w.grad = np.zeros(2)
    opt.step()
    assert np.array_equal(w.data, before)  # fresh moments stay zero

    w.grad = np.array([1.0, -4.0])
    opt.step()
    m1, v1 = opt.m["w"].copy(), opt.v["w"].copy()
    w.grad = np.zeros(2)
    opt.step()
    assert np.array_equal(opt.m["w"], m1 * 0.9)
    assert np.array_equal(opt.v["w"], v1 * 0.999)


def test_adam_nan_gradient_names_the_parameter():
    w = Tensor(np.zeros(3), requires_grad=True)
    opt = T.Adam([("block0.left_rnn.inter.b", w)], lr=0.1)
    w.grad = np.array([0.0, np.nan, 0.0])
    with pytest.raises(T.TrainError, match="block0.left_rnn.inter.b"):
        opt.step()


# ---------------------------------------------------------------------------
# plateau schedule


def test_plateau_rule_on_pinned_traces():
    assert T.plateau_events([3.0, 2.9, 2.8]) == []
    assert T.plateau_events([3.0, 3.0, 3.0]) == [3]
    assert T.plateau_events([3.0, 3.1, 2.9, 2.95, 2.97]) == [5]


def test_learning_rate_never_increases():
    class _Opt:
        lr = 1.0

    opt = _Opt()
    sched = T.PlateauScheduler(opt, patience=2, factor=0.5)
    rng = np.random.default_rng(0)
    last = opt.lr
    halvings = 0
    for v in rng.uniform(1.0, 2.0, size=40):
        if sched.step(float(v)):
            halvings += 1
            assert opt.lr == last * 0.5
        assert opt.lr <= last
        last = opt.lr
    assert halvings >= 2  # a non-improving run must keep halving


# ---------------------------------------------------------------------------
# loss


def _planes(wave):
    spec = stft.stft(wave)
    return np.concatenate([spec.real, spec.imag], axis=1)


def test_loss_of_identical_signals_sits_at_the_clamp():
    rng = np.random.default_rng(3)
    planes = _planes(rng.standard_normal((1, 2, 400 + 3 * 200)) * 0.3)
    with tz.no_tape():
        assert float(T.loss(Tensor(planes), planes, "si_sdr").data) == -60.0
        assert float(T.loss(Tensor(planes), planes, "mse").data) == 0.0


def test_loss_input_validation():
    good = np.zeros((1, 2, 3, 201))
    good[0, 0, 0, 0] = 1.0
    with tz.no_tape():
        with pytest.raises(T.TrainError, match="shape"):
            T.loss(Tensor(good), np.zeros((1, 2, 4, 201)))
        with pytest.raises(T.TrainError, match="zero power"):
            T.loss(Tensor(good), np.zeros((1, 2, 3, 201)))
        with pytest.raises(T.TrainError, match="kind"):
            T.loss(Tensor(good), good, "huber")
        with pytest.raises(T.TrainError, match="planes"):
            T.loss(Tensor(np.zeros((1, 3, 3, 201))), np.zeros((1, 3, 3, 201)))


@pytest.mark.parametrize("kind", ["si_sdr", "mse"])
def test_loss_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(4)
    pred = rng.standard_normal((1, 2, 3, 201)) * 0.2
    target = rng.standard_normal((1, 2, 3, 201)) * 0.2
    check_grads(lambda p: T.loss(p, target, kind).reshape(1), [pred], tol=1e-3)


# ---------------------------------------------------------------------------
# checkpoints


def _float32_model(cfg, seed=0):
    old = tz.get_default_dtype()
    tz.set_default_dtype(np.float32)
    try:
        return build_model(cfg, seed=seed)
    finally:
        tz.set_default_dtype(old)


def test_checkpoint_round_trip_is_bitwise(tmp_path):
    model = _float32_model(tiny_config(), seed=2)
    x = np.random.default_rng(0).standard_normal((1, 4, 5, 21)).astype(np.float32)
    with tz.no_tape():
        model.train()
        model(Tensor(x, dtype=np.float32))  # moves the BN running stats
        model.eval()
        want = model(Tensor(x, dtype=np.float32)).data.copy()

    path = str(tmp_path / "model.ckpt")
    opt = T.Adam(model.named_parameters(), lr=2e-3)
    T.save_checkpoint(path, model, {"epoch": 4}, opt)
    loaded, extra, opt_state = T.load_checkpoint(path)
    assert extra == {"epoch": 4}
    assert opt_state["t"] == 0 and opt_state["lr"] == 2e-3
    for (name, p), (name2, q) in zip(model.named_parameters(), loaded.named_parameters()):
        assert name == name2 and np.array_equal(p.data, q.data)
    got_buf = dict(loaded.named_buffers())
    for name, b in model.named_buffers():
        assert np.array_equal(b, got_buf[name])
    loaded.eval()
    with tz.no_tape():
        got = loaded(Tensor(x, dtype=np.float32)).data
    assert np.array_equal(got, want)


def test_checkpoint_rejects_bad_magic_and_wrong_hash(tmp_path):
    model = _float32_model(tiny_config())
    path = str(tmp_path / "model.ckpt")
    T.save_checkpoint(path, model)
    raw = bytearray(open(path, "rb").read())

    bad = tmp_path / "bad_magic.ckpt"
    bad.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(T.TrainError, match="magic"):
        T.load_checkpoint(str(bad))

    flipped = bytearray(raw)
    flipped[9] ^= 0xFF  # inside the stored structural hash
    bad2 = tmp_path / "bad_hash.ckpt"
    bad2.write_bytes(bytes(flipped))
    with pytest.raises(T.TrainError, match="hash"):
        T.load_checkpoint(str(bad2))


# ---------------------------------------------------------------------------
# the loop


def test_train_logs_losses_and_checkpoints(tmp_path, tiny_rows):
    cfg = tiny_config()
    res = T.train(cfg, _tiny_train_cfg(epochs=12), tiny_rows, tiny_rows, str(tmp_path))
    hist = res["history"]
    assert [h["epoch"] for h in hist] == list(range(1, 13))
    # a dozen steps on two fixed utterances must overfit noticeably
    assert hist[-1]["train_loss"] < hist[0]["train_loss"] - 5.0

    lines = open(res["csv_path"]).read().strip().split("\n")
    assert lines[0] == "epoch,train_loss,val_loss,lr"
    assert len(lines) == 13
    first = lines[1].split(",")
    assert int(first[0]) == 1 and float(first[1]) == hist[0]["train_loss"]

    _, extra_best, _ = T.load_checkpoint(res["best_path"])
    assert extra_best["val_loss"] == min(h["val_loss"] for h in hist)
    _, extra_last, _ = T.load_checkpoint(res["last_path"])
    assert extra_last["epoch"] == 12


def test_resume_reproduces_the_uninterrupted_run_bitwise(tmp_path, tiny_rows):
    cfg = tiny_config()
    full = T.train(cfg, _tiny_train_cfg(epochs=3), tiny_rows, tiny_rows,
                   str(tmp_path / "full"))
    T.train(cfg, _tiny_train_cfg(epochs=2), tiny_rows, tiny_rows, str(tmp_path / "split"))
    resumed = T.train(cfg, _tiny_train_cfg(epochs=3), tiny_rows, tiny_rows,
                      str(tmp_path / "split"), resume=True)
    assert [h["epoch"] for h in resumed["history"]] == [3]
    assert resumed["history"][-1] == full["history"][-1]

    ma, _, oa = T.load_checkpoint(full["last_path"])
    mb, _, ob = T.load_checkpoint(resumed["last_path"])
    for (_, p), (_, q) in zip(ma.named_parameters(), mb.named_parameters()):
        assert np.array_equal(p.data, q.data)
    bufs = dict(mb.named_buffers())
    for name, b in ma.named_buffers():
        assert np.array_equal(b, bufs[name])
    for name in oa["m"]:
        assert np.array_equal(oa["m"][name], ob["m"][name])
        assert np.array_equal(oa["v"][name], ob["v"][name])


def test_resume_rejects_a_different_train_config(tmp_path, tiny_rows):
    cfg = tiny_config()
    T.train(cfg, _tiny_train_cfg(epochs=1), tiny_rows, tiny_rows, str(tmp_path))
    with pytest.raises(T.TrainError, match="config"):
        T.train(cfg, _tiny_train_cfg(epochs=2, seed=9), tiny_rows, tiny_rows,
                str(tmp_path), resume=True)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")  # the blow-up is the point
def test_exploding_update_aborts_with_the_batch_id(tmp_path, tiny_rows):
    cfg = tiny_config()
    bad = _tiny_train_cfg(lr=1e30, epochs=1, batch_size=1)
    with pytest.raises(T.TrainError, match=r"epoch 1 batch 1"):
        T.train(cfg, bad, tiny_rows, tiny_rows, str(tmp_path))


def test_train_config_validation():
    with pytest.raises(T.TrainError, match="lr"):
        T.TrainConfig(lr=0.0)
    with pytest.raises(T.TrainError, match="patience"):
        T.TrainConfig(plateau_patience=0)
    with pytest.raises(T.TrainError, match="loss_kind"):
        T.TrainConfig(loss_kind="psychoacoustic")
    cfg = T.TrainConfig()
    assert T.TrainConfig.from_dict(cfg.to_dict()) == cfg


def test_ablation_driver_reports_both_variants(tmp_path, tiny_rows):
    res = T.ablate(tiny_config(), _tiny_train_cfg(epochs=2), tiny_rows, tiny_rows,
                   str(tmp_path))
    assert set(res["runs"]) == {"PDPCRN", "PDPCRN-no-BI"}
    assert res["runs"]["PDPCRN"]["params"] > res["runs"]["PDPCRN-no-BI"]["params"]
    report = open(res["report_path"]).read()
    assert "| PDPCRN |" in report and "| PDPCRN-no-BI |" in report
    for run in res["runs"].values():
        assert os.path.exists(run["result"]["best_path"])
