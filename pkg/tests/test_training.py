import numpy as np
import pytest

from causalgcn import autodiff as ad
from causalgcn.autodiff import finite_difference_check
from causalgcn.data import generate_synthetic
from causalgcn.heads import domain_logits
from causalgcn.encoder import encode_batch
from causalgcn.rng import stream
from causalgcn.training import (
    Adamax,
    AceBatch,
    ConfigError,
    TaskDataError,
    TrainConfig,
    ace_objective,
    ace_train_epoch,
    adamax_step,
    build_model,
    gce_train_epoch,
    lr_decay_check,
    task_loss,
    train_gce,
)
from causalgcn.encoder import Vocab

from helpers import FOUR, TARGET, perturb, tiny_model, tiny_train_config


# -- optimizer


def test_adamax_hand_example():
    params, state = {"w": np.array([1.0])}, {}
    adamax_step(params, {"w": np.array([1.0])}, state, 1, 2e-3)
    m, u = state["w"]
    assert m[0] == pytest.approx(0.1) and u[0] == 1.0
    assert params["w"][0] == pytest.approx(0.998, abs=1e-9)


def test_adamax_zero_gradient_is_noop():
    params = {"w": np.array([0.3, -1.0])}
    adamax_step(params, {"w": np.zeros(2)}, {}, 1, 2e-3)
    assert params["w"].tolist() == [0.3, -1.0]


def test_adamax_elementwise_permutation():
    g = np.array([0.5, -2.0, 0.1])
    a = {"x": np.array([1.0, 2.0, 3.0]), "y": np.array([-1.0, 0.0, 4.0])}
    b = {"x": a["y"].copy(), "y": a["x"].copy()}
    adamax_step(a, {"x": g, "y": -g}, {}, 1, 0.01)
    adamax_step(b, {"x": -g, "y": g}, {}, 1, 0.01)
    assert a["x"].tolist() == b["y"].tolist() and a["y"].tolist() == b["x"].tolist()


def _scalar_adamax_on_square(theta, steps, lr=2e-3, b1=0.9, b2=0.999, eps=1e-8):
    m = u = 0.0
    trace = []
    for t in range(1, steps + 1):
        g = 2 * theta
        m = b1 * m + (1 - b1) * g
        u = max(b2 * u, abs(g))
        theta -= lr / (1 - b1 ** t) * m / (u + eps)
        trace.append(theta)
    return trace


def test_adamax_on_quadratic_matches_scalar_rule():
    params, state = {"w": np.array([5.0])}, {}
    ours = []
    for t in range(1, 3001):
        adamax_step(params, {"w": 2 * params["w"]}, state, t, 2e-3)
        ours.append(params["w"][0])
    ref = _scalar_adamax_on_square(5.0, 3000)
    np.testing.assert_allclose(ours, ref, rtol=0, atol=1e-12)
    # per-step movement is bounded by roughly lr, so 5 -> 0.1 needs well over 2000 steps
    first = next(t for t, v in enumerate(ours, start=1) if abs(v) < 0.1)
    assert 2000 < first <= 3000
    assert all(b < a for a, b in zip(ours[:first], ours[1:first]))


def test_adamax_skips_nonfinite(caplog):
    params = {"w": np.array([1.0]), "v": np.array([2.0])}
    ok = adamax_step(params, {"w": np.array([1.0]), "v": np.array([np.nan])}, {}, 1, 2e-3)
    assert not ok and params["w"][0] == 1.0 and params["v"][0] == 2.0
    assert "non-finite" in caplog.text


def test_adamax_rejects_step_zero():
    with pytest.raises(ValueError):
        adamax_step({"w": np.zeros(1)}, {"w": np.zeros(1)}, {}, 0, 1e-3)


@pytest.mark.parametrize(
    "history,expected",
    [([0.5, 0.6], 0.002), ([0.6, 0.6], 0.0018), ([0.7], 0.002), ([0.8, 0.6, 0.7], 0.0018)],
)
def test_lr_decay(history, expected):
    assert lr_decay_check(history, 0.002) == pytest.approx(expected, rel=1e-15)


def test_lr_decay_empty_history():
    with pytest.raises(ValueError):
        lr_decay_check([], 0.1)


# -- config


def test_config_defaults():
    cfg = TrainConfig()
    assert (cfg.epochs, cfg.batch_size, cfg.lr, cfg.lr_decay, cfg.dropout) == (100, 50, 2e-3, 0.9, 0.5)
    assert cfg.ratios == (0.6, 0.2, 0.2)


@pytest.mark.parametrize("bad", [dict(epochs=0), dict(lr=0.0), dict(dropout=1.0),
                                 dict(train_ratio=0.5), dict(grl_lambda=-1.0)])
def test_config_rejections(bad):
    with pytest.raises(ConfigError):
        TrainConfig(**bad)


def test_config_from_mapping():
    cfg = TrainConfig.from_mapping({"epochs": "7", "lr": "0.01", "freeze_embeddings": "true"})
    assert cfg.epochs == 7 and cfg.lr == 0.01 and cfg.freeze_embeddings
    with pytest.raises(ConfigError):
        TrainConfig.from_mapping({"nonsense": "1"})


def test_grl_warmup_schedule():
    cfg = TrainConfig(grl_lambda=0.5, grl_warmup=4)
    assert [cfg.lambda_at(e) for e in (1, 2, 4, 9)] == [0.125, 0.25, 0.5, 0.5]


# -- supervised epochs


def _opt(model, lr=2e-3):
    return Adamax(model.trainable(), lr)


def test_task_data_mismatch_rejected_before_update():
    m = tiny_model()
    before = m.snapshot()
    with pytest.raises(TaskDataError):
        gce_train_epoch(m, TARGET, "identify", tiny_train_config(), _opt(m))
    assert all(np.array_equal(before[k], v) for k, v in m.snapshot().items())


def test_zero_learning_rate_keeps_parameters():
    m = tiny_model()
    before = m.snapshot()
    opt = _opt(m, lr=0.0)
    gce_train_epoch(m, FOUR, "localise", tiny_train_config(), opt)
    for k, v in m.snapshot().items():
        assert v.tobytes() == before[k].tobytes()


def test_loss_decreases_on_separable_data():
    data = generate_synthetic("medical", 10, 4)
    cfg = tiny_train_config(d_emb=8, hidden=8, ffnn_hidden=8, fusion_width=8, batch_size=10, dropout=0.0)
    m = build_model(Vocab.build(data), cfg)
    opt = Adamax(m.trainable(), 0.01)
    losses = [gce_train_epoch(m, data, "identify", cfg, opt, e).task_loss for e in range(1, 6)]
    assert all(b < a for a, b in zip(losses, losses[1:])), losses


def test_epoch_determinism():
    def run():
        m = tiny_model()
        cfg = tiny_train_config()
        return gce_train_epoch(m, FOUR, "localise", cfg, _opt(m), 2, FOUR), m.to_json()

    assert run() == run()


def test_frozen_embeddings_stay_fixed():
    m = tiny_model(freeze_embeddings=True)
    before = m.params["embedding"].value.copy()
    gce_train_epoch(m, FOUR, "identify", tiny_train_config(), _opt(m))
    assert np.array_equal(m.params["embedding"].value, before)


def test_train_gce_keeps_best_epoch(tmp_path):
    cfg = tiny_train_config(epochs=4)
    res = train_gce(FOUR, FOUR, "identify", cfg, model=tiny_model(), log_path=tmp_path / "log.jsonl")
    lines = (tmp_path / "log.jsonl").read_text().splitlines()
    assert len(lines) == 4 and '"dev_f1"' in lines[0]
    best = max(s.dev_f1 for s in res.history)
    assert res.history[res.best_epoch - 1].dev_f1 == best


# -- adversarial objective


def _grads(model, loss):
    model.zero_grad()
    ad.backward(loss)
    return {k: p.grad.copy() for k, p in model.params.items()}


def _domain_term(model, lam, reverse):
    enc_s = encode_batch(model, FOUR[:2])
    enc_t = encode_batch(model, TARGET)
    z = ad.concat([domain_logits(model, enc_s, reverse=lam if reverse else None),
                   domain_logits(model, enc_t, reverse=lam if reverse else None)], axis=0)
    return ad.mean_all(ad.bce_with_logits(z, np.array([1.0, 1.0, 0.0, 0.0])))


@pytest.mark.parametrize("lam", [0.0, 0.5, 1.0, 2.0, 0.3, 2.5])
def test_reversal_law_on_encoder(lam):
    m = perturb(tiny_model())
    rev = _grads(m, _domain_term(m, lam, True))
    ident = _grads(m, _domain_term(m, lam, False))
    exact = lam == 0 or float(np.log2(lam)).is_integer()
    for name in m.group("enc"):
        if exact:
            assert np.array_equal(rev[name], -lam * ident[name]), name
        else:
            # scaling before vs after the remaining backward ops rounds differently
            np.testing.assert_allclose(rev[name], -lam * ident[name], rtol=1e-12, atol=1e-300)
    for name in m.group("dom"):
        assert np.array_equal(rev[name], ident[name])


def test_zero_lambda_cuts_domain_signal():
    m = perturb(tiny_model())
    cfg = tiny_train_config()
    batch = AceBatch(FOUR[:2], TARGET)
    full = _grads(m, ace_objective(m, batch, "identify", cfg, 0.0, training=False))
    enc = encode_batch(m, FOUR[:2])
    task_only = _grads(m, task_loss(m, enc, FOUR[:2], "identify"))
    for name in m.group("enc"):
        np.testing.assert_allclose(full[name], task_only[name], atol=1e-15)


def test_empty_target_reduces_to_source_domain_term():
    m = tiny_model()
    cfg = tiny_train_config()
    parts = {}
    loss = ace_objective(m, AceBatch(FOUR[:2]), "identify", cfg, training=False, parts=parts)
    enc = encode_batch(m, FOUR[:2])
    expected = task_loss(m, enc, FOUR[:2], "identify").item()
    z = domain_logits(m, enc).value
    expected += float(np.mean(np.logaddexp(0.0, -z)))
    assert loss.item() == pytest.approx(expected, rel=1e-12)
    assert parts["domain"] == pytest.approx(float(np.mean(np.logaddexp(0.0, -z))), rel=1e-12)


def test_ace_rejects_missing_source():
    m = tiny_model()
    with pytest.raises(TaskDataError):
        ace_objective(m, AceBatch([], TARGET), "identify", tiny_train_config())


@pytest.mark.parametrize("task", ["identify", "localise"])
def test_ace_objective_gradient(task):
    m = perturb(tiny_model(), scale=0.1)
    cfg = tiny_train_config(grl_lambda=0.6)
    batch = AceBatch(FOUR[:2], TARGET)

    def f():
        return ace_objective(m, batch, task, cfg, rng_source=stream(1, "s"), rng_target=stream(1, "t"))

    # the reversal flips the domain term for encoder parameters only, so check the
    # two pieces separately: non-encoder groups as-is, encoder via the identity graph
    enc_names = set(m.group("enc"))
    rest = [p for k, p in m.params.items() if k not in enc_names]
    assert finite_difference_check(f, rest).passed

    def f_task():
        enc = encode_batch(m, batch.source, training=True, rng=stream(1, "s"))
        return task_loss(m, enc, batch.source, task)

    enc_params = [m.params[k] for k in sorted(enc_names)]
    m.zero_grad()
    ad.backward(f())
    combined = {k: m.params[k].grad.copy() for k in enc_names}
    t = _grads(m, f_task())
    d = _grads(m, _domain_term_training(m, batch))
    for k in enc_names:
        np.testing.assert_allclose(combined[k], t[k] - 0.6 * d[k], atol=1e-12)
    assert finite_difference_check(f_task, enc_params).passed
    assert finite_difference_check(lambda: _domain_term_training(m, batch), enc_params).passed


def _domain_term_training(m, batch):
    enc_s = encode_batch(m, batch.source, training=True, rng=stream(1, "s"))
    enc_t = encode_batch(m, batch.target, training=True, rng=stream(1, "t"))
    z = ad.concat([domain_logits(m, enc_s), domain_logits(m, enc_t)], axis=0)
    y = np.concatenate([np.ones(len(batch.source)), np.zeros(len(batch.target))])
    return ad.mean_all(ad.bce_with_logits(z, y))


def test_ace_lambda_zero_matches_gce():
    cfg = tiny_train_config(grl_lambda=0.0)
    a, b = tiny_model(), tiny_model()
    sa = gce_train_epoch(a, FOUR, "identify", cfg, _opt(a), 1, FOUR)
    sb = ace_train_epoch(b, FOUR, TARGET, "identify", cfg, _opt(b), 1, FOUR)
    assert abs(sa.task_loss - sb.task_loss) < 1e-9
    assert (sa.dev_p, sa.dev_r, sa.dev_f1) == (sb.dev_p, sb.dev_r, sb.dev_f1)
    for name in a.group("enc") | a.group("class"):
        np.testing.assert_allclose(a.params[name].value, b.params[name].value, atol=1e-9)


def test_ace_epoch_determinism_and_domain_accuracy():
    def run():
        m = tiny_model()
        s = ace_train_epoch(m, FOUR, TARGET, "localise", tiny_train_config(), _opt(m), 1, FOUR)
        return s, m.to_json()

    first = run()
    assert first == run()
    assert 0.0 <= first[0].domain_acc <= 1.0


def test_ace_rejects_empty_target():
    m = tiny_model()
    with pytest.raises(TaskDataError):
        ace_train_epoch(m, FOUR, [], "identify", tiny_train_config(), _opt(m))
