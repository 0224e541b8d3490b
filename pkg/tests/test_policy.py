import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radarfs.errors import ConfigError
from radarfs.strategies import HEAD_SIZES, FatUpdate, Preset, applicable, preset
from radarfs.policy import (
    ACTIVATIONS,
    CostRecord,
    Mlp,
    Oracle,
    TrainConfig,
    dominant_stream,
    evaluate_cost,
    forward,
    gradients,
    init_mlp,
    label_by_oracle,
    load_model,
    logits,
    loss,
    model_from_dict,
    model_to_dict,
    predict_for_workload,
    predict_strategy,
    save_model,
    softmax,
    split_samples,
    train,
    tuple_from_classes,
)
from radarfs.workload import (
    Arrival,
    DataType,
    HardwareContext,
    StreamSpec,
    TrainingSample,
    WorkloadSpec,
    generate_training_grid,
)

HW = HardwareContext()


def rand_batch(rng, n=5, d=20):
    X = rng.normal(size=(n, d))
    Y = np.stack([rng.integers(0, k, size=n) for k in HEAD_SIZES], axis=1)
    return X, Y


def test_softmax_stable():
    p = softmax(np.array([1000.0, 1000.0, -1000.0]))
    assert np.allclose(p, [0.5, 0.5, 0.0])


def test_forward_matches_manual_composition():
    m = init_mlp(seed=3, hidden=(7, 5))
    x = np.random.default_rng(0).normal(size=20)
    sig = ACTIVATIONS["sigmoid"][0]
    h = sig(m.weights[1] @ sig(m.weights[0] @ x + m.biases[0]) + m.biases[1])
    z = m.weights[2] @ h + m.biases[2]
    got = forward(m, x)
    i = 0
    for k, p in zip(HEAD_SIZES, got):
        e = np.exp(z[i:i + k] - z[i:i + k].max())
        assert np.allclose(p, e / e.sum(), atol=1e-12, rtol=0)
        i += k


def test_forward_batch_shape():
    m = init_mlp(seed=1)
    out = forward(m, np.zeros((4, 20)))
    assert [p.shape for p in out] == [(4, k) for k in HEAD_SIZES]
    with pytest.raises(ValueError):
        logits(m, np.zeros(19))


def test_shape_validation():
    m = init_mlp()
    with pytest.raises(ValueError):
        Mlp(m.layer_dims, m.weights[:-1], m.biases[:-1])
    with pytest.raises(ConfigError):
        init_mlp(activation="relu6")


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(sorted(ACTIVATIONS)))
def test_gradients_match_finite_differences(seed, act):
    rng = np.random.default_rng(seed)
    m = init_mlp(seed=seed, hidden=(6, 4), activation=act)
    X, Y = rand_batch(rng)
    _, gW, gb = gradients(m, X, Y)
    eps = 1e-4
    for params, grads in ((m.weights, gW), (m.biases, gb)):
        for P, G in zip(params, grads):
            num = np.zeros_like(P)
            for idx in np.ndindex(P.shape):
                old = P[idx]
                P[idx] = old + eps
                up = loss(m, X, Y)
                P[idx] = old - eps
                down = loss(m, X, Y)
                P[idx] = old
                num[idx] = (up - down) / (2 * eps)
            err = np.linalg.norm(num - G) / max(np.linalg.norm(num) + np.linalg.norm(G), 1e-12)
            assert err <= 1e-4


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_probabilities_sum_to_one(seed):
    m = init_mlp(seed=seed, scale=5.0)
    x = np.random.default_rng(seed).normal(scale=10, size=20)
    for p in forward(m, x):
        assert abs(p.sum() - 1) <= 1e-9
        assert np.all(p >= 0)


def _biased(m, classes):
    """Model whose output is pinned to the given per-head classes."""
    m = m.copy()
    m.weights[-1][:] = 0
    b = np.zeros(sum(HEAD_SIZES))
    i = 0
    for k, c in zip(HEAD_SIZES, classes):
        b[i + c] = 10.0
        i += k
    m.biases[-1] = b
    return m


def test_prediction_falls_back_to_valid_tuple():
    # scan + full pre-allocation is not a legal pair
    m = _biased(init_mlp(), (0, FatUpdate.FULL_PREALLOC.value, 1, 2, 2))
    t = predict_strategy(m, np.zeros(20))
    # heads are fixed in order, so the query keeps its argmax and the
    # update head drops to its next-ranked class
    assert t.fat_query.name == "SCAN_ON_DEMAND"
    assert t.fat_update is FatUpdate.PER_CLUSTER
    assert t.classes()[2:] == (1, 2, 2)


def test_prediction_respects_applicability():
    m = _biased(init_mlp(), preset("fpfqa").classes())
    r = StreamSpec(DataType.GPS, 8192, 1024, total_bytes=1024, arrival=Arrival.RANDOM)
    wl = WorkloadSpec((r, r), seed=1)
    t = predict_for_workload(m, wl, HW)
    assert applicable(t, wl)
    assert t.fat_update is not FatUpdate.FULL_PREALLOC
    assert predict_for_workload(m, WorkloadSpec((r,), seed=1), HW) == preset("fpfqa")


def test_tuple_params():
    t = tuple_from_classes(preset("fpfpa").classes(), {"fat_batch": 4})
    assert (t.fat_batch, t.fdt_batch) == (4, 16)


def test_dominant_stream():
    a = StreamSpec(DataType.GPS, 100, 512, total_bytes=512)
    b = StreamSpec(DataType.USB, 200, 512, total_bytes=512)
    assert dominant_stream(WorkloadSpec((a, b, b))) is b
    assert dominant_stream(WorkloadSpec((a, a))) is a


def test_model_round_trip(tmp_path):
    m = init_mlp(seed=4)
    m.params = {"fat_batch": 4, "fdt_batch": 64, "burst": 1}
    p = tmp_path / "m.json"
    save_model(m, p)
    back = load_model(p)
    x = np.linspace(-1, 1, 20)
    assert all(np.array_equal(a, b) for a, b in zip(forward(m, x), forward(back, x)))
    assert back.params == m.params
    d = model_to_dict(m)
    d["feature_version"] = 99
    with pytest.raises(ConfigError):
        model_from_dict(d)
    with pytest.raises(ConfigError):
        load_model(tmp_path / "missing.json")
    (tmp_path / "bad.json").write_text(json.dumps({"version": 1, "feature_version": 1}))
    with pytest.raises(ConfigError):
        load_model(tmp_path / "bad.json")


def test_split_is_deterministic():
    s = list(range(100))
    a, b = split_samples(s, 0.2, seed=5)
    assert len(b) == 20 and sorted(a + b) == s
    assert (a, b) == split_samples(s, 0.2, seed=5)


def _synthetic(n=240):
    """Label depends on packet size only, so a network can learn it."""
    grid = [s for s in generate_training_grid() if s.spec.data_type is DataType.PARAMS]
    out = []
    for s in grid[:n]:
        lab = preset("fpfpa") if s.spec.packet_bytes <= 16 * 1024 else preset("acpa")
        out.append(TrainingSample(s.sample_id, s.spec, lab, 1.0))
    return out


def test_training_learns_simple_rule():
    data = _synthetic()
    cfg = TrainConfig(hidden=(16,), pretrain_epochs=20, finetune_epochs=60, batch_size=32)
    m, rep = train(None, data, cfg)
    assert not rep.degenerate
    assert rep.rows[-1]["heldout_acc"] >= 0.9
    assert rep.rows[-1]["loss"] < rep.rows[0]["loss"]
    assert set(rep.train_ids).isdisjoint(rep.heldout_ids)
    assert m.params["fat_batch"] == 16


def test_training_is_reproducible():
    data = _synthetic(80)
    cfg = TrainConfig(hidden=(8,), pretrain_epochs=3, finetune_epochs=3)
    a, _ = train(None, data, cfg)
    b, _ = train(None, data, cfg)
    assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))


def test_degenerate_labels_warn():
    data = [TrainingSample(s.sample_id, s.spec, preset("acpa"), 1.0) for s in _synthetic(40)]
    with pytest.warns(UserWarning, match="single class"):
        _, rep = train(None, data, TrainConfig(hidden=(4,), pretrain_epochs=1, finetune_epochs=1))
    assert rep.degenerate


def test_training_rejects_unlabelled():
    s = generate_training_grid()[:3]
    with pytest.raises(ConfigError):
        train(None, s)


@pytest.mark.parametrize("kw", [dict(holdout_fraction=0), dict(learning_rate=-1), dict(hidden=())])
def test_bad_train_config(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


def test_oracle_on_presets():
    presets = [preset(p) for p in Preset]
    o = Oracle(presets, sim_budget=4 * 10**6)
    spec = generate_training_grid()[0].spec  # echo 1 MB/s, 16 kB packets
    t, mu = o.best(spec)
    assert mu == min(o.mu(spec, p) for p in presets)
    assert t in presets
    lab = label_by_oracle(TrainingSample(0, spec), oracle=o)
    assert lab.label == t and lab.mu_best == float(mu)
    # memo is keyed on sizes, so a different rate reuses the same runs
    n = len(o._mu)
    o.best(generate_training_grid()[16].spec)
    assert len(o._mu) == n


def test_oracle_budget_floor():
    with pytest.raises(ConfigError):
        Oracle(sim_budget=8192)
    with pytest.raises(ConfigError):
        Oracle(grid=[])


def test_cost_records():
    presets = [preset(p) for p in Preset]
    o = Oracle(presets, sim_budget=4 * 10**6)
    spec = generate_training_grid()[0].spec
    m = _biased(init_mlp(), preset("original").classes())
    (rec,) = evaluate_cost(m, [TrainingSample(0, spec)], oracle=o)
    assert rec.strategy == preset("original")
    assert rec.ratio > 100 and rec.regret > 0
    assert CostRecord(0, rec.strategy, 1.0, 0.0).ratio == float("inf")
