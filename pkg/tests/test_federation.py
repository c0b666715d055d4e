import dataclasses

import numpy as np
import pytest

from fssl.errors import ContractError
from fssl.federation import (ClientState, ClientUpdate, FederationConfig, FederationEngine, RoundRecord, aggregate,
                             client_update, round_rng, select_clients)
from fssl.model import ApcConfig, apc_batch_loss, init_apc, init_classifier, ClassifierConfig
from fssl.numerics.params import ParamSet
from fssl.numerics.tensor import backward

APC = ApcConfig(conv_channels=(3, 3, 4, 4, 4), lstm_units=4)


def scalar(v):
    return ParamSet({"w": np.array([v])}, {"w": "enc"})


def feats(rng, n, frames=40):
    return [rng.standard_normal((frames, 20)) for _ in range(n)]


def centralized_step(w0, client_data, eta):
    """w0 - eta * sum_k (n_k / n) grad l_k(w0), each l_k the mean clip loss on client k."""
    n = sum(len(d) for d in client_data)
    step = {k: np.zeros_like(v) for k, v in w0.items()}
    for data in client_data:
        leaves = w0.leaves()
        g = backward(apc_batch_loss(leaves, data, APC, reduction="mean"), leaves)
        for k in step:
            step[k] += (len(data) / n) * g[k]
    return w0.replace({k: w0[k] - eta * step[k] for k in w0})


@pytest.mark.parametrize("instance", range(10))
def test_fedavg_equals_centralized_weighted_step(instance):
    rng = np.random.default_rng(100 + instance)
    k = int(rng.integers(2, 6))
    sizes = [int(rng.integers(1, 5)) for _ in range(k)]
    eta = float(rng.uniform(1e-3, 5e-2))
    data = [feats(rng, s, frames=int(rng.choice([33, 40]))) for s in sizes]
    w0 = init_apc(APC, instance)
    streams = {f"D{i}": [(0, x) for x in d] for i, d in enumerate(data)}
    cfg = FederationConfig(rounds=1, clients_per_round=k, local_epochs=1, batch_size=64, eta=eta, seed=instance)
    engine = FederationEngine(w0, streams, APC, cfg)
    rec = engine.run_round(0)
    assert rec.dsns == tuple(sorted(streams))
    want = centralized_step(w0, data, eta)
    for name in w0:
        np.testing.assert_allclose(engine.params[name], want[name], rtol=0, atol=1e-10)


def test_single_client_round_is_one_sgd_step(rng):
    w0 = init_apc(APC, 0)
    data = feats(rng, 3)
    engine = FederationEngine(w0, {"D": [(0, x) for x in data]}, APC,
                              FederationConfig(clients_per_round=1, batch_size=8, eta=0.01))
    engine.run_round(0)
    leaves = w0.leaves()
    g = backward(apc_batch_loss(leaves, data, APC, reduction="mean"), leaves)
    for k in w0:
        np.testing.assert_allclose(engine.params[k], w0[k] - 0.01 * g[k], atol=1e-12)


def test_aggregate_hand_case():
    assert aggregate([(scalar(2.0), 1), (scalar(6.0), 3)])["w"][0] == 5.0
    assert aggregate([(scalar(2.0), 5), (scalar(6.0), 5)])["w"][0] == 4.0
    only = scalar(3.0)
    assert aggregate([ClientUpdate(only, 7, 0.0)]) is only
    with pytest.raises(ContractError):
        aggregate([])
    with pytest.raises(ContractError):
        aggregate([(scalar(1.0), 0), (scalar(2.0), 0)])


def test_client_update_contract(rng):
    w0 = init_apc(APC, 0)
    data = feats(rng, 5)
    same = client_update(w0, data, APC, epochs=1, batch_size=2, eta=0.0, rng=np.random.default_rng(0))
    assert same.params.equals(w0) and same.n_k == 5
    with pytest.raises(ContractError):
        client_update(w0, [], APC, 1, 2, 0.1, np.random.default_rng(0))


def test_client_update_descends(rng):
    w0 = init_apc(APC, 0)
    data = feats(rng, 4)
    before = apc_batch_loss(w0, data, APC, reduction="mean").item()
    upd = client_update(w0, data, APC, epochs=1, batch_size=4, eta=1e-3, rng=np.random.default_rng(0))
    assert apc_batch_loss(upd.params, data, APC, reduction="mean").item() <= before


def test_update_payload_has_no_labels():
    fields = {f.name for f in dataclasses.fields(ClientUpdate)}
    assert fields == {"params", "n_k", "mean_loss"}
    assert {f.name for f in dataclasses.fields(ClientState)} == {"dsn", "rng_seed", "buffer"}


def test_engine_refuses_classifier_weights(rng):
    joint = init_apc(APC, 0).merge(init_classifier(APC, ClassifierConfig(lstm_units=3), 0))
    with pytest.raises(ContractError):
        FederationEngine(joint, {}, APC, FederationConfig())


def make_engine(rng, n_dev=6, days=3, k=2, **kw):
    streams = {f"D{i}": [(t, x) for t in range(days) for x in feats(rng, int(rng.integers(0, 3)), 33)]
               for i in range(n_dev)}
    return FederationEngine(init_apc(APC, 0), streams, APC,
                            FederationConfig(rounds=days, clients_per_round=k, batch_size=4, eta=1e-3, **kw))


def test_rounds_clear_participant_buffers_and_normalize_weights(rng):
    engine = make_engine(rng)
    for t in range(3):
        held = {d: c.n_k for d, c in engine.registry.items()}
        rec = engine.run_round(t)
        for d, n_k in zip(rec.dsns, rec.n_k):
            assert engine.registry[d].n_k == 0
            assert n_k >= held[d]
        if not rec.empty:
            assert abs(sum(rec.weights) - 1.0) < 1e-12
            assert rec.total_examples == sum(rec.n_k)


def test_unselected_clients_keep_their_data(rng):
    engine = make_engine(rng, n_dev=6, k=1)
    rec = engine.run_round(0)
    others = [c for d, c in engine.registry.items() if d not in rec.dsns]
    assert any(c.n_k > 0 for c in others)
    cleared = make_engine(np.random.default_rng(0), n_dev=6, k=1, clear_unselected=True)
    cleared.run_round(0)
    assert all(c.n_k == 0 for c in cleared.registry.values())


def test_empty_round_carries_the_model(rng):
    engine = FederationEngine(init_apc(APC, 0), {"D": [(5, feats(rng, 1)[0])]}, APC, FederationConfig())
    before = engine.params
    rec = engine.run_round(0)
    assert rec.empty and engine.params is before
    assert rec.param_checksum == before.checksum()
    assert rec.csv_row().startswith("0,0,0,,")


def test_zero_rounds_return_the_initial_model(rng):
    engine = make_engine(rng)
    assert engine.run(0) == []
    assert engine.params.equals(init_apc(APC, 0))


def test_engine_is_deterministic():
    a = make_engine(np.random.default_rng(5), seed=9)
    b = make_engine(np.random.default_rng(5), seed=9)
    ra, rb = a.run(), b.run()
    assert [r.csv_row() for r in ra] == [r.csv_row() for r in rb]
    assert a.params.equals(b.params)


def test_threads_do_not_change_results(monkeypatch):
    monkeypatch.setenv("FSSL_THREADS", "1")
    a = make_engine(np.random.default_rng(5), k=3)
    a.run()
    monkeypatch.setenv("FSSL_THREADS", "3")
    b = make_engine(np.random.default_rng(5), k=3)
    b.run()
    assert a.params.equals(b.params)


def test_selection():
    reg = {f"D{i}": ClientState(f"D{i}", i, [np.zeros(1)] * (i % 3)) for i in range(9)}
    holding = sorted(d for d, c in reg.items() if c.n_k)
    assert select_clients(reg, 100, round_rng(0, 0)) == holding
    picked = select_clients(reg, 2, round_rng(0, 4))
    assert len(picked) == 2 and set(picked) <= set(holding)
    assert picked == select_clients(reg, 2, round_rng(0, 4))
    single = {"A": ClientState("A", 0, [np.zeros(1)])}
    assert select_clients(single, 1, round_rng(0, 0)) == ["A"]


def test_round_record_round_trip():
    rec = RoundRecord(3, ("A", "B"), (1, 3), 4, (0.25, 0.75), 1.5, (1.0, 2.0), "abc")
    assert RoundRecord.from_dict(rec.as_dict()) == rec


@pytest.mark.parametrize("kw", [{"rounds": -1}, {"clients_per_round": 0}, {"eta": -1.0}, {"batch_size": 0}])
def test_config_validation(kw):
    with pytest.raises(ContractError):
        FederationConfig(**kw)
