import numpy as np
import pytest

from fssl.data import GenConfig, synth_corpus
from fssl.errors import ContractError
from fssl.evaluation import PARTITIONS, SYSTEMS
from fssl.federation import FederationConfig
from fssl.model import ApcConfig, ClassifierConfig, classify, encode_arrays, init_apc
from fssl.pipeline import (ArtifactStore, ClassifierTrainConfig, ExperimentPlan, FeatureBank, PretrainConfig,
                           apc_corpus_loss, client_streams, pretrain, run_benchmark, stage_seed, train_classifier)

APC = ApcConfig(conv_channels=(4, 4, 8, 8, 8), lstm_units=6)
SMALL_GEN = GenConfig(n_devices=20, days=6, server_days=2, eval_days=1, clips_per_device_day=2, clip_seconds=0.5)


def small_plan(rounds=3, **kw):
    return ExperimentPlan(
        apc=APC, classifier=ClassifierConfig(lstm_units=4),
        pretrain=PretrainConfig(epochs=2, lr=1e-3, batch_size=8),
        federation=FederationConfig(rounds=rounds, clients_per_round=4, batch_size=8, eta=1e-3, seed=0),
        classifier_train=ClassifierTrainConfig(epochs=3, lr=0.1, batch_size=8), **kw)


@pytest.fixture(scope="module")
def split():
    return synth_corpus(SMALL_GEN, seed=1)


@pytest.fixture(scope="module")
def result(split):
    return run_benchmark(split, small_plan(), seed=1, extra_multipliers=(2,))


def test_report_covers_every_system_and_partition(result):
    assert set(result.reports) == set(SYSTEMS)
    for rep in result.reports.values():
        assert set(rep.partitions) == set(PARTITIONS)
        for m in rep.partitions.values():
            assert 0.0 <= m.pr_auc <= 1.0
    assert set(result.extra_fssl) == {1, 2}
    assert result.extra_fssl[1] is result.reports["fssl"]
    assert len(result.audit) == 3


def test_scores_only_cover_partitioned_devices(result, split):
    for rows in result.scores.values():
        assert {r[0] for r in rows} == set(PARTITIONS)
        assert all(result.partitions.of(r[1]) == r[0] for r in rows)


def test_benchmark_is_deterministic(result, split):
    again = run_benchmark(split, small_plan(), seed=1, extra_multipliers=(2,))
    assert again.zoo.m_fssl.checksum() == result.zoo.m_fssl.checksum()
    assert again.scores == result.scores
    assert [r.csv_row() for r in again.audit] == [r.csv_row() for r in result.audit]


def test_zero_rounds_make_fssl_equal_to_the_baseline(split):
    res = run_benchmark(split, small_plan(rounds=0), seed=2)
    assert res.zoo.m_fssl.equals(res.zoo.m0.select("enc", "dec"))
    assert [r[3] for r in res.scores["fssl"]] == [r[3] for r in res.scores["ssl_wo_client"]]


def test_stage_three_leaves_encoders_untouched(result, split):
    bank = FeatureBank(split, small_plan().features)
    before = result.zoo.m_fssl.select("enc").checksum()
    train_classifier(result.zoo.m_fssl, [bank(c) for c in split.server_clips[:8]],
                     [c.label for c in split.server_clips[:8]], APC, ClassifierConfig(lstm_units=4),
                     ClassifierTrainConfig(epochs=1), seed=0)
    assert result.zoo.m_fssl.select("enc").checksum() == before


def test_classifier_needs_labels(split):
    bank = FeatureBank(split, small_plan().features)
    with pytest.raises(ContractError):
        train_classifier(init_apc(APC, 0), [bank(split.server_clips[0])], [None], APC, ClassifierConfig(),
                         ClassifierTrainConfig(), seed=0)


def test_client_streams_carry_no_labels(split):
    bank = FeatureBank(split, small_plan().features)
    streams = client_streams(split, bank)
    for dsn, stream in streams.items():
        for day, feats in stream:
            assert isinstance(day, (int, np.integer)) and 0 <= day < SMALL_GEN.client_training_days
            assert isinstance(feats, np.ndarray) and feats.shape[1] == 20


def test_cmvn_comes_from_server_data_only(split):
    bank = FeatureBank(split, small_plan().features)
    z = np.concatenate([bank(c) for c in split.server_clips])
    assert np.all(np.abs(z.mean(axis=0)) < 1e-6)
    assert np.all(np.abs(z.var(axis=0) - 1.0) < 1e-4)
    assert bank.stats.count == len(split.server_clips) * z.shape[0] // len(split.server_clips)


def test_zero_epochs_return_the_initialization(split):
    bank = FeatureBank(split, small_plan().features)
    feats = [bank(c) for c in split.server_clips[:4]]
    m0, losses = pretrain(feats, APC, PretrainConfig(epochs=0), seed=3)
    assert losses == []
    assert m0.equals(init_apc(APC, stage_seed(3, "init-apc")))
    again, _ = pretrain(feats, APC, PretrainConfig(epochs=2), seed=3)
    assert again.checksum() == pretrain(feats, APC, PretrainConfig(epochs=2), seed=3)[0].checksum()
    with pytest.raises(ContractError):
        pretrain([], APC, PretrainConfig(), seed=0)


def test_full_batch_pretraining_loss_does_not_increase(split):
    bank = FeatureBank(split, small_plan().features)
    feats = [bank(c) for c in split.server_clips[:12]]
    _, losses = pretrain(feats, APC, PretrainConfig(epochs=8, lr=2e-3, batch_size=64), seed=0)
    assert all(b <= a for a, b in zip(losses, losses[1:]))
    params, _ = pretrain(feats, APC, PretrainConfig(epochs=8, lr=2e-3, batch_size=64), seed=0)
    assert apc_corpus_loss(params, feats, APC) < losses[0]


def test_separable_features_are_learned_perfectly(rng):
    enc = init_apc(APC, 0)
    pos = [np.full((48, 20), 3.0) + 0.05 * rng.standard_normal((48, 20)) for _ in range(10)]
    neg = [np.full((48, 20), -3.0) + 0.05 * rng.standard_normal((48, 20)) for _ in range(10)]
    labels = [1] * 10 + [0] * 10
    cls, losses = train_classifier(enc, pos + neg, labels, APC, ClassifierConfig(lstm_units=4, scale_c=1.0),
                                   ClassifierTrainConfig(epochs=300, lr=2.0, batch_size=20), seed=0)
    p = classify(np.stack(encode_arrays(enc, pos + neg, APC)), cls).data
    assert np.array_equal(p > 0.5, np.array(labels) == 1)
    assert losses[-1] < losses[0]


def test_artifact_store_resumes(tmp_path, split):
    plan = small_plan(rounds=1)
    store = ArtifactStore(tmp_path / "m", "fp1")
    first = run_benchmark(split, plan, seed=4, store=store)
    names = set(store.entries)
    assert {"m0", "m_fssl_1x", "cls_ssl_wo_client", "cls_ssl_w_client", "cls_fssl_1x"} <= names
    resumed = run_benchmark(split, plan, seed=4, store=ArtifactStore(tmp_path / "m", "fp1"))
    assert resumed.scores == first.scores
    assert resumed.pretrain_losses == first.pretrain_losses
    assert [r.csv_row() for r in resumed.audit] == [r.csv_row() for r in first.audit]
    assert ArtifactStore(tmp_path / "m", "other").entries == {}


def test_artifact_store_rejects_corrupted_params(tmp_path):
    store = ArtifactStore(tmp_path, "fp")
    p = init_apc(APC, 0)
    store.put_params("m0", p)
    assert store.get_params("m0").equals(p)
    (tmp_path / "m0.params").write_bytes(init_apc(APC, 1).to_bytes())
    assert ArtifactStore(tmp_path, "fp").get_params("m0") is None


def test_plan_validation():
    with pytest.raises(ContractError):
        ExperimentPlan(multiplier=3)
