"""The three training stages and the three-system benchmark built on them.

Stage I pre-trains the APC model on server audio, stage II continues it with
FederatedAveraging over client devices, and stage III fits the event
classifier on frozen encoder features. The benchmark trains:

* ``ssl_wo_client``: M_0 encoder, classifier on D_server
* ``fssl``: federated encoder, classifier on D_server
* ``ssl_w_client``: M_0 encoder, classifier on D_server plus labeled D_client
"""

from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import DAY, CorpusSplit, PartitionSpec, augment_client, client_subset, derive_partitions
from .errors import ContractError
from .evaluation import SYSTEMS, EvalReport, evaluate_scores
from .features import CmvnStats, FeatureConfig, apply_cmvn, compute_cmvn, lfbe
from .federation import FederationConfig, FederationEngine, RoundRecord
from .model import (ApcConfig, ClassifierConfig, apc_batch_loss, classify, encode_arrays,
                    init_apc, init_classifier, scaled_bce)
from .numerics.params import ParamSet, sgd_step
from .numerics.tensor import backward

log = logging.getLogger(__name__)

MULTIPLIERS = (1, 2, 4, 8)


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 30
    lr: float = 1e-3
    batch_size: int = 16


@dataclass(frozen=True)
class ClassifierTrainConfig:
    epochs: int = 40
    lr: float = 0.05
    batch_size: int = 32


@dataclass(frozen=True)
class ExperimentPlan:
    features: FeatureConfig = FeatureConfig()
    apc: ApcConfig = ApcConfig()
    classifier: ClassifierConfig = ClassifierConfig()
    pretrain: PretrainConfig = PretrainConfig()
    federation: FederationConfig = FederationConfig()
    classifier_train: ClassifierTrainConfig = ClassifierTrainConfig()
    multiplier: int = 1
    seeds: Tuple[int, ...] = (0,)

    def __post_init__(self):
        if self.multiplier not in MULTIPLIERS:
            raise ContractError(f"multiplier must be one of {MULTIPLIERS}")
        if not self.seeds:
            raise ContractError("need at least one seed")


def stage_seed(seed: int, stage: str) -> int:
    tag = int.from_bytes(stage.encode(), "little") % (2**31)
    return int(np.random.SeedSequence([seed, tag]).generate_state(1)[0])


class FeatureBank:
    """Normalized LFBE features for a corpus, with CMVN statistics from D_server only."""

    def __init__(self, split: CorpusSplit, config: FeatureConfig, stats: Optional[CmvnStats] = None):
        self.config = config
        self._raw = {}
        self.stats = stats or compute_cmvn(self._lfbe(c) for c in split.server_clips)

    def _lfbe(self, clip):
        key = id(clip)
        hit = self._raw.get(key)
        if hit is None:
            hit = (clip, lfbe(clip, self.config))
            self._raw[key] = hit
        return hit[1]

    def __call__(self, clip) -> np.ndarray:
        return apply_cmvn(self._lfbe(clip), self.stats).values


@dataclass
class ModelZoo:
    m0: ParamSet
    m_fssl: ParamSet
    classifiers: Dict[str, ParamSet] = field(default_factory=dict)

    def encoder_for(self, system):
        return self.m_fssl if system == "fssl" else self.m0


@dataclass
class BenchmarkResult:
    seed: int
    zoo: ModelZoo
    reports: Dict[str, EvalReport]
    scores: Dict[str, list]
    audit: List[RoundRecord]
    pretrain_losses: List[float]
    partitions: PartitionSpec
    extra_fssl: Dict[int, EvalReport] = field(default_factory=dict)
    extra_scores: Dict[int, list] = field(default_factory=dict)
    extra_audits: Dict[int, List[RoundRecord]] = field(default_factory=dict)


class ArtifactStore:
    """Persisted stage outputs under ``root``, so an interrupted run can resume.

    Every artifact is recorded in ``MANIFEST.json`` together with the run
    fingerprint (config hash and seed) and, for ParamSets, the checksum. A
    manifest written under a different fingerprint is treated as empty, so
    stale models are never picked up by a changed config.
    """

    MANIFEST = "MANIFEST.json"

    def __init__(self, root, fingerprint: str):
        self.root = Path(root)
        self.fingerprint = fingerprint
        self.root.mkdir(parents=True, exist_ok=True)
        self.entries = {}
        path = self.root / self.MANIFEST
        if path.exists():
            try:
                doc = json.loads(path.read_text(encoding="utf-8"))
            except ValueError:
                doc = {}
            if doc.get("fingerprint") == fingerprint:
                self.entries = dict(doc.get("entries", {}))

    def _write_manifest(self):
        doc = {"fingerprint": self.fingerprint, "entries": dict(sorted(self.entries.items()))}
        tmp = self.root / (self.MANIFEST + ".tmp")
        tmp.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        os.replace(tmp, self.root / self.MANIFEST)

    def get_params(self, name) -> Optional[ParamSet]:
        entry = self.entries.get(name)
        if entry is None or entry.get("kind") != "params":
            return None
        path = self.root / entry["file"]
        if not path.exists():
            return None
        params = ParamSet.load(path)
        if params.checksum() != entry["checksum"]:
            log.warning("checksum mismatch for %s; recomputing", name)
            return None
        return params

    def put_params(self, name, params: ParamSet):
        fname = f"{name}.params"
        params.save(self.root / fname)
        self.entries[name] = {"kind": "params", "file": fname, "checksum": params.checksum()}
        self._write_manifest()

    def get_json(self, name):
        entry = self.entries.get(name)
        if entry is None or entry.get("kind") != "json":
            return None
        path = self.root / entry["file"]
        return json.loads(path.read_text(encoding="utf-8")) if path.exists() else None

    def put_json(self, name, obj):
        fname = f"{name}.json"
        (self.root / fname).write_text(json.dumps(obj, sort_keys=True) + "\n", encoding="utf-8")
        self.entries[name] = {"kind": "json", "file": fname}
        self._write_manifest()


def _cached(store, name, compute):
    """(params, extra) from the store when present, else computed and persisted."""
    if store is not None:
        params = store.get_params(name)
        extra = store.get_json(name + ".log")
        if params is not None and extra is not None:
            log.info("resumed %s from %s", name, store.root)
            return params, extra
    params, extra = compute()
    if store is not None:
        store.put_params(name, params)
        store.put_json(name + ".log", extra)
    return params, extra


# ------------------------------------------------------------------ stage I

def pretrain(server_feats: Sequence[np.ndarray], apc: ApcConfig, config: PretrainConfig, seed: int):
    """Epoch-based SGD on the APC loss over D_server; returns (M_0, per-epoch mean loss)."""
    if len(server_feats) == 0:
        raise ContractError("pre-training needs server data")
    params = init_apc(apc, stage_seed(seed, "init-apc"))
    rng = np.random.default_rng(stage_seed(seed, "pretrain"))
    losses = []
    n = len(server_feats)
    for _ in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            batch = [server_feats[i] for i in order[start:start + config.batch_size]]
            leaves = params.leaves()
            loss = apc_batch_loss(leaves, batch, apc, reduction="mean")
            grads = backward(loss, leaves)
            total += loss.item() * len(batch)
            params = sgd_step(params, grads, config.lr)
        losses.append(total / n)
    return params, losses


def apc_corpus_loss(params: ParamSet, feats, apc: ApcConfig, batch_size=64) -> float:
    """Mean per-clip APC loss, no gradients."""
    consts = params.constants()
    total = 0.0
    for start in range(0, len(feats), batch_size):
        total += apc_batch_loss(consts, feats[start:start + batch_size], apc).item()
    return total / len(feats)


# ------------------------------------------------------------------ stage II

def client_streams(split: CorpusSplit, bank: FeatureBank):
    """DSN -> [(round index, features)], one round per 24 h of the client period."""
    start = split.client_period_start()
    view = split.client_view()
    return {
        dsn: [((c.timestamp - start) // DAY, bank(c)) for c in clips]
        for dsn, clips in view.items()
    }


def federated_ssl(m0: ParamSet, streams, apc: ApcConfig, config: FederationConfig):
    """Run every configured round from M_0; returns (M_fssl, round audit)."""
    engine = FederationEngine(m0.select("enc", "dec"), streams, apc, config)
    records = engine.run(config.rounds)
    for r in records:
        if not r.empty:
            log.debug("round %d: %d clients, n=%d, loss=%.3f", r.round, len(r.dsns), r.total_examples,
                      r.mean_local_loss)
    return engine.params, records


# ------------------------------------------------------------------ stage III

def _cls_loss(leaves, hs, labels, cls: ClassifierConfig):
    p = classify(np.stack(hs), leaves)
    return scaled_bce(p, labels, cls.scale_c, reduction="mean")


def train_classifier(apc_params: ParamSet, feats, labels, apc: ApcConfig, cls: ClassifierConfig,
                     config: ClassifierTrainConfig, seed: int):
    """Fit the classifier head on frozen encoder features; returns (params, per-epoch loss)."""
    labels = [None if z is None else int(z) for z in labels]
    if not labels or any(z is None for z in labels):
        raise ContractError("classifier training needs a fully labeled corpus")
    encoder = apc_params.select("enc")
    before = encoder.checksum()
    hs = encode_arrays(encoder, feats, apc)
    z = np.array(labels, dtype=np.float64)
    params = init_classifier(apc, cls, stage_seed(seed, "init-cls"))
    rng = np.random.default_rng(stage_seed(seed, "train-cls"))
    groups = {}
    for i, h in enumerate(hs):
        groups.setdefault(h.shape, []).append(i)
    losses = []
    for _ in range(config.epochs):
        total = 0.0
        for shape in sorted(groups):
            idx = np.array(groups[shape])[rng.permutation(len(groups[shape]))]
            for start in range(0, idx.size, config.batch_size):
                b = idx[start:start + config.batch_size]
                leaves = params.leaves()
                loss = _cls_loss(leaves, [hs[i] for i in b], z[b], cls)
                grads = backward(loss, leaves)
                total += loss.item() * b.size
                params = sgd_step(params, grads, config.lr)
        losses.append(total / len(hs))
    if encoder.checksum() != before:
        raise AssertionError("encoder changed during classifier training")
    return params, losses


def score_clips(apc_params: ParamSet, cls_params: ParamSet, feats, apc: ApcConfig, batch_size=128):
    hs = encode_arrays(apc_params, feats, apc)
    out = np.empty(len(hs))
    consts = cls_params.constants()
    order = sorted(range(len(hs)), key=lambda i: hs[i].shape)
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        for shape in sorted({hs[i].shape for i in idx}):
            sub = [i for i in idx if hs[i].shape == shape]
            out[sub] = classify(np.stack([hs[i] for i in sub]), consts).data
    return out


# ------------------------------------------------------------------ benchmark

def evaluation_rows(split, parts: PartitionSpec, bank, apc_params, cls_params, apc):
    clips = [c for c in split.test_clips if parts.of(c.dsn) is not None and c.label is not None]
    scores = score_clips(apc_params, cls_params, [bank(c) for c in clips], apc)
    rows = [(parts.of(c.dsn), c.dsn, c.timestamp, float(s), int(c.label)) for c, s in zip(clips, scores)]
    rows.sort(key=lambda r: ("IUT".index(r[0]), r[1], r[2]))
    return rows


def _fit_system(name, encoder, split, bank, plan, seed):
    clips = list(split.server_clips)
    if name == "ssl_w_client":
        clips += [c for d in sorted(split.client_clips) for c in split.client_clips[d] if c.label is not None]
    return train_classifier(encoder, [bank(c) for c in clips], [c.label for c in clips],
                            plan.apc, plan.classifier, plan.classifier_train, seed)


def run_benchmark(split: CorpusSplit, plan: ExperimentPlan, seed: int,
                  extra_multipliers: Sequence[int] = (), store: Optional[ArtifactStore] = None,
                  recalls=None) -> BenchmarkResult:
    """Build M_0, M_fssl and all three systems, then evaluate each on I, U and T.

    ``split`` holds the 1x corpus. Stage II sees it at ``plan.multiplier``;
    ``extra_multipliers`` additionally trains and scores FSSL at those client
    volumes (sharing M_0), for the client-data ablation. With a ``store``,
    every trained model is persisted as it is produced and reused on a rerun.
    """
    eval_kw = {} if recalls is None else {"recalls": tuple(recalls)}
    bank = FeatureBank(split, plan.features)
    parts = derive_partitions(split)
    server_feats = [bank(c) for c in split.server_clips]
    m0, pre_losses = _cached(store, "m0", lambda: pretrain(server_feats, plan.apc, plan.pretrain, seed))
    if pre_losses:
        log.info("seed %d: M_0 loss %.3f -> %.3f", seed, pre_losses[0], pre_losses[-1])

    wanted = sorted({plan.multiplier, *extra_multipliers})
    big = None
    fssl_models, audits = {}, {}
    for m in wanted:
        def stage2(m=m):
            nonlocal big
            if big is None:
                big = augment_client(split, max(wanted)) if max(wanted) > 1 else split
            sub = client_subset(big, m) if big is not split else split
            params, records = federated_ssl(m0, client_streams(sub, bank), plan.apc, plan.federation)
            return params, [r.as_dict() for r in records]
        fssl_models[m], raw = _cached(store, f"m_fssl_{m}x", stage2)
        audits[m] = [RoundRecord.from_dict(r) for r in raw]

    cls_seed = stage_seed(seed, "classifier")
    zoo = ModelZoo(m0, fssl_models[plan.multiplier])
    reports, scores = {}, {}
    for name in SYSTEMS:
        encoder = zoo.encoder_for(name)
        key = f"cls_{name}" if name != "fssl" else f"cls_fssl_{plan.multiplier}x"
        zoo.classifiers[name], _ = _cached(store, key,
                                           lambda: _fit_system(name, encoder, split, bank, plan, cls_seed))
        rows = evaluation_rows(split, parts, bank, encoder, zoo.classifiers[name], plan.apc)
        scores[name] = rows
        reports[name] = evaluate_scores(name, rows, **eval_kw)

    extra, extra_rows = {}, {}
    for m in wanted:
        if m == plan.multiplier:
            extra[m], extra_rows[m] = reports["fssl"], scores["fssl"]
            continue
        cls_params, _ = _cached(store, f"cls_fssl_{m}x",
                                lambda: _fit_system("fssl", fssl_models[m], split, bank, plan, cls_seed))
        extra_rows[m] = evaluation_rows(split, parts, bank, fssl_models[m], cls_params, plan.apc)
        extra[m] = evaluate_scores(f"fssl_{m}x", extra_rows[m], **eval_kw)
    return BenchmarkResult(seed, zoo, reports, scores, audits[plan.multiplier], pre_losses, parts, extra,
                           extra_rows, audits)
