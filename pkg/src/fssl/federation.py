"""FederatedAveraging over simulated devices with a 24-hour round clock."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ContractError
from .model import ApcConfig, apc_batch_loss
from .numerics.params import ParamSet, sgd_step, weighted_average
from .numerics.tensor import backward


@dataclass(frozen=True)
class FederationConfig:
    rounds: int = 20
    clients_per_round: int = 10
    local_epochs: int = 1
    batch_size: int = 16
    eta: float = 0.01
    seed: int = 0
    clear_unselected: bool = False

    def __post_init__(self):
        if self.rounds < 0:
            raise ContractError("rounds must be >= 0")
        for name in ("clients_per_round", "local_epochs", "batch_size"):
            if getattr(self, name) <= 0:
                raise ContractError(f"{name} must be positive")
        if self.eta < 0:
            raise ContractError("eta must be >= 0")


@dataclass
class ClientState:
    """A simulated device holding the LFBE features it recorded since it last reported."""

    dsn: str
    rng_seed: int
    buffer: List[np.ndarray] = field(default_factory=list)

    @property
    def n_k(self) -> int:
        return len(self.buffer)


@dataclass(frozen=True)
class ClientUpdate:
    """Everything a device sends back: weights, example count, one scalar loss."""

    params: ParamSet
    n_k: int
    mean_loss: float


@dataclass(frozen=True)
class RoundRecord:
    round: int
    dsns: Tuple[str, ...]
    n_k: Tuple[int, ...]
    total_examples: int
    weights: Tuple[float, ...]
    mean_local_loss: float
    client_losses: Tuple[float, ...]
    param_checksum: str

    @property
    def empty(self) -> bool:
        return not self.dsns

    def as_dict(self):
        return {"round": self.round, "dsns": list(self.dsns), "n_k": list(self.n_k),
                "total_examples": self.total_examples, "weights": list(self.weights),
                "mean_local_loss": self.mean_local_loss, "client_losses": list(self.client_losses),
                "param_checksum": self.param_checksum}

    @classmethod
    def from_dict(cls, d):
        return cls(int(d["round"]), tuple(d["dsns"]), tuple(int(x) for x in d["n_k"]), int(d["total_examples"]),
                   tuple(float(x) for x in d["weights"]), float(d["mean_local_loss"]),
                   tuple(float(x) for x in d["client_losses"]), str(d["param_checksum"]))

    def csv_row(self):
        loss = "" if self.empty else f"{self.mean_local_loss:.10g}"
        return f"{self.round},{len(self.dsns)},{self.total_examples},{loss},{self.param_checksum}"


AUDIT_HEADER = "round,dsn_count,total_examples,mean_local_loss,param_checksum"


def round_rng(seed: int, t: int):
    return np.random.default_rng(np.random.SeedSequence([seed, 0xF1, t]))


def select_clients(registry: Dict[str, ClientState], k: int, rng) -> List[str]:
    """Uniformly sample k devices (without replacement) among those holding data."""
    eligible = sorted(d for d, c in registry.items() if c.n_k > 0)
    if k >= len(eligible):
        return eligible
    picked = rng.choice(len(eligible), size=k, replace=False)
    return sorted(eligible[i] for i in picked)


def client_update(global_params: ParamSet, buffer: Sequence[np.ndarray], apc_config: ApcConfig,
                  epochs: int, batch_size: int, eta: float, rng) -> ClientUpdate:
    """Local minibatch SGD on the per-clip APC L1 loss; batch order reshuffled every epoch."""
    n_k = len(buffer)
    if n_k == 0:
        raise ContractError("client_update on an empty buffer")
    params = global_params
    total, steps = 0.0, 0
    for _ in range(epochs):
        order = rng.permutation(n_k)
        for start in range(0, n_k, batch_size):
            batch = [buffer[i] for i in order[start:start + batch_size]]
            leaves = params.leaves()
            loss = apc_batch_loss(leaves, batch, apc_config, reduction="mean")
            grads = backward(loss, leaves)
            total += loss.item() * len(batch)
            params = sgd_step(params, grads, eta)
        steps += n_k
    return ClientUpdate(params, n_k, total / steps)


def aggregate(updates) -> ParamSet:
    """Example-weighted mean of client weights: sum_k (n_k / n) w_k."""
    pairs = [(u.params, u.n_k) if isinstance(u, ClientUpdate) else tuple(u) for u in updates]
    if not pairs:
        raise ContractError("aggregate needs at least one update")
    n = sum(nk for _, nk in pairs)
    if n <= 0:
        raise ContractError("total example count must be positive")
    if len(pairs) == 1:
        return pairs[0][0]
    return weighted_average([p for p, _ in pairs], [nk / n for _, nk in pairs])


def _threads():
    try:
        return max(1, int(os.environ.get("FSSL_THREADS", "1")))
    except ValueError:
        return 1


class FederationEngine:
    """Server coordinator. ``streams`` maps DSN -> [(round index, features), ...]."""

    def __init__(self, initial: ParamSet, streams: Dict[str, List[Tuple[int, np.ndarray]]],
                 apc_config: ApcConfig, config: FederationConfig):
        bad = set(initial.tags.values()) - {"enc", "dec"}
        if bad:
            raise ContractError(f"federated model carries non-APC partitions {sorted(bad)}")
        self.params = initial
        self.apc_config = apc_config
        self.config = config
        self.streams = {d: sorted(s, key=lambda e: e[0]) for d, s in sorted(streams.items())}
        self.registry = {
            d: ClientState(d, int(np.random.SeedSequence([config.seed, 0xC7, i]).generate_state(1)[0]))
            for i, d in enumerate(self.streams)
        }
        self.records: List[RoundRecord] = []

    def deliver(self, t: int) -> int:
        n = 0
        for d, stream in self.streams.items():
            for day, feats in stream:
                if day == t:
                    self.registry[d].buffer.append(feats)
                    n += 1
        return n

    def _update(self, dsn, t):
        client = self.registry[dsn]
        rng = np.random.default_rng(np.random.SeedSequence([client.rng_seed, t]))
        c = self.config
        return client_update(self.params, list(client.buffer), self.apc_config,
                             c.local_epochs, c.batch_size, c.eta, rng)

    def run_round(self, t: int) -> RoundRecord:
        self.deliver(t)
        chosen = select_clients(self.registry, self.config.clients_per_round, round_rng(self.config.seed, t))
        if not chosen:
            rec = RoundRecord(t, (), (), 0, (), float("nan"), (), self.params.checksum())
            self.records.append(rec)
            return rec
        workers = min(_threads(), len(chosen))
        if workers > 1:
            with ThreadPoolExecutor(workers) as pool:
                updates = list(pool.map(lambda d: self._update(d, t), chosen))
        else:
            updates = [self._update(d, t) for d in chosen]
        n = sum(u.n_k for u in updates)
        self.params = aggregate(updates)
        for d in (self.registry if self.config.clear_unselected else chosen):
            self.registry[d].buffer.clear()
        rec = RoundRecord(
            t, tuple(chosen), tuple(u.n_k for u in updates), n,
            tuple(u.n_k / n for u in updates),
            float(np.mean([u.mean_loss for u in updates])),
            tuple(u.mean_loss for u in updates),
            self.params.checksum(),
        )
        self.records.append(rec)
        return rec

    def run(self, rounds: Optional[int] = None) -> List[RoundRecord]:
        rounds = self.config.rounds if rounds is None else rounds
        start = len(self.records)
        return [self.run_round(t) for t in range(start, start + rounds)]


def write_audit_log(records, path, header_lines=()):
    with open(path, "w", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write(AUDIT_HEADER + "\n")
        for r in records:
            fh.write(r.csv_row() + "\n")
