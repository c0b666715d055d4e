"""Named parameter collections, SGD, and the binary parameter file format."""

from __future__ import annotations

import hashlib
import struct
from collections.abc import Mapping
from pathlib import Path

import numpy as np

from ..errors import ContractError, FormatError
from .tensor import Tensor

TAGS = ("enc", "dec", "cls")

MAGIC = b"FSSL"
FORMAT_VERSION = 1


def _frozen(a):
    a = np.array(a, dtype=np.float64, copy=True)
    a.setflags(write=False)
    return a


class ParamSet(Mapping):
    """Ordered, immutable name -> array map; each entry tagged enc, dec or cls."""

    def __init__(self, entries, tags):
        if set(entries) != set(tags):
            raise ContractError("every entry needs exactly one tag")
        bad = {t for t in tags.values() if t not in TAGS}
        if bad:
            raise ContractError(f"unknown partition tags {sorted(bad)}")
        self._entries = {k: _frozen(v) for k, v in entries.items()}
        self._tags = {k: tags[k] for k in self._entries}

    def __getitem__(self, name):
        return self._entries[name]

    def __iter__(self):
        return iter(self._entries)

    def __len__(self):
        return len(self._entries)

    def __repr__(self):
        return f"ParamSet({len(self)} entries, {self.size} values, tags={sorted(set(self._tags.values()))})"

    @property
    def tags(self):
        return dict(self._tags)

    @property
    def size(self):
        return int(sum(v.size for v in self._entries.values()))

    def tag(self, name):
        return self._tags[name]

    def select(self, *tags):
        keep = [k for k in self if self._tags[k] in tags]
        return ParamSet({k: self._entries[k] for k in keep}, {k: self._tags[k] for k in keep})

    def merge(self, other: "ParamSet") -> "ParamSet":
        """Union with ``other``; entries of ``other`` win on name clashes."""
        entries = dict(self._entries)
        tags = dict(self._tags)
        entries.update(other._entries)
        tags.update(other._tags)
        return ParamSet(entries, tags)

    def replace(self, values) -> "ParamSet":
        """Same names/tags with new arrays (shapes must match)."""
        check_keys(self, values)
        for k in self:
            if np.shape(values[k]) != self._entries[k].shape:
                raise ContractError(f"shape of {k} changed: {np.shape(values[k])} vs {self._entries[k].shape}")
        return ParamSet({k: values[k] for k in self}, self._tags)

    def leaves(self):
        """Fresh differentiable leaves for one forward/backward pass."""
        return {k: Tensor(v, requires_grad=True, name=k) for k, v in self._entries.items()}

    def constants(self):
        return {k: Tensor(v, name=k) for k, v in self._entries.items()}

    def compatible(self, other: "ParamSet") -> bool:
        return (list(self) == list(other)
                and all(self[k].shape == other[k].shape for k in self)
                and self._tags == other._tags)

    def flat(self):
        return np.concatenate([v.ravel() for v in self._entries.values()]) if len(self) else np.zeros(0)

    def equals(self, other: "ParamSet") -> bool:
        return self.compatible(other) and all(np.array_equal(self[k], other[k]) for k in self)

    def to_bytes(self) -> bytes:
        out = [MAGIC, struct.pack("<HI", FORMAT_VERSION, len(self))]
        for name, arr in self._entries.items():
            nb = name.encode("utf-8")
            tb = self._tags[name].encode("ascii")
            out.append(struct.pack("<H", len(nb)) + nb)
            out.append(struct.pack("<B", len(tb)) + tb)
            out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            out.append(arr.astype("<f8").tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "ParamSet":
        if blob[:4] != MAGIC:
            raise FormatError("not a parameter file")
        try:
            version, count = struct.unpack_from("<HI", blob, 4)
            if version != FORMAT_VERSION:
                raise FormatError(f"unsupported parameter format version {version}")
            off = 10
            entries, tags = {}, {}
            for _ in range(count):
                (nlen,) = struct.unpack_from("<H", blob, off)
                off += 2
                name = blob[off:off + nlen].decode("utf-8")
                off += nlen
                (tlen,) = struct.unpack_from("<B", blob, off)
                off += 1
                tag = blob[off:off + tlen].decode("ascii")
                off += tlen
                (rank,) = struct.unpack_from("<B", blob, off)
                off += 1
                dims = struct.unpack_from(f"<{rank}I", blob, off)
                off += 4 * rank
                n = int(np.prod(dims, dtype=np.int64))
                if off + 8 * n > len(blob):
                    raise FormatError(f"truncated payload for {name}")
                entries[name] = np.frombuffer(blob, "<f8", n, off).reshape(dims)
                tags[name] = tag
                off += 8 * n
        except struct.error as exc:
            raise FormatError(f"truncated parameter file: {exc}") from None
        if off != len(blob):
            raise FormatError("trailing bytes after last entry")
        return cls(entries, tags)

    def save(self, path):
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())

    def checksum(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()[:16]


class Gradients(dict):
    """name -> gradient array, keyed like the ParamSet it differentiates."""


def check_keys(a, b):
    if set(a) != set(b):
        missing = sorted(set(a) ^ set(b))
        raise ContractError(f"keyset mismatch on {missing}")


def sgd_step(params: ParamSet, grads, eta: float) -> ParamSet:
    check_keys(params, grads)
    return params.replace({k: params[k] - eta * grads[k] for k in params})


def weighted_average(sets, weights) -> ParamSet:
    """Entrywise sum_i weights[i] * sets[i]; all sets must be compatible."""
    first = sets[0]
    for s in sets[1:]:
        if not first.compatible(s):
            raise ContractError("parameter sets are not aggregation-compatible")
    out = {}
    for k in first:
        acc = np.zeros_like(first[k])
        for s, w in zip(sets, weights):
            acc += w * s[k]
        out[k] = acc
    return first.replace(out)
