"""LIBSVM parsing, synthetic data and sharding samples across agents."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import EmptyDataset, MalformedLine, TooManyAgents

__all__ = [
    "Sample",
    "Dataset",
    "Shard",
    "parse_libsvm",
    "load_libsvm",
    "serialize_libsvm",
    "synth_blobs",
    "shard_uniform",
    "normalize_maxabs",
    "SHARD_SCHEMES",
]

SHARD_SCHEMES = ("contiguous", "round_robin", "label_skew")


@dataclass(frozen=True)
class Sample:
    """One labelled example; ``features`` maps 1-based index to value."""

    label: float
    features: dict

    def __post_init__(self):
        if any(int(i) < 1 for i in self.features):
            raise ValueError("feature indices must be positive")

    def dense(self, dim):
        x = np.zeros(dim)
        for i, v in self.features.items():
            x[i - 1] = v
        return x


@dataclass(frozen=True, eq=False)
class Dataset:
    samples: tuple
    dim: int

    def __post_init__(self):
        object.__setattr__(self, "samples", tuple(self.samples))
        if not self.samples:
            raise EmptyDataset("dataset has no samples")
        top = max((max(s.features, default=0) for s in self.samples), default=0)
        if self.dim < max(top, 1):
            raise ValueError(f"dim {self.dim} smaller than max feature index {top}")

    def __len__(self):
        return len(self.samples)

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.dim == other.dim and self.samples == other.samples

    @cached_property
    def X(self):
        out = np.zeros((len(self.samples), self.dim))
        for r, s in enumerate(self.samples):
            for i, v in s.features.items():
                out[r, i - 1] = v
        out.setflags(write=False)
        return out

    @cached_property
    def y(self):
        out = np.array([s.label for s in self.samples], dtype=float)
        out.setflags(write=False)
        return out


@dataclass(frozen=True, eq=False)
class Shard:
    agent_id: int
    samples: tuple
    dim: int
    indices: tuple = field(default=())

    def __len__(self):
        return len(self.samples)

    def as_dataset(self):
        return Dataset(self.samples, self.dim)

    @cached_property
    def X(self):
        return self.as_dataset().X

    @cached_property
    def y(self):
        return self.as_dataset().y


def _normalize_label(raw):
    return -1.0 if raw <= 0 else 1.0


def parse_libsvm(text, dim=None):
    """Parse LIBSVM text (``bytes`` or ``str``) into a :class:`Dataset`.

    Labels ``<= 0`` map to -1, all others to +1. Indices on a line must be
    strictly increasing. ``dim`` can only widen the inferred dimension.
    """
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8")
    samples = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        try:
            label = float(tokens[0])
        except ValueError:
            raise MalformedLine(line_no, f"bad label {tokens[0]!r}") from None
        feats = {}
        last = 0
        for tok in tokens[1:]:
            idx_s, sep, val_s = tok.partition(":")
            if not sep:
                raise MalformedLine(line_no, f"missing colon in {tok!r}")
            try:
                idx = int(idx_s)
                val = float(val_s)
            except ValueError:
                raise MalformedLine(line_no, f"non-numeric token {tok!r}") from None
            if idx <= last:
                raise MalformedLine(line_no, f"index {idx} not increasing")
            last = idx
            feats[idx] = val
        samples.append(Sample(_normalize_label(label), feats))
    if not samples:
        raise EmptyDataset("no samples in input")
    top = max(max(s.features, default=0) for s in samples)
    return Dataset(tuple(samples), max(top, 1, dim or 0))


def load_libsvm(path, dim=None):
    with open(path, "rb") as fh:
        return parse_libsvm(fh.read(), dim=dim)


def serialize_libsvm(ds):
    lines = []
    for s in ds.samples:
        parts = ["%.17g" % s.label]
        parts += ["%d:%.17g" % (i, v) for i, v in sorted(s.features.items())]
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


def synth_blobs(n, d, margin, seed):
    """Two unit-variance Gaussian clusters centred at ``+-margin * e_1``.

    The first ``ceil(n/2)`` samples are labelled +1, the rest -1.
    """
    if n < 2 or d < 1:
        raise ValueError(f"need n >= 2 and d >= 1, got n={n}, d={d}")
    if margin < 0:
        raise ValueError("margin must be nonnegative")
    rng = np.random.default_rng(seed)
    n_pos = (n + 1) // 2
    labels = np.where(np.arange(n) < n_pos, 1.0, -1.0)
    pts = rng.standard_normal((n, d))
    pts[:, 0] += labels * margin
    samples = tuple(
        Sample(float(lab), {j + 1: float(v) for j, v in enumerate(row) if v != 0.0})
        for lab, row in zip(labels, pts)
    )
    return Dataset(samples, d)


def _split_sizes(total, parts):
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def shard_uniform(ds, n_agents, scheme="contiguous", alpha=None):
    """Split ``ds`` into ``n_agents`` disjoint shards whose sizes differ by <= 1.

    ``label_skew`` sorts by label (stable) and then splits contiguously;
    ``alpha`` is accepted for forward compatibility and ignored.
    """
    m = len(ds)
    if n_agents < 1:
        raise ValueError("need at least one agent")
    if n_agents > m:
        raise TooManyAgents(f"{n_agents} agents for {m} samples")
    if scheme == "round_robin":
        groups = [list(range(a, m, n_agents)) for a in range(n_agents)]
    elif scheme in ("contiguous", "label_skew"):
        order = list(range(m))
        if scheme == "label_skew":
            order.sort(key=lambda r: ds.samples[r].label)
        groups, start = [], 0
        for size in _split_sizes(m, n_agents):
            groups.append(order[start:start + size])
            start += size
    else:
        raise ValueError(f"unknown shard scheme {scheme!r}")
    return [
        Shard(a, tuple(ds.samples[r] for r in idx), ds.dim, tuple(idx))
        for a, idx in enumerate(groups)
    ]


def normalize_maxabs(ds):
    """Scale every feature by its max absolute value over the dataset."""
    scale = np.max(np.abs(ds.X), axis=0)
    scale[scale == 0] = 1.0
    samples = tuple(
        Sample(s.label, {i: v / scale[i - 1] for i, v in s.features.items()})
        for s in ds.samples
    )
    return Dataset(samples, ds.dim)
