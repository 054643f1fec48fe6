"""Observation generators for the unsupervised, paired and odd-one-out settings.

The triplet model draws z1 from the factor prior, picks a random k-subset S of
factor indices and its complement R, then builds z2 by resampling the S
factors of z1 and z3 by resampling the R factors.  Every resampled factor is
forced to a different value, so the pairwise Hamming distances are exactly
(k, d-k, d) and z3 is the odd one out.  Presentation order is shuffled and
the odd one's position is carried as the label.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, ContractViolation
from .synthdata import DEFAULT_SPACE, IMAGE_SHAPE, FactorSpace, render_batch, sample_factors


@dataclass
class TripletSpec:
    k: int
    S: tuple
    R: tuple


@dataclass
class Triplet:
    """One presented triplet. ``codes[label]`` is the odd one out."""

    codes: np.ndarray            # (3, d) in presentation order
    label: int
    spec: TripletSpec
    images: np.ndarray | None = field(default=None, repr=False)

    @property
    def ooo_position(self) -> int:
        return self.label


@dataclass
class Pair:
    codes: np.ndarray            # (2, d)
    n_differing: int
    images: np.ndarray | None = field(default=None, repr=False)


@dataclass
class TripletBatch:
    codes: np.ndarray            # (n, 3, d) in presentation order
    labels: np.ndarray           # (n,) position of the odd one out
    k: np.ndarray                # (n,)
    S_mask: np.ndarray           # (n, d) bool, factors resampled between z1 and z2

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, i) -> Triplet:
        S = tuple(np.flatnonzero(self.S_mask[i]).tolist())
        R = tuple(np.flatnonzero(~self.S_mask[i]).tolist())
        return Triplet(self.codes[i], int(self.labels[i]), TripletSpec(int(self.k[i]), S, R))


@dataclass
class PairBatch:
    codes: np.ndarray            # (n, 2, d)
    n_differing: np.ndarray      # (n,)

    def __len__(self):
        return len(self.n_differing)


def max_k(d: int) -> int:
    """Largest k with d - k > k."""
    return (d - 1) // 2


def _check_space(space: FactorSpace):
    if any(c < 2 for c in space.cardinalities):
        raise ConfigurationError("a factor with one value cannot be resampled to differ")


def _resample_to_differ(rng, values: np.ndarray, cards: np.ndarray, mask: np.ndarray):
    # uniform over the card-1 other values; same law as rejecting the original
    shift = 1 + np.floor(rng.random(values.shape) * (cards - 1)).astype(np.int64)
    return np.where(mask, (values + shift) % cards, values)


def _random_subset_masks(rng, n: int, d: int, k: np.ndarray) -> np.ndarray:
    ranks = np.argsort(np.argsort(rng.random((n, d)), axis=1), axis=1)
    return ranks < k[:, None]


def sample_triplets(rng: np.random.Generator, n: int, space: FactorSpace = DEFAULT_SPACE,
                    fixed_k: int | None = None) -> TripletBatch:
    _check_space(space)
    d = space.d
    top = max_k(d)
    if top < 1:
        raise ConfigurationError(f"d={d} admits no k with d - k > k")
    if fixed_k is not None and not 1 <= fixed_k <= top:
        raise ContractViolation(f"fixed_k must lie in [1, {top}] for d={d}")
    cards = space.cards
    z1 = sample_factors(rng, space, n)
    if fixed_k is None:
        k = rng.integers(1, top + 1, size=n)
    else:
        k = np.full(n, fixed_k, dtype=np.int64)
    S = _random_subset_masks(rng, n, d, k)
    z2 = _resample_to_differ(rng, z1, cards, S)
    z3 = _resample_to_differ(rng, z1, cards, ~S)
    ordered = np.stack([z1, z2, z3], axis=1)
    perm = np.argsort(rng.random((n, 3)), axis=1)
    codes = np.take_along_axis(ordered, perm[:, :, None], axis=1)
    labels = np.argmax(perm == 2, axis=1)
    return TripletBatch(codes, labels, k, S)


def sample_triplet(rng: np.random.Generator, space: FactorSpace = DEFAULT_SPACE,
                   fixed_k: int | None = None, render: bool = True) -> Triplet:
    triplet = sample_triplets(rng, 1, space, fixed_k)[0]
    if render:
        triplet.images = render_batch(triplet.codes)
    return triplet


def sample_pairs(rng: np.random.Generator, n: int, space: FactorSpace = DEFAULT_SPACE) -> PairBatch:
    """Pairs whose second element resamples k ~ unif{1..d-1} factors of the first."""
    _check_space(space)
    d = space.d
    z1 = sample_factors(rng, space, n)
    k = rng.integers(1, d, size=n)
    mask = _random_subset_masks(rng, n, d, k)
    z2 = _resample_to_differ(rng, z1, space.cards, mask)
    return PairBatch(np.stack([z1, z2], axis=1), k)


def sample_pair(rng: np.random.Generator, space: FactorSpace = DEFAULT_SPACE,
                render: bool = True) -> Pair:
    batch = sample_pairs(rng, 1, space)
    pair = Pair(batch.codes[0], int(batch.n_differing[0]))
    if render:
        pair.images = render_batch(pair.codes)
    return pair


# ------------------------------------------------------------- binary dataset

_HEADER = struct.Struct("<IIIII")


def write_triplet_file(path, rng: np.random.Generator, n: int, fixed_k=None,
                       chunk: int = 1024) -> Path:
    """Little-endian: header (d, n, h, w, c) as u32, then per triplet
    3 images as f32, 3*d factor codes as u16, label as u8."""
    space = DEFAULT_SPACE
    h, w, c = IMAGE_SHAPE
    d = space.d
    record = np.dtype([("images", "<f4", (3, h, w, c)), ("codes", "<u2", (3, d)), ("label", "u1")])
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(d, n, h, w, c))
        done = 0
        while done < n:
            m = min(chunk, n - done)
            batch = sample_triplets(rng, m, space, fixed_k)
            rec = np.zeros(m, dtype=record)
            rec["images"] = render_batch(batch.codes.reshape(-1, d)).reshape(m, 3, h, w, c)
            rec["codes"] = batch.codes
            rec["label"] = batch.labels
            fh.write(rec.tobytes())
            done += m
    return path


def read_triplet_file(path):
    """Returns (images f32 (n,3,h,w,c), codes u16 (n,3,d), labels u8 (n,))."""
    data = Path(path).read_bytes()
    d, n, h, w, c = _HEADER.unpack_from(data)
    record = np.dtype([("images", "<f4", (3, h, w, c)), ("codes", "<u2", (3, d)), ("label", "u1")])
    body = data[_HEADER.size:]
    if len(body) != n * record.itemsize:
        raise ContractViolation("triplet file length does not match its header")
    rec = np.frombuffer(body, dtype=record)
    return rec["images"], rec["codes"], rec["label"]
