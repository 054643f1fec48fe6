"""Disentanglement metrics over factor-code representations.

A *representation* is any callable mapping an (n, d) array of factor codes to
(n, L) features.  :class:`CheckpointRepresentation` renders and encodes with a
trained model (posterior means); the other classes are reference encoders
used for calibration.
"""

from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .classifiers import accuracy, fit_logistic, fit_mlp, importances
from .errors import ContractViolation, DegenerateEncoderError, UndefinedCorrelationError
from .synthdata import DEFAULT_SPACE, FactorSpace, flat_images, flat_index, sample_factors
from .weaksampler import sample_triplets


@dataclass(frozen=True)
class MetricConfig:
    m_train: int = 10_000
    m_test: int = 5_000
    mlp_hidden: int = 256
    mlp_epochs: int = 30
    mlp_batch: int = 128
    augment_orders: bool = True
    beta_batch: int = 64
    factor_batch: int = 64
    std_samples: int = 10_000
    prune_std: float = 0.05
    logistic_epochs: int = 500
    dci_l1: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.m_train < 1 or self.m_test < 1:
            raise ContractViolation("m_train and m_test must be at least 1")

    def rng(self, stream: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, stream])


# --------------------------------------------------------- representations


class CheckpointRepresentation:
    """Posterior means of a checkpoint, cached per factor combination."""

    def __init__(self, ckpt, space: FactorSpace = DEFAULT_SPACE, chunk=4096):
        self.ckpt, self.space, self.chunk = ckpt, space, chunk
        self.width = ckpt.config.n_latent
        self._table = np.empty((space.size, self.width))
        self._filled = np.zeros(space.size, dtype=bool)

    def fill_all(self):
        self._fill(np.arange(self.space.size))

    def _fill(self, idx):
        missing = np.unique(idx[~self._filled[idx]])
        for start in range(0, len(missing), self.chunk):
            part = missing[start:start + self.chunk]
            codes = np.stack(np.unravel_index(part, self.space.cardinalities), axis=1)
            self._table[part] = self.ckpt.encode_mean(flat_images(codes))
            self._filled[part] = True

    def __call__(self, codes):
        idx = flat_index(codes, self.space)
        self._fill(idx)
        return self._table[idx]


class IdentityRepresentation:
    """Raw integer codes plus small Gaussian noise."""

    def __init__(self, noise=0.01, seed=0):
        self.noise = noise
        self.rng = np.random.default_rng(seed)

    def __call__(self, codes):
        codes = np.asarray(codes, dtype=np.float64)
        return codes + self.noise * self.rng.standard_normal(codes.shape)


class OneHotRepresentation:
    """Each factor one-hot encoded, concatenated."""

    def __init__(self, space: FactorSpace = DEFAULT_SPACE):
        self.offsets = np.concatenate([[0], np.cumsum(space.cardinalities)[:-1]])
        self.width = int(sum(space.cardinalities))

    def __call__(self, codes):
        codes = np.asarray(codes, dtype=np.int64)
        out = np.zeros((len(codes), self.width))
        np.put_along_axis(out, codes + self.offsets, 1.0, axis=1)
        return out


class ConstantRepresentation:
    def __init__(self, width=10, value=0.5):
        self.width, self.value = width, value

    def __call__(self, codes):
        return np.full((len(codes), self.width), self.value)


def _features(rep, codes):
    feats = np.asarray(rep(codes), dtype=np.float64)
    if feats.ndim != 2 or len(feats) != len(codes):
        raise ContractViolation("representation returned the wrong number of rows")
    return feats


# ----------------------------------------------------------------- scores


_ORDERS = np.array(list(itertools.permutations(range(3))))


def all_orders(feats, labels):
    """Every presentation order of each (n, 3, L) triplet, label moved along."""
    n = len(feats)
    X = np.concatenate([feats[:, p].reshape(n, -1) for p in _ORDERS])
    y = np.concatenate([np.argmax(p[None] == labels[:, None], axis=1) for p in _ORDERS])
    return X, y


def triplet_score(rep, cfg: MetricConfig = MetricConfig(), space: FactorSpace = DEFAULT_SPACE,
                  return_classifier=False):
    """Held-out accuracy of an MLP predicting the odd-one-out position.

    Training triplets are shown to the classifier in all six presentation
    orders; test triplets keep their sampled order.
    """
    n = cfg.m_train + cfg.m_test
    trip = sample_triplets(cfg.rng(10), n, space)
    if trip.codes.shape[-1] != space.d:
        raise ContractViolation("sampler and factor space disagree")
    feats = _features(rep, trip.codes.reshape(-1, space.d)).reshape(n, 3, -1)
    tr, te = slice(0, cfg.m_train), slice(cfg.m_train, n)
    if cfg.augment_orders:
        X, y = all_orders(feats[tr], trip.labels[tr])
    else:
        X, y = feats[tr].reshape(cfg.m_train, -1), trip.labels[tr]
    clf = fit_mlp(X, y, hidden_width=cfg.mlp_hidden, epochs=cfg.mlp_epochs,
                  batch_size=cfg.mlp_batch, seed=cfg.seed, n_classes=3)
    score = accuracy(clf, feats[te].reshape(cfg.m_test, -1), trip.labels[te])
    return (score, clf) if return_classifier else score


def _beta_points(rep, rng, n, batch, space):
    factors = rng.integers(0, space.d, n)
    a = sample_factors(rng, space, n * batch).reshape(n, batch, space.d)
    b = sample_factors(rng, space, n * batch).reshape(n, batch, space.d)
    rows = np.arange(n)
    b[rows, :, factors] = a[rows, :, factors]
    fa = _features(rep, a.reshape(-1, space.d))
    fb = _features(rep, b.reshape(-1, space.d))
    diff = np.abs(fa - fb).reshape(n, batch, -1).mean(axis=1)
    return diff, factors


def beta_vae_score(rep, cfg: MetricConfig = MetricConfig(), space: FactorSpace = DEFAULT_SPACE):
    """Linear-probe accuracy of recovering which factor a batch of pairs shares."""
    rng = cfg.rng(20)
    Xtr, ytr = _beta_points(rep, rng, cfg.m_train, cfg.beta_batch, space)
    Xte, yte = _beta_points(rep, rng, cfg.m_test, cfg.beta_batch, space)
    if len(np.unique(ytr)) < 2:
        return float(np.mean(yte == ytr[0]))
    clf = fit_logistic(Xtr, ytr, epochs=cfg.logistic_epochs, seed=cfg.seed, n_classes=space.d)
    return accuracy(clf, Xte, yte)


def _factor_votes(feats_of, rng, n, batch, space, keep, std):
    factors = rng.integers(0, space.d, n)
    codes = sample_factors(rng, space, n * batch).reshape(n, batch, space.d)
    fixed = rng.integers(0, space.cards[factors])
    codes[np.arange(n), :, factors] = fixed[:, None]
    z = feats_of(codes.reshape(-1, space.d))[:, keep] / std[keep]
    var = z.reshape(n, batch, -1).var(axis=1, ddof=1)
    return np.argmin(var, axis=1), factors


def factor_vae_score(rep, cfg: MetricConfig = MetricConfig(), space: FactorSpace = DEFAULT_SPACE):
    """Majority-vote accuracy of mapping the least-varying latent to the fixed factor."""
    rng = cfg.rng(30)
    feats_of = lambda c: _features(rep, c)  # noqa: E731
    std = feats_of(sample_factors(rng, space, cfg.std_samples)).std(axis=0, ddof=1)
    keep = np.flatnonzero(std >= cfg.prune_std)
    if len(keep) == 0:
        raise DegenerateEncoderError("every latent has std below the pruning threshold")
    dims, facs = _factor_votes(feats_of, rng, cfg.m_train, cfg.factor_batch, space, keep, std)
    table = np.zeros((len(keep), space.d), dtype=np.int64)
    np.add.at(table, (dims, facs), 1)
    assign = np.argmax(table, axis=1)
    dims, facs = _factor_votes(feats_of, rng, cfg.m_test, cfg.factor_batch, space, keep, std)
    return float(np.mean(assign[dims] == facs))


def dci_from_importance(R) -> float:
    """Importance-weighted mean of 1 - entropy (base n_factors) per latent row."""
    R = np.abs(np.asarray(R, dtype=np.float64))
    if R.ndim != 2 or R.shape[1] < 2:
        raise ContractViolation("importance matrix must be (n_latent, n_factors >= 2)")
    total = R.sum()
    if total == 0:
        raise DegenerateEncoderError("importance matrix is all zero")
    rows = R.sum(axis=1)
    live = rows > 0
    P = R[live] / rows[live, None]
    K = R.shape[1]
    # 1 - H(p)/log K written as sum p log(K p) / log K: exact for one-hot and uniform rows
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, P * np.log(K * P), 0.0)
    row_score = terms.sum(axis=1) / np.log(K)
    return float(np.clip(np.sum(rows[live] * row_score) / total, 0.0, 1.0))


def dci_disentanglement(rep, cfg: MetricConfig = MetricConfig(), space: FactorSpace = DEFAULT_SPACE):
    rng = cfg.rng(40)
    codes = sample_factors(rng, space, cfg.m_train)
    feats = _features(rep, codes)
    fitted = []
    for f in range(space.d):
        fitted.append(fit_logistic(feats, codes[:, f], l1_weight=cfg.dci_l1,
                                   epochs=cfg.logistic_epochs, seed=cfg.seed,
                                   n_classes=space.cardinalities[f]))
    try:
        R = importances(fitted)
    except Exception as exc:
        raise DegenerateEncoderError(f"degenerate importances: {exc}") from exc
    return dci_from_importance(R)


def spearman(a, b) -> float:
    """Pearson correlation of average ranks (ties share their mean rank)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 3:
        raise ContractViolation("spearman needs two equal-length sequences of length >= 3")
    ra, rb = rankdata(a), rankdata(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = np.sqrt((ra ** 2).sum() * (rb ** 2).sum())
    if denom == 0:
        raise UndefinedCorrelationError("a sequence has zero rank variance")
    return float(np.clip((ra * rb).sum() / denom, -1.0, 1.0))


METRICS = {
    "beta_vae": beta_vae_score,
    "factor_vae": factor_vae_score,
    "dci": dci_disentanglement,
    "triplet": triplet_score,
}


def evaluate(rep, cfg: MetricConfig = MetricConfig(), names=tuple(METRICS),
             space: FactorSpace = DEFAULT_SPACE) -> dict:
    return {name: float(METRICS[name](rep, cfg, space)) for name in names}


def evaluate_checkpoint(ckpt, cfg: MetricConfig = MetricConfig(), model_id=None,
                        names=tuple(METRICS)) -> dict:
    rep = CheckpointRepresentation(ckpt)
    return {
        "model_id": model_id or f"{ckpt.config.kind}_s{ckpt.config.seed}",
        "config": {"model": ckpt.config.to_dict(), "metrics": asdict(cfg)},
        "scores": evaluate(rep, cfg, names),
    }
