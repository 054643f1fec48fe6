"""VAE model zoo: beta-VAE, beta-TCVAE, Ada-GVAE and the odd-one-out triplet VAE.

All models share one MLP encoder/decoder pair with a Bernoulli-logit decoder.
Losses are minimised (negated evidence bounds) and averaged over the batch;
the triplet VAE sums the three per-image bounds of a triplet before averaging.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import gradcore as gc
from .errors import ConfigurationError, ContractViolation, NumericFailure
from .synthdata import DEFAULT_SPACE, IMAGE_SIZE, flat_images, sample_factors
from .weaksampler import sample_pairs, sample_triplets

KINDS = ("vae", "beta_vae", "beta_tcvae", "ada_gvae", "tvae")
SWEEP_HYPERS = {
    "vae": (1.0,),
    "beta_vae": (1.0, 6.0, 16.0),
    "beta_tcvae": (2.0, 6.0, 16.0),
    "ada_gvae": (1.0, 6.0, 16.0),
    "tvae": (1.0, 6.0, 16.0),
}
# images per observation; batch_size counts images, so every kind sees the
# same number of images per step
GROUP_SIZE = {"vae": 1, "beta_vae": 1, "beta_tcvae": 1, "ada_gvae": 2, "tvae": 3}
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass
class ModelConfig:
    kind: str = "vae"
    beta: float = 1.0
    gamma: float = 0.0
    seed: int = 0
    steps: int = 0
    n_latent: int = 10
    input_dim: int = IMAGE_SIZE
    enc_hidden: tuple = (256, 128)
    dec_hidden: tuple = (128, 256)
    batch_size: int = 64
    lr: float = 1e-3
    dataset_size: int = DEFAULT_SPACE.size
    triplet_term: str = "mean"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown model kind {self.kind!r}")
        self.enc_hidden = tuple(self.enc_hidden)
        self.dec_hidden = tuple(self.dec_hidden)
        if self.triplet_term not in ("mean", "sample"):
            raise ConfigurationError("triplet_term must be 'mean' or 'sample'")

    @property
    def hyper(self) -> float:
        return self.gamma if self.kind == "tvae" else self.beta

    def to_dict(self) -> dict:
        d = asdict(self)
        d["enc_hidden"] = list(self.enc_hidden)
        d["dec_hidden"] = list(self.dec_hidden)
        return d


@dataclass
class LatentGaussian:
    mean: np.ndarray
    logvar: np.ndarray

    @property
    def variance(self):
        return np.exp(self.logvar)


@dataclass
class ModelCheckpoint:
    config: ModelConfig
    encoder: list
    decoder: list
    loss_trace: list = field(default_factory=list)

    @classmethod
    def initialise(cls, config: ModelConfig, rng=None) -> "ModelCheckpoint":
        rng = np.random.default_rng([config.seed, 0]) if rng is None else rng
        enc_widths = (config.input_dim, *config.enc_hidden, 2 * config.n_latent)
        dec_widths = (config.n_latent, *config.dec_hidden, config.input_dim)
        return cls(config, gc.init_mlp(rng, enc_widths, prefix="enc"),
                   gc.init_mlp(rng, dec_widths, prefix="dec"))

    @property
    def kind(self):
        return self.config.kind

    @property
    def params(self) -> list:
        return gc.flatten_params(self.encoder) + gc.flatten_params(self.decoder)

    def posterior(self, x) -> tuple:
        """(mean, logvar) tensors for a batch of flattened images."""
        x = gc.as_tensor(x)
        if x.shape[-1] != self.config.input_dim:
            raise ContractViolation(
                f"expected inputs of width {self.config.input_dim}, got {x.shape[-1]}")
        h = gc.mlp_apply(self.encoder, x)
        n = self.config.n_latent
        return h[:, :n], h[:, n:]

    def decode_logits(self, z):
        return gc.mlp_apply(self.decoder, z)

    def encode_mean(self, x: np.ndarray, chunk: int = 4096) -> np.ndarray:
        """Posterior means without recording a graph."""
        x = np.atleast_2d(x)
        n = self.config.n_latent
        return np.concatenate([gc.mlp_forward_values(self.encoder, x[i:i + chunk])[:, :n]
                               for i in range(0, len(x), chunk)])


def encode(ckpt: ModelCheckpoint, x) -> LatentGaussian:
    x = np.asarray(x, dtype=np.float64).reshape(-1, ckpt.config.input_dim)
    h = gc.mlp_forward_values(ckpt.encoder, x)
    n = ckpt.config.n_latent
    return LatentGaussian(h[:, :n], h[:, n:])


# --------------------------------------------------------------------- pieces


def _check_finite(t: gc.Tensor, what: str):
    if not np.isfinite(t.value).all():
        raise NumericFailure(f"non-finite {what}", node_id=t.id)
    return t


bernoulli_loglik = gc.bernoulli_loglik


def gaussian_kl(mean, logvar) -> gc.Tensor:
    """Per-row KL(N(mean, exp(logvar)) || N(0, I)) in closed form."""
    return 0.5 * (gc.square(mean) + gc.exp(logvar) - 1.0 - logvar).sum(axis=1)


def reparameterize(mean, logvar, eps) -> gc.Tensor:
    return mean + gc.exp(0.5 * logvar) * eps


def _draw(rng, shape, eps):
    return rng.standard_normal(shape) if eps is None else np.asarray(eps, dtype=np.float64)


def elbo_terms(ckpt, x, eps):
    """(reconstruction, KL, sample, mean, logvar) per row."""
    mean, logvar = ckpt.posterior(x)
    z = reparameterize(mean, logvar, eps)
    recon = bernoulli_loglik(ckpt.decode_logits(z), x)
    return recon, gaussian_kl(mean, logvar), z, mean, logvar


def elbo_loss(ckpt: ModelCheckpoint, x, beta: float = 1.0, rng=None, eps=None):
    """Batch-mean (reconstruction log-likelihood, KL); the loss is -recon + beta*KL."""
    if beta < 1:
        raise ContractViolation("beta must be at least 1")
    x = np.atleast_2d(x)
    e = _draw(rng, (len(x), ckpt.config.n_latent), eps)
    recon, kl, *_ = elbo_terms(ckpt, x, e)
    return _check_finite(recon.mean(), "reconstruction"), _check_finite(kl.mean(), "KL")


def beta_vae_loss(ckpt, x, beta, rng=None, eps=None) -> gc.Tensor:
    recon, kl = elbo_loss(ckpt, x, beta, rng, eps)
    return kl * beta - recon


# ------------------------------------------------------------ total correlation


def gaussian_log_density(z, mean, logvar) -> gc.Tensor:
    return -0.5 * (_LOG_2PI + logvar + gc.square(z - mean) * gc.exp(-logvar))


def mws_log_weights(batch_size: int, dataset_size: int) -> np.ndarray:
    """Minibatch weighted sampling log-weights; each row sums to one.

    The sample's own posterior is weighted 1/N and every other batch member
    (N-1)/(N(M-1)), which keeps the estimate of q(z) normalised.
    """
    m, n = batch_size, dataset_size
    w = np.full((m, m), (n - 1) / (n * (m - 1)))
    np.fill_diagonal(w, 1.0 / n)
    return np.log(w)


def tc_penalty(z, mean, logvar, dataset_size: int) -> gc.Tensor:
    """Minibatch estimate of the total correlation of the aggregate posterior.

    ``z`` holds one sample per row drawn from the posterior of that row.
    """
    z, mean, logvar = gc.as_tensor(z), gc.as_tensor(mean), gc.as_tensor(logvar)
    m = z.shape[0]
    if m < 2:
        raise ContractViolation("total correlation needs a batch of at least 2")
    logw = mws_log_weights(m, dataset_size)
    # log q(z_i | x_j) per dimension: (M, M, L)
    lq = gaussian_log_density(gc.expand_dims(z, 1), gc.expand_dims(mean, 0),
                              gc.expand_dims(logvar, 0))
    joint = gc.logsumexp(lq.sum(axis=2) + logw, axis=1)
    marginals = gc.logsumexp(lq + logw[:, :, None], axis=1).sum(axis=1)
    return (joint - marginals).mean()


def beta_tcvae_loss(ckpt, x, beta, rng=None, eps=None, dataset_size=None) -> gc.Tensor:
    x = np.atleast_2d(x)
    e = _draw(rng, (len(x), ckpt.config.n_latent), eps)
    recon, kl, z, mean, logvar = elbo_terms(ckpt, x, e)
    n = ckpt.config.dataset_size if dataset_size is None else dataset_size
    tc = tc_penalty(z, mean, logvar, n)
    return _check_finite(kl.mean() - recon.mean() + (beta - 1.0) * tc, "beta-TCVAE loss")


# ------------------------------------------------------------------ Ada-GVAE


def symmetric_kl_per_dim(m1, lv1, m2, lv2) -> np.ndarray:
    v1, v2 = np.exp(lv1), np.exp(lv2)
    d2 = (m1 - m2) ** 2
    kl12 = 0.5 * (lv2 - lv1 + (v1 + d2) / v2 - 1.0)
    kl21 = 0.5 * (lv1 - lv2 + (v2 + d2) / v1 - 1.0)
    return 0.5 * (kl12 + kl21)


def adagvae_shared_mask(m1, lv1, m2, lv2) -> np.ndarray:
    """True where a dimension is inferred shared: divergence at or below
    the midpoint of the per-pair max and min divergence."""
    delta = symmetric_kl_per_dim(m1, lv1, m2, lv2)
    tau = 0.5 * (delta.max(axis=-1, keepdims=True) + delta.min(axis=-1, keepdims=True))
    return delta <= tau


def adagvae_loss(ckpt: ModelCheckpoint, x1, x2, beta: float = 1.0, rng=None, eps=None) -> gc.Tensor:
    """Mean of the two beta-ELBO losses after averaging shared-dimension posteriors.

    ``eps`` optionally supplies the (2, B, L) reparameterisation noise.
    """
    x1, x2 = np.atleast_2d(x1), np.atleast_2d(x2)
    b, n = len(x1), ckpt.config.n_latent
    e = _draw(rng, (2, b, n), eps)
    mean, logvar = ckpt.posterior(np.concatenate([x1, x2]))
    m1, m2 = mean[:b], mean[b:]
    lv1, lv2 = logvar[:b], logvar[b:]
    shared = adagvae_shared_mask(m1.value, lv1.value, m2.value, lv2.value).astype(np.float64)
    own = 1.0 - shared
    avg_mean = 0.5 * (m1 + m2)
    avg_logvar = gc.log(0.5 * (gc.exp(lv1) + gc.exp(lv2)))
    total = 0.0
    for x, m, lv, ei in ((x1, m1, lv1, e[0]), (x2, m2, lv2, e[1])):
        mm = shared * avg_mean + own * m
        mlv = shared * avg_logvar + own * lv
        z = reparameterize(mm, mlv, ei)
        recon = bernoulli_loglik(ckpt.decode_logits(z), x)
        total = total + (beta * gaussian_kl(mm, mlv) - recon).mean()
    return _check_finite(0.5 * total, "Ada-GVAE loss")


# ------------------------------------------------------------- odd-one-out


def _sqdist(a, b) -> gc.Tensor:
    return gc.square(a - b).sum(axis=-1)


def triplet_ooo_loglik(zi, zj, zk) -> gc.Tensor:
    """log p(k is the odd one out) under two probit distance constraints.

    Works on single vectors or on batches (last axis is the latent). The
    likelihood is Phi(d_ik^2 - d_ij^2) * Phi(d_jk^2 - d_ij^2) with Euclidean d.
    """
    zi, zj, zk = gc.as_tensor(zi), gc.as_tensor(zj), gc.as_tensor(zk)
    if not zi.shape == zj.shape == zk.shape:
        raise ContractViolation("latent vectors differ in shape")
    dij = _sqdist(zi, zj)
    return (gc.log_std_normal_cdf(_sqdist(zi, zk) - dij)
            + gc.log_std_normal_cdf(_sqdist(zj, zk) - dij))


def ooo_roles(labels: np.ndarray):
    """Presentation positions (i, j, k) with k the odd one and i < j."""
    labels = np.asarray(labels)
    i = np.where(labels == 0, 1, 0)
    j = np.where(labels == 2, 1, 2)
    return i, j, labels


def tvae_loss(ckpt: ModelCheckpoint, images, labels, gamma: float, rng=None, eps=None,
              return_parts=False):
    """Negated triplet bound for a batch of presented triplets.

    ``images`` is (B, 3, input_dim) in presentation order and ``labels`` the
    odd one's position.  Each position is encoded and decoded exactly as
    :func:`elbo_loss` would with noise drawn position by position, so at
    gamma=0 the loss equals the sum of the three plain ELBO losses.
    """
    if gamma < 0:
        raise ContractViolation("gamma must be non-negative")
    images = np.asarray(images, dtype=np.float64)
    b, n = images.shape[0], ckpt.config.n_latent
    labels = np.asarray(labels, dtype=np.int64).reshape(b)
    if eps is None:
        eps = np.stack([rng.standard_normal((b, n)) for _ in range(3)])
    x = np.concatenate([images[:, p] for p in range(3)])
    recon, kl, z, mean, _ = elbo_terms(ckpt, x, eps.reshape(3 * b, n))
    per_pos = (kl - recon).reshape((3, b)).mean(axis=1)
    elbo_part = per_pos.sum()
    emb = (mean if ckpt.config.triplet_term == "mean" else z).reshape((3, b, n))
    i, j, k = ooo_roles(labels)
    cols = np.arange(b)
    loglik = triplet_ooo_loglik(emb[i, cols], emb[j, cols], emb[k, cols]).mean()
    loss = _check_finite(elbo_part - gamma * loglik, "TVAE loss")
    if return_parts:
        return loss, elbo_part, loglik
    return loss


def heldout_triplet_loglik(ckpt: ModelCheckpoint, codes: np.ndarray, labels: np.ndarray) -> float:
    """Mean log-likelihood of the true odd one on pre-sampled triplets, from means."""
    b, _, d = codes.shape
    mu = ckpt.encode_mean(flat_images(codes.reshape(-1, d))).reshape(b, 3, -1)
    i, j, k = ooo_roles(labels)
    cols = np.arange(b)
    return float(triplet_ooo_loglik(mu[cols, i], mu[cols, j], mu[cols, k]).value.mean())


# ------------------------------------------------------------------ training


def check_hyper(kind: str, hyper: float):
    if kind not in SWEEP_HYPERS:
        raise ConfigurationError(f"unknown model kind {kind!r}")
    if float(hyper) not in SWEEP_HYPERS[kind]:
        raise ConfigurationError(
            f"{kind} hyperparameter {hyper} outside sweep set {SWEEP_HYPERS[kind]}")


def make_config(kind: str, hyper: float, seed: int, steps: int, **overrides) -> ModelConfig:
    if kind == "tvae":
        return ModelConfig(kind=kind, beta=1.0, gamma=float(hyper), seed=seed, steps=steps, **overrides)
    return ModelConfig(kind=kind, beta=float(hyper), seed=seed, steps=steps, **overrides)


def batch_loss(ckpt: ModelCheckpoint, rng: np.random.Generator, render=flat_images) -> gc.Tensor:
    """Draw one training batch for the model's kind and return its loss."""
    cfg = ckpt.config
    bs = cfg.batch_size // GROUP_SIZE[cfg.kind]
    if cfg.kind in ("vae", "beta_vae"):
        return beta_vae_loss(ckpt, render(sample_factors(rng, n=bs)), cfg.beta, rng)
    if cfg.kind == "beta_tcvae":
        return beta_tcvae_loss(ckpt, render(sample_factors(rng, n=bs)), cfg.beta, rng)
    if cfg.kind == "ada_gvae":
        pairs = sample_pairs(rng, bs)
        x = render(pairs.codes.reshape(-1, pairs.codes.shape[-1])).reshape(bs, 2, -1)
        return adagvae_loss(ckpt, x[:, 0], x[:, 1], cfg.beta, rng)
    trip = sample_triplets(rng, bs)
    x = render(trip.codes.reshape(-1, trip.codes.shape[-1])).reshape(bs, 3, -1)
    return tvae_loss(ckpt, x, trip.labels, cfg.gamma, rng)


def train(kind: str, hyper: float, seed: int, steps: int, render=flat_images,
          strict=True, progress=None, **overrides) -> ModelCheckpoint:
    """Train one model from scratch; deterministic given ``seed``.

    ``render`` maps (n, d) factor codes to (n, input_dim) rows, so tests can
    swap in a tiny synthetic observation model.
    """
    if strict:
        check_hyper(kind, hyper)
    cfg = make_config(kind, hyper, seed, steps, **overrides)
    ckpt = ModelCheckpoint.initialise(cfg)
    rng = np.random.default_rng([seed, 1])
    params = ckpt.params
    opt = gc.Adam(params, lr=cfg.lr)
    for step in range(steps):
        try:
            loss = batch_loss(ckpt, rng, render)
            grads = gc.forward_backward(loss)
        except NumericFailure as exc:
            raise NumericFailure(f"training diverged: {exc}", step=step) from exc
        opt.step([grads.get(p, np.zeros(p.shape)) for p in params])
        ckpt.loss_trace.append(float(loss.value))
        if progress is not None:
            progress(step, float(loss.value))
    return ckpt
