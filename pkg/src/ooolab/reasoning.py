"""Procedural mini-RPM puzzles and a Wild Relation Network scorer.

A puzzle is a 3x3 grid of factor vectors with the last cell missing.  One to
three *relation factors* are held constant along each row; every other factor
is free.  The six candidate answers contain the one completion that keeps all
row relations, and five distractors that each break at least one of them.

Panels are embedded by a frozen source (normalized ground-truth codes or a
checkpoint's posterior means) or by an MLP encoder trained jointly on pixels.
Each embedding gets a one-hot position tag (8 context slots plus one
candidate slot).  For candidate ``k`` the score is
``f(sum over ordered pairs (x, y) of g(x, y))`` over the 9 tagged panels,
self-pairs included.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import gradcore as gc
from .errors import ConfigurationError, ContractViolation, GenerationError, NumericFailure
from .synthdata import DEFAULT_SPACE, FactorSpace, flat_images

N_CONTEXT, N_ANSWERS = 8, 6
N_TAGS = N_CONTEXT + 1


@dataclass
class RpmPuzzle:
    context: np.ndarray      # (8, d) codes, row-major grid order
    answers: np.ndarray      # (6, d)
    correct: int
    relations: list          # [(factor, "constant"), ...]

    @property
    def relation_factors(self):
        return [f for f, _ in self.relations]

    def satisfies(self, panel) -> bool:
        row = self.context[6:8]
        return all(row[0, f] == panel[f] and row[1, f] == panel[f]
                   for f in self.relation_factors)

    def images(self):
        return flat_images(np.concatenate([self.context, self.answers]))


@dataclass
class RpmBatch:
    context: np.ndarray      # (n, 8, d)
    answers: np.ndarray      # (n, 6, d)
    correct: np.ndarray      # (n,)
    relation_mask: np.ndarray  # (n, d) bool

    def __len__(self):
        return len(self.correct)

    def __getitem__(self, i) -> RpmPuzzle:
        rel = [(int(f), "constant") for f in np.flatnonzero(self.relation_mask[i])]
        return RpmPuzzle(self.context[i], self.answers[i], int(self.correct[i]), rel)


def _row_constant(grid, n_rows):
    """(n, d) mask: factor constant along each of the first n_rows rows of a (n, 3, 3, d) grid."""
    ok = None
    for r in range(n_rows):
        row = grid[:, r]
        c = (row[:, 0] == row[:, 1]) & (row[:, 1] == row[:, 2])
        ok = c if ok is None else ok & c
    return ok


def generate_rpm_batch(rng: np.random.Generator, n: int,
                       space: FactorSpace = DEFAULT_SPACE, max_tries=1000) -> RpmBatch:
    d, cards = space.d, space.cards
    if d < 2:
        raise ConfigurationError("puzzles need at least two factors")
    n_rel = rng.integers(1, min(3, d - 1) + 1, size=n)
    order = np.argsort(rng.random((n, d)), axis=1)
    rel = np.zeros((n, d), dtype=bool)
    np.put_along_axis(rel, order, np.arange(d)[None] < n_rel[:, None], axis=1)

    grid = np.empty((n, 3, 3, d), dtype=np.int64)
    todo = np.arange(n)
    for _ in range(max_tries):
        m = len(todo)
        cells = rng.integers(0, cards, size=(m, 3, 3, d))
        row_vals = rng.integers(0, cards, size=(m, 3, d))
        cells = np.where(rel[todo][:, None, None, :], row_vals[:, :, None, :], cells)
        grid[todo] = cells
        # a free factor must not look like a relation in the visible panels
        visible = _row_constant(cells[:, :2], 2) & (cells[:, 2, 0] == cells[:, 2, 1])
        bad = (visible & ~rel[todo]).any(axis=1)
        todo = todo[bad]
        if len(todo) == 0:
            break
    else:
        raise GenerationError("could not build unambiguous contexts within the retry budget")

    target = grid[:, 2, 2]
    answers = rng.integers(0, cards, size=(n, N_ANSWERS, d))
    correct = rng.integers(0, N_ANSWERS, size=n)
    rows = np.arange(n)
    answers[rows, correct] = target
    third = grid[:, 2, 0]
    for _ in range(max_tries):
        breaks = ((answers != third[:, None]) & rel[:, None]).any(axis=2)
        breaks[rows, correct] = True
        pending = ~breaks
        if not pending.any():
            break
        answers[pending] = rng.integers(0, cards, size=(int(pending.sum()), d))
    else:
        raise GenerationError("could not draw rule-breaking distractors within the retry budget")

    context = grid.reshape(n, 9, d)[:, :8].copy()
    return RpmBatch(context, answers, correct, rel)


def generate_rpm(rng: np.random.Generator, space: FactorSpace = DEFAULT_SPACE) -> RpmPuzzle:
    return generate_rpm_batch(rng, 1, space)[0]


# ------------------------------------------------------------- embeddings


class GroundTruthEmbedding:
    """Factor codes scaled to [0, 1]."""

    trainable = False

    def __init__(self, space: FactorSpace = DEFAULT_SPACE):
        self.scale = space.cards - 1.0
        self.width = space.d
        self.params = []

    def __call__(self, codes):
        return gc.Tensor(np.asarray(codes, dtype=np.float64) / self.scale)


class FrozenEmbedding:
    """Wraps a code -> feature callable, e.g. a checkpoint representation."""

    trainable = False

    def __init__(self, rep, width):
        self.rep, self.width, self.params = rep, width, []

    def __call__(self, codes):
        return gc.Tensor(np.asarray(self.rep(codes), dtype=np.float64))


class ScratchEmbedding:
    """Pixel MLP panel encoder learned jointly with the relation network."""

    trainable = True

    def __init__(self, rng, widths=(3072, 128, 10)):
        self.layers = gc.init_mlp(rng, widths)
        self.params = gc.flatten_params(self.layers)
        self.width = widths[-1]

    def __call__(self, codes):
        return gc.mlp_apply(self.layers, flat_images(codes))


def make_embedding(source: str, rng, space: FactorSpace = DEFAULT_SPACE):
    if source == "gt":
        return GroundTruthEmbedding(space)
    if source == "scratch":
        return ScratchEmbedding(rng)
    if source.startswith("ckpt:"):
        from .checkpoint import load_checkpoint
        from .metrics import CheckpointRepresentation
        ckpt = load_checkpoint(source[len("ckpt:"):])
        return FrozenEmbedding(CheckpointRepresentation(ckpt, space), ckpt.config.n_latent)
    raise ConfigurationError(f"unknown embedding source {source!r}")


# ------------------------------------------------------------------- WReN


@dataclass
class WrenModel:
    g: list
    f: list
    embed_width: int

    @classmethod
    def initialise(cls, rng, embed_width, hidden=256, zero_last=False):
        width = embed_width + N_TAGS
        g = gc.init_mlp(rng, (2 * width, hidden, hidden), prefix="g")
        f = gc.init_mlp(rng, (hidden, hidden, hidden, 1), zero_last=zero_last, prefix="f")
        return cls(g, f, embed_width)

    @property
    def params(self):
        return gc.flatten_params(self.g) + gc.flatten_params(self.f)


def _tags(n):
    t = np.zeros((n, N_TAGS, N_TAGS))
    t[:, np.arange(N_TAGS), np.arange(N_TAGS)] = 1.0
    return t


def wren_scores(model: WrenModel, ctx_emb, ans_emb):
    """Scores (n, 6) from context (n, 8, E) and answer (n, 6, E) embeddings.

    The first g layer is split into the halves acting on x and on y, so pair
    pre-activations are sums of per-panel terms.  Context-context pair sums
    are shared by all six candidates.
    """
    ctx_emb, ans_emb = gc.as_tensor(ctx_emb), gc.as_tensor(ans_emb)
    n, _, E = ctx_emb.shape
    if E != model.embed_width or ans_emb.shape[2] != E:
        raise ContractViolation(f"embedding width {E} does not match model ({model.embed_width})")
    tags = _tags(n)
    ctx = gc.concat([ctx_emb, tags[:, :N_CONTEXT]], axis=2)                         # (n, 8, W)
    ans = gc.concat([ans_emb, np.repeat(tags[:, N_CONTEXT:], N_ANSWERS, axis=1)], axis=2)
    W = E + N_TAGS
    (w1, b1), (w2, b2) = model.g
    wx, wy = w1[:W], w1[W:]
    H = w1.shape[1]

    def proj(x, w):
        m = x.shape[1]
        return (x.reshape(n * m, W) @ w).reshape(n, m, H)

    cx, cy = proj(ctx, wx), proj(ctx, wy)          # (n, 8, H)
    ax, ay = proj(ans, wx), proj(ans, wy)          # (n, 6, H)

    def g_tail(pre):
        shape = pre.shape
        h = gc.relu(pre + b1).reshape(-1, H)
        return gc.relu(h @ w2 + b2).reshape(*shape[:-1], w2.shape[1])

    # context x context: (n, 8, 8, H) summed over both slots
    cc = g_tail(gc.expand_dims(cx, 2) + gc.expand_dims(cy, 1)).sum(axis=(1, 2))     # (n, G)
    # context x answer, answer x context, answer x answer
    ca = g_tail(gc.expand_dims(cx, 1) + gc.expand_dims(ay, 2)).sum(axis=2)          # (n, 6, G)
    ac = g_tail(gc.expand_dims(ax, 2) + gc.expand_dims(cy, 1)).sum(axis=2)          # (n, 6, G)
    aa = g_tail(ax + ay)                                                            # (n, 6, G)
    total = gc.expand_dims(cc, 1) + ca + ac + aa
    G = total.shape[2]
    out = gc.mlp_apply(model.f, total.reshape(n * N_ANSWERS, G))
    return out.reshape(n, N_ANSWERS)


def wren_scores_naive(model: WrenModel, ctx_emb, ans_emb):
    """Direct pair-by-pair evaluation; reference for :func:`wren_scores`."""
    ctx_emb, ans_emb = np.asarray(ctx_emb), np.asarray(ans_emb)
    n = len(ctx_emb)
    (w1, b1), (w2, b2) = [(w.value, b.value) for w, b in model.g]
    eye = np.eye(N_TAGS)
    out = np.empty((n, N_ANSWERS))
    for p in range(n):
        for k in range(N_ANSWERS):
            panels = np.concatenate([ctx_emb[p], ans_emb[p, k:k + 1]])
            objs = np.concatenate([panels, eye], axis=1)
            acc = 0.0
            for i in range(N_TAGS):
                for j in range(N_TAGS):
                    h = np.maximum(np.concatenate([objs[i], objs[j]]) @ w1 + b1, 0)
                    acc = acc + np.maximum(h @ w2 + b2, 0)
            out[p, k] = gc.mlp_forward_values(model.f, acc[None])[0, 0]
    return out


def embed_batch(embed, batch: RpmBatch):
    n, d = batch.context.shape[0], batch.context.shape[2]
    codes = np.concatenate([batch.context, batch.answers], axis=1).reshape(-1, d)
    e = embed(codes).reshape(n, N_CONTEXT + N_ANSWERS, -1)
    return e[:, :N_CONTEXT], e[:, N_CONTEXT:]


def wren_forward(model: WrenModel, embed, puzzle):
    """Six candidate scores for a single puzzle or an (n, 6) array for a batch."""
    single = isinstance(puzzle, RpmPuzzle)
    batch = puzzle if not single else RpmBatch(
        puzzle.context[None], puzzle.answers[None], np.array([puzzle.correct]),
        np.zeros((1, puzzle.context.shape[1]), bool))
    ctx, ans = embed_batch(embed, batch)
    scores = wren_scores(model, ctx, ans).value
    return scores[0] if single else scores


def cross_entropy(scores, correct):
    n = scores.shape[0]
    return (gc.logsumexp(scores, axis=1) - scores[np.arange(n), np.asarray(correct)]).mean()


def evaluate_wren(model, embed, rng, batches=100, batch_size=64, space=DEFAULT_SPACE):
    hits, losses, total = 0, [], 0
    for _ in range(batches):
        b = generate_rpm_batch(rng, batch_size, space)
        ctx, ans = embed_batch(embed, b)
        scores = wren_scores(model, ctx.value, ans.value)
        losses.append(cross_entropy(scores, b.correct).item())
        hits += int((np.argmax(scores.value, axis=1) == b.correct).sum())
        total += len(b)
    return hits / total, float(np.mean(losses))


def train_wren(source, steps, eval_every, seed, batch_size=16, eval_batches=100,
               eval_batch_size=64, lr=3e-4, space=DEFAULT_SPACE, hidden=256):
    """Train on freshly generated puzzles; returns [(step, accuracy, loss), ...].

    Accuracy and loss are measured on ``eval_batches`` fresh batches at step 0
    and every ``eval_every`` steps thereafter.
    """
    if steps < eval_every or eval_every < 1:
        raise ConfigurationError("need steps >= eval_every >= 1")
    init_rng = np.random.default_rng([seed, 50])
    embed = source if callable(source) and not isinstance(source, str) else \
        make_embedding(source, init_rng, space)
    model = WrenModel.initialise(init_rng, embed.width, hidden)
    params = model.params + list(embed.params)
    opt = gc.Adam(params, lr=lr)
    data_rng = np.random.default_rng([seed, 51])
    curve = []

    def record(step):
        eval_rng = np.random.default_rng([seed, 52, step])
        acc, loss = evaluate_wren(model, embed, eval_rng, eval_batches, eval_batch_size, space)
        curve.append((step, acc, loss))

    record(0)
    for step in range(1, steps + 1):
        b = generate_rpm_batch(data_rng, batch_size, space)
        ctx, ans = embed_batch(embed, b)
        loss = cross_entropy(wren_scores(model, ctx, ans), b.correct)
        try:
            grads = gc.forward_backward(loss)
        except NumericFailure as exc:
            raise NumericFailure(f"WReN training diverged: {exc}", step=step) from exc
        opt.step([grads.get(p, np.zeros(p.shape)) for p in params])
        if step % eval_every == 0:
            record(step)
    return curve


def write_curve(curve, path):
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["step", "accuracy", "loss"])
        for step, acc, loss in curve:
            w.writerow([step, format(acc, ".17g"), format(loss, ".17g")])
    tmp.replace(path)
    return path
