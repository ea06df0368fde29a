"""Pseudo-OOD generation in the latent space of an utterance autoencoder.

Pipeline: train an autoencoder on IND utterances; freeze its encoder; train a
latent generator/discriminator pair together with an auxiliary intent
classifier that starts from scratch; push the generator toward latents the
auxiliary classifier finds ambiguous; decode samples to token sequences and
drop anything that overlaps the IND training data.
"""

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from .corpus import PAD_ID, UNK_TOKEN, encode_sequences
from .errors import ConfigError, NumericError
from .numerics import (
    Adam,
    Affine,
    Embedding,
    GRUCell,
    MaskedMean,
    ParamStore,
    Relu,
    Rng,
    Sequential,
    Tanh,
    bce_with_logits,
    cross_entropy,
    neg_entropy,
    softmax,
)

log = logging.getLogger(__name__)

DECODERS = ("nar", "gru")


@dataclass
class PogConfig:
    embed_dim: int = 64
    latent_dim: int = 64
    noise_dim: int = 32
    decoder: str = "nar"
    decoder_hidden: int = 64
    hidden: int = 128
    ae_epochs: int = 10
    ae_lr: float = 2e-3
    ae_batch_size: int = 64
    adv_steps: int = 2000
    adv_batch_size: int = 64
    adv_lr: float = 2e-4
    alpha: float = 1.0
    jaccard_threshold: float = 0.8
    confidence_threshold: float = 0.9
    n_generate: int = 2000
    seed: int = 0

    def validate(self):
        dims = (self.embed_dim, self.latent_dim, self.noise_dim, self.decoder_hidden, self.hidden)
        if min(dims) <= 0:
            raise ConfigError("POG dimensions (including latent_dim) must be positive")
        if self.decoder not in DECODERS:
            raise ConfigError(f"unknown decoder {self.decoder!r}; expected one of {DECODERS}")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if min(self.ae_epochs, self.ae_batch_size, self.adv_batch_size) < 1 or self.adv_steps < 0:
            raise ConfigError("epoch, step and batch counts must be positive")


def _target_mask(lengths, max_len):
    """Positions scored by the reconstruction loss: real tokens plus one PAD
    terminator when the sequence is shorter than ``max_len``."""
    span = np.minimum(np.asarray(lengths) + 1, max_len)
    return np.arange(max_len)[None, :] < span[:, None]


class Autoencoder:
    def __init__(self, cfg, vocab_size, max_len, rng, dtype=np.float32):
        cfg.validate()
        self.cfg, self.vocab_size, self.max_len = cfg, vocab_size, max_len
        self.params = ParamStore(dtype)
        init = rng.child("ae-init")
        p, h = self.params, cfg.decoder_hidden
        self.embed = Embedding(p, "enc.embed", vocab_size, cfg.embed_dim, init)
        self.mean = MaskedMean()
        self.to_latent = Sequential(Affine(p, "enc.proj", cfg.embed_dim, cfg.latent_dim, init), Tanh())
        if cfg.decoder == "nar":
            self.expand = Sequential(Affine(p, "dec.expand", cfg.latent_dim, max_len * h, init), Tanh())
        else:
            self.init_h = Sequential(Affine(p, "dec.h0", cfg.latent_dim, h, init), Tanh())
            self.cell = GRUCell(p, "dec.gru", cfg.latent_dim, h, init)
        self.out = Affine(p, "dec.out", h, vocab_size, init)

    # encoder ---------------------------------------------------------------
    def encode(self, ids, lengths):
        return self.to_latent.forward(self.mean.forward(self.embed.forward(ids), lengths))

    def encode_backward(self, dz):
        self.embed.backward(self.mean.backward(self.to_latent.backward(dz)))

    def encode_all(self, split, batch_size=1024):
        return np.concatenate([
            self.encode(split.ids[i : i + batch_size], split.lengths[i : i + batch_size])
            for i in range(0, len(split), batch_size)
        ])

    # decoder ---------------------------------------------------------------
    def _hidden_states(self, z):
        b, h = z.shape[0], self.cfg.decoder_hidden
        if self.cfg.decoder == "nar":
            return self.expand.forward(z).reshape(b, self.max_len, h)
        self.cell.reset()
        state = self.init_h.forward(z)
        states = []
        for _ in range(self.max_len):
            state = self.cell.forward(z, state)
            states.append(state)
        return np.stack(states, axis=1)

    def _hidden_backward(self, dstates):
        b = dstates.shape[0]
        if self.cfg.decoder == "nar":
            return self.expand.backward(dstates.reshape(b, -1))
        dz = np.zeros((b, self.cfg.latent_dim), dtype=dstates.dtype)
        dstate = np.zeros_like(dstates[:, 0])
        for t in reversed(range(self.max_len)):
            dx, dstate = self.cell.backward(dstate + dstates[:, t])
            dz += dx
        return dz + self.init_h.backward(dstate)

    def decode_logits(self, z):
        """Per-position vocabulary logits ``[B, max_len, V]``."""
        return self.out.forward(self._hidden_states(z))

    def reconstruction_loss(self, ids, lengths, return_grad=False):
        """Mean per-position cross-entropy over real tokens and one terminator."""
        ids = np.asarray(ids)
        z = self.encode(ids, lengths)
        states = self._hidden_states(z)
        mask = _target_mask(lengths, self.max_len)
        rows = states[mask]
        logits = self.out.forward(rows)
        result = cross_entropy(logits, ids[mask], return_grad=return_grad)
        if not return_grad:
            return result
        loss, dlogits = result
        dstates = np.zeros_like(states)
        dstates[mask] = self.out.backward(dlogits)
        self.encode_backward(self._hidden_backward(dstates))
        return loss

    def token_accuracy(self, split, batch_size=256):
        """Fraction of real (non-PAD) tokens reproduced by argmax decoding."""
        hits = total = 0
        for i in range(0, len(split), batch_size):
            ids, lengths = split.ids[i : i + batch_size], split.lengths[i : i + batch_size]
            pred = self.decode_logits(self.encode(ids, lengths)).argmax(axis=-1)
            real = np.arange(self.max_len)[None, :] < lengths[:, None]
            hits += int(np.sum((pred == ids) & real))
            total += int(real.sum())
        return hits / max(total, 1)


def train_autoencoder(split, vocab_size, max_len, cfg, rng=None):
    """Fit an :class:`Autoencoder` on encoded IND utterances.

    Returns ``(autoencoder, per-epoch mean reconstruction losses)``.
    """
    cfg.validate()
    if len(split) == 0:
        raise ValueError("autoencoder needs a nonempty training split")
    rng = rng or Rng(cfg.seed)
    ae = Autoencoder(cfg, vocab_size, max_len, rng)
    opt = Adam(ae.params, lr=cfg.ae_lr)
    shuffle = rng.child("ae-shuffle")
    history = []
    for epoch in range(cfg.ae_epochs):
        order = shuffle.permutation(len(split))
        losses = []
        for start in range(0, len(split), cfg.ae_batch_size):
            batch = split.take(order[start : start + cfg.ae_batch_size])
            ae.params.zero_grad()
            loss = ae.reconstruction_loss(batch.ids, batch.lengths, return_grad=True)
            if not math.isfinite(loss):
                raise NumericError(f"non-finite reconstruction loss in epoch {epoch}")
            opt.step()
            losses.append(loss)
        history.append(float(np.mean(losses)))
        log.info("autoencoder epoch %d loss=%.4f", epoch, history[-1])
    return ae, history


class LatentGAN:
    """Generator, discriminator and auxiliary classifier over latent codes.

    Each component owns a separate :class:`ParamStore` so each can be stepped
    on its own.
    """

    def __init__(self, cfg, num_classes, rng, dtype=np.float32):
        cfg.validate()
        self.cfg, self.K = cfg, num_classes
        h, dz = cfg.hidden, cfg.latent_dim
        self.gen_params = ParamStore(dtype)
        self.disc_params = ParamStore(dtype)
        self.aux_params = ParamStore(dtype)
        g, d, c = rng.child("gen-init"), rng.child("disc-init"), rng.child("aux-init")
        self.gen = Sequential(
            Affine(self.gen_params, "gen.0", cfg.noise_dim, h, g), Relu(),
            Affine(self.gen_params, "gen.1", h, dz, g), Tanh(),
        )
        self.disc = Sequential(
            Affine(self.disc_params, "disc.0", dz, h, d), Relu(),
            Affine(self.disc_params, "disc.1", h, 1, d),
        )
        self.aux = Sequential(
            Affine(self.aux_params, "aux.0", dz, h, c), Relu(),
            Affine(self.aux_params, "aux.1", h, num_classes, c),
        )

    def discriminator_loss(self, real, noise, return_grad=False):
        """``-log D(real) - log(1 - D(G(noise)))``, batch means.

        With ``return_grad`` also returns the discriminator accuracy.
        """
        fake = self.gen.forward(noise)
        lr = self.disc.forward(real)
        loss_r = bce_with_logits(lr, 1.0, return_grad)
        if return_grad:
            self.disc.backward(loss_r[1])
        lf = self.disc.forward(fake)
        loss_f = bce_with_logits(lf, 0.0, return_grad)
        if not return_grad:
            return loss_r + loss_f
        self.disc.backward(loss_f[1])
        acc = 0.5 * (float(np.mean(lr > 0)) + float(np.mean(lf <= 0)))
        return loss_r[0] + loss_f[0], acc

    def aux_loss(self, real, labels, return_grad=False):
        logits = self.aux.forward(real)
        result = cross_entropy(logits, labels, return_grad=return_grad)
        if not return_grad:
            return result
        self.aux.backward(result[1])
        return result[0], float(np.mean(logits.argmax(axis=1) == labels))

    def generator_loss(self, noise, return_grad=False):
        """Non-saturating ``-log D(G)`` plus ``alpha * mean(-H(C(G)))``.

        Backward also accumulates D and C gradients; callers step only the
        generator. Returns ``loss`` or ``(loss, mean aux entropy on G(noise))``.
        With ``alpha == 0`` C is never touched.
        """
        alpha = self.cfg.alpha
        fake = self.gen.forward(noise)
        adv = bce_with_logits(self.disc.forward(fake), 1.0, return_grad)
        dfake = self.disc.backward(adv[1]) if return_grad else None
        aux_entropy = math.nan
        ent_term = 0.0
        if alpha != 0.0:
            ne = neg_entropy(self.aux.forward(fake), return_grad)
            if return_grad:
                ent_term = ne[0]
                dfake = dfake + self.aux.backward(alpha * ne[1])
            else:
                ent_term = ne
            aux_entropy = -ent_term
        loss = (adv[0] if return_grad else adv) + alpha * ent_term
        if not return_grad:
            return loss
        self.gen.backward(dfake)
        if alpha == 0.0:
            aux_entropy = -neg_entropy(self.aux_logits(fake))
        return loss, aux_entropy

    def aux_logits(self, z, batch_size=1024):
        """Aux-classifier logits without touching any cached activations."""
        outs = []
        for i in range(0, len(z), batch_size):
            hidden = np.maximum(z[i : i + batch_size] @ self.aux.layers[0].w.value
                                + self.aux.layers[0].b.value, 0)
            outs.append(hidden @ self.aux.layers[2].w.value + self.aux.layers[2].b.value)
        return np.concatenate(outs) if outs else np.zeros((0, self.K), self.aux_params.dtype)

    def sample(self, n, rng):
        return self.gen.forward(rng.normal((n, self.cfg.noise_dim)).astype(self.gen_params.dtype))


@dataclass(frozen=True)
class AdvRecord:
    step: int
    d_loss: float
    d_acc: float
    c_loss: float
    c_acc: float
    g_loss: float
    aux_entropy: float


def adversarial_train(real_latents, labels, num_classes, cfg, rng=None):
    """Alternate D, C and G updates on frozen encoder latents.

    Returns ``(LatentGAN, list of AdvRecord, initial aux accuracy)``; the last
    value is the from-scratch auxiliary classifier's accuracy on all real
    latents before its first update.
    """
    cfg.validate()
    real_latents = np.asarray(real_latents)
    labels = np.asarray(labels)
    if len(real_latents) == 0:
        raise ValueError("adversarial training needs real latents")
    rng = rng or Rng(cfg.seed)
    gan = LatentGAN(cfg, num_classes, rng, dtype=real_latents.dtype)
    opt_d = Adam(gan.disc_params, lr=cfg.adv_lr, beta1=0.5)
    opt_c = Adam(gan.aux_params, lr=cfg.adv_lr, beta1=0.5)
    opt_g = Adam(gan.gen_params, lr=cfg.adv_lr, beta1=0.5)
    init_aux_acc = float(np.mean(gan.aux_logits(real_latents).argmax(axis=1) == labels))

    batch_rng, noise_rng = rng.child("adv-batches"), rng.child("adv-noise")
    dtype = real_latents.dtype
    history = []
    for step in range(cfg.adv_steps):
        idx = batch_rng.integers(len(real_latents), cfg.adv_batch_size)
        real, y = real_latents[idx], labels[idx]
        noise = noise_rng.normal((cfg.adv_batch_size, cfg.noise_dim)).astype(dtype)

        gan.disc_params.zero_grad()
        gan.gen_params.zero_grad()
        d_loss, d_acc = gan.discriminator_loss(real, noise, return_grad=True)
        opt_d.step()

        gan.aux_params.zero_grad()
        c_loss, c_acc = gan.aux_loss(real, y, return_grad=True)
        opt_c.step()

        for store in (gan.gen_params, gan.disc_params, gan.aux_params):
            store.zero_grad()
        g_loss, aux_entropy = gan.generator_loss(noise, return_grad=True)
        opt_g.step()

        if not all(math.isfinite(v) for v in (d_loss, c_loss, g_loss)):
            raise NumericError(
                f"non-finite adversarial loss at step {step}: d={d_loss} c={c_loss} g={g_loss}"
            )
        history.append(AdvRecord(step, d_loss, d_acc, c_loss, c_acc, g_loss, aux_entropy))
        if step % 500 == 0:
            log.info("adv step %d d_acc=%.3f g_loss=%.3f aux_H=%.3f", step, d_acc, g_loss, aux_entropy)
    return gan, history, init_aux_acc


def decode_ids(logits):
    """Argmax decode ``[B, L, V]`` logits, cutting each row at its first PAD."""
    pred = logits.argmax(axis=-1)
    out = []
    for row in pred:
        stop = np.flatnonzero(row == PAD_ID)
        out.append(row[: stop[0]] if stop.size else row)
    return out


def generate(gan, ae, vocab, n, rng, batch_size=128):
    """Sample ``n`` pseudo-OOD token sequences; empty decodes become ``[UNK]``."""
    seqs = []
    for start in range(0, n, batch_size):
        z = gan.sample(min(batch_size, n - start), rng)
        for row in decode_ids(ae.decode_logits(z)):
            toks = [vocab.id_to_token[i] for i in row]
            seqs.append(toks or [UNK_TOKEN])
    return seqs


class OverlapIndex:
    """Inverted index over IND token sets for exact-match and Jaccard queries."""

    def __init__(self, token_seqs):
        self.exact = {tuple(s) for s in token_seqs}
        self.tok_ids = {}
        sets = [{self.tok_ids.setdefault(t, len(self.tok_ids)) for t in s} for s in token_seqs]
        self.set_sizes = np.array([len(s) for s in sets], dtype=np.int64)
        buckets = [[] for _ in self.tok_ids]
        for j, s in enumerate(sets):
            for t in s:
                buckets[t].append(j)
        self.postings = [np.asarray(b, dtype=np.int64) for b in buckets]

    def max_jaccard(self, tokens):
        cand = set(tokens)
        known = [self.tok_ids[t] for t in cand if t in self.tok_ids]
        if not known or self.set_sizes.size == 0:
            return 0.0
        inter = np.bincount(
            np.concatenate([self.postings[t] for t in known]), minlength=self.set_sizes.size
        )
        union = len(cand) + self.set_sizes - inter
        return float(np.max(inter / union))


REJECT_RULES = ("exact", "jaccard", "confidence")


def post_filter(candidates, ind_train, confidence_fn=None, jaccard_threshold=0.8,
                confidence_threshold=0.9, index=None):
    """Drop candidates that overlap IND training utterances.

    A candidate is rejected by the first rule it trips: exact token-sequence
    match with an IND utterance, token-set Jaccard >= ``jaccard_threshold``
    with one, or ``confidence_fn`` (max-softmax of some intent classifier)
    >= ``confidence_threshold``. ``ind_train`` is a list of token sequences.
    Returns ``(kept, report)`` where the report counts rejections per rule.
    """
    index = index or OverlapIndex(ind_train)
    report = {"total": len(candidates), **{r: 0 for r in REJECT_RULES}}
    survivors = []
    for cand in candidates:
        if tuple(cand) in index.exact:
            report["exact"] += 1
        elif index.max_jaccard(cand) >= jaccard_threshold:
            report["jaccard"] += 1
        else:
            survivors.append(list(cand))
    if confidence_fn is not None and survivors:
        conf = np.asarray(confidence_fn(survivors))
        kept = [c for c, s in zip(survivors, conf) if s < confidence_threshold]
        report["confidence"] = len(survivors) - len(kept)
    else:
        kept = survivors
    report["kept"] = len(kept)
    return kept, report


def aux_confidence_fn(gan, ae, vocab):
    """Max-softmax of the auxiliary classifier on re-encoded token sequences."""
    def confidence(token_seqs):
        split = encode_sequences(token_seqs, vocab, ae.max_len)
        return softmax(gan.aux_logits(ae.encode_all(split)).astype(np.float64)).max(axis=1)
    return confidence


@dataclass
class PogResult:
    autoencoder: Autoencoder
    gan: LatentGAN
    ae_losses: list
    adv_log: list
    init_aux_accuracy: float
    candidates: list
    kept: list
    rejections: dict

    def summary(self):
        first, last = self.adv_log[0], self.adv_log[-1]
        return {
            "ae_losses": self.ae_losses,
            "init_aux_accuracy": self.init_aux_accuracy,
            "first_step": asdict(first),
            "final_step": asdict(last),
            "rejections": self.rejections,
        }


def run_pog(train_split, train_tokens, vocab, num_classes, cfg):
    """Full generation pipeline on encoded IND training data."""
    cfg.validate()
    rng = Rng(cfg.seed)
    max_len = train_split.ids.shape[1]
    ae, ae_losses = train_autoencoder(train_split, len(vocab), max_len, cfg, rng.child("ae"))
    latents = ae.encode_all(train_split)
    gan, adv_log, init_acc = adversarial_train(
        latents, train_split.labels, num_classes, cfg, rng.child("adv")
    )
    candidates = generate(gan, ae, vocab, cfg.n_generate, rng.child("generate"))
    kept, report = post_filter(
        candidates, train_tokens, aux_confidence_fn(gan, ae, vocab),
        cfg.jaccard_threshold, cfg.confidence_threshold,
    )
    log.info("post-filter kept %d of %d candidates", len(kept), len(candidates))
    return PogResult(ae, gan, ae_losses, adv_log, init_acc, candidates, kept, report)
