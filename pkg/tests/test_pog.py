import math

import numpy as np
import pytest

from intentood.corpus import (
    PAD_TOKEN,
    UNK_TOKEN,
    Vocabulary,
    build_vocab,
    encode_examples,
    encode_sequences,
    parse_clinc,
)
from intentood.errors import ConfigError
from intentood.numerics import Rng, finite_diff_check
from intentood.pog import (
    Autoencoder,
    LatentGAN,
    OverlapIndex,
    PogConfig,
    adversarial_train,
    decode_ids,
    generate,
    post_filter,
    train_autoencoder,
)

TINY = PogConfig(embed_dim=5, latent_dim=4, noise_dim=3, decoder_hidden=5, hidden=6)


def jitter(store, rng, scale=0.1):
    # zero-initialised biases can sit on relu kinks
    for p in store:
        noise = rng.normal(0.0, scale, p.value.shape)
        p.value += noise if p.frozen is None else noise * ~p.frozen


def tiny_ids(rng, n=4, vocab=10, max_len=5):
    lengths = rng.integers(1, max_len + 1, n)
    ids = np.zeros((n, max_len), dtype=np.int64)
    for i, ln in enumerate(lengths):
        ids[i, :ln] = rng.integers(2, vocab, ln)
    return ids, lengths


class TestGradients:
    @pytest.mark.parametrize("decoder", ["nar", "gru"])
    @pytest.mark.parametrize("seed", range(3))
    def test_reconstruction(self, decoder, seed):
        rng = np.random.default_rng(seed)
        cfg = PogConfig(**{**TINY.__dict__, "decoder": decoder})
        ae = Autoencoder(cfg, vocab_size=10, max_len=5, rng=Rng(seed), dtype=np.float64)
        jitter(ae.params, rng)
        ids, lengths = tiny_ids(rng)
        err = finite_diff_check(
            lambda s: ae.reconstruction_loss(ids, lengths, return_grad=True), ae.params
        )
        assert err <= 1e-4

    def _gan(self, seed, alpha=1.0):
        rng = np.random.default_rng(seed)
        cfg = PogConfig(**{**TINY.__dict__, "alpha": alpha})
        gan = LatentGAN(cfg, num_classes=3, rng=Rng(seed), dtype=np.float64)
        for store in (gan.gen_params, gan.disc_params, gan.aux_params):
            jitter(store, rng)
        real = np.tanh(rng.normal(size=(5, 4)))
        noise = rng.normal(size=(5, 3))
        return gan, real, noise, rng.integers(0, 3, 5)

    @pytest.mark.parametrize("seed", range(3))
    def test_discriminator(self, seed):
        gan, real, noise, _ = self._gan(seed)
        f = lambda s: gan.discriminator_loss(real, noise, return_grad=True)[0]  # noqa: E731
        assert finite_diff_check(f, gan.disc_params) <= 1e-4

    @pytest.mark.parametrize("seed", range(3))
    def test_aux(self, seed):
        gan, real, _, labels = self._gan(seed)
        f = lambda s: gan.aux_loss(real, labels, return_grad=True)[0]  # noqa: E731
        assert finite_diff_check(f, gan.aux_params) <= 1e-4

    @pytest.mark.parametrize("alpha", [0.0, 1.0, 2.5])
    @pytest.mark.parametrize("seed", range(3))
    def test_generator(self, seed, alpha):
        gan, _, noise, _ = self._gan(seed, alpha)

        def f(store):
            for s in (gan.disc_params, gan.aux_params):
                s.zero_grad()
            return gan.generator_loss(noise, return_grad=True)[0]

        assert finite_diff_check(f, gan.gen_params) <= 1e-4

    def test_alpha_zero_leaves_aux_untouched(self):
        gan, _, noise, _ = self._gan(0, alpha=0.0)
        for s in (gan.gen_params, gan.disc_params, gan.aux_params):
            s.zero_grad()
        loss, _ = gan.generator_loss(noise, return_grad=True)
        assert all(np.all(p.grad == 0.0) for p in gan.aux_params)
        # and the loss is the adversarial term alone
        gan1, _, _, _ = self._gan(0, alpha=1.0)
        assert loss == pytest.approx(
            gan1.generator_loss(noise) - gan1.cfg.alpha * (-gan1.generator_loss(noise, True)[1]),
            abs=1e-12,
        )


@pytest.fixture(scope="module")
def toy10():
    texts = [
        "set an alarm for six", "what is the weather today", "play some jazz music",
        "book a table for two", "how tall is everest", "turn off the lights",
        "call my mother now", "add milk to my list", "what time is it", "translate hello to french",
    ]
    tokens = [t.split() for t in texts]
    vocab = Vocabulary([PAD_TOKEN, UNK_TOKEN, *sorted({w for t in tokens for w in t})])
    return tokens, vocab, encode_sequences(tokens, vocab, 8, labels=list(range(10)))


class TestAutoencoder:
    CFG = PogConfig(embed_dim=32, latent_dim=32, decoder_hidden=32, ae_epochs=200,
                    ae_batch_size=10, ae_lr=1e-2)

    def test_memorizes_toy_corpus(self, toy10):
        _, vocab, split = toy10
        ae, losses = train_autoencoder(split, len(vocab), 8, self.CFG, Rng(0))
        assert ae.token_accuracy(split) >= 0.9
        assert losses[-1] < losses[0]

    def test_deterministic(self, toy10):
        _, vocab, split = toy10
        cfg = PogConfig(**{**self.CFG.__dict__, "ae_epochs": 5})
        a = train_autoencoder(split, len(vocab), 8, cfg, Rng(3))[1]
        b = train_autoencoder(split, len(vocab), 8, cfg, Rng(3))[1]
        assert a == b

    def test_zero_latent(self, toy10):
        _, vocab, split = toy10
        with pytest.raises(ConfigError):
            train_autoencoder(split, len(vocab), 8, PogConfig(latent_dim=0))

    def test_empty_split(self, toy10):
        _, vocab, split = toy10
        with pytest.raises(ValueError):
            train_autoencoder(split.take(np.arange(0)), len(vocab), 8, self.CFG)


@pytest.fixture(scope="module")
def toy_latents(clinc_dict):
    bundle = parse_clinc(clinc_dict)
    vocab = build_vocab(bundle.train_ind)
    split = encode_examples(bundle.train_ind, vocab, 12)
    cfg = PogConfig(ae_epochs=20, adv_steps=500, adv_lr=1e-3)
    ae, _ = train_autoencoder(split, len(vocab), 12, cfg, Rng(0))
    return ae, vocab, split, bundle, cfg


class TestAdversarial:
    @pytest.fixture(scope="class")
    @classmethod
    def run(cls, toy_latents):
        ae, _, split, bundle, cfg = toy_latents
        return adversarial_train(ae.encode_all(split), split.labels, bundle.K, cfg, Rng(0))

    def test_discriminator_leaves_saturation(self, run):
        _, history, _ = run
        d_acc = np.array([h.d_acc for h in history])
        assert d_acc[:150].max() >= 0.95
        assert 0.45 <= d_acc[-50:].mean() <= 0.75

    @pytest.mark.xfail(strict=True, reason=(
        "a from-scratch aux classifier is near-uniform at step 0 (entropy ~ ln K, the maximum), "
        "so no later step can exceed it; see the decisions ledger"))
    def test_aux_entropy_increases(self, run):
        _, history, _ = run
        assert history[-1].aux_entropy > history[0].aux_entropy

    def test_aux_starts_from_scratch(self, run, toy_latents):
        _, _, split, bundle, _ = toy_latents
        _, _, init_acc = run
        p, n = 1.0 / bundle.K, len(split)
        assert abs(init_acc - p) <= 3.0 * math.sqrt(p * (1 - p) / n)

    def test_log_fields_finite(self, run):
        _, history, _ = run
        assert len(history) == 500
        assert all(math.isfinite(v) for h in history for v in h.__dict__.values())

    def test_deterministic(self, toy_latents):
        ae, _, split, bundle, cfg = toy_latents
        cfg = PogConfig(**{**cfg.__dict__, "adv_steps": 20})
        z = ae.encode_all(split)
        a = adversarial_train(z, split.labels, bundle.K, cfg, Rng(4))[1]
        b = adversarial_train(z, split.labels, bundle.K, cfg, Rng(4))[1]
        assert a == b

    def test_empty_latents(self):
        with pytest.raises(ValueError):
            adversarial_train(np.zeros((0, 4)), np.zeros(0, int), 3, TINY)


class TestGenerate:
    @pytest.fixture(scope="class")
    @classmethod
    def gan(cls, toy_latents):
        ae, _, split, bundle, cfg = toy_latents
        cfg = PogConfig(**{**cfg.__dict__, "adv_steps": 30})
        return adversarial_train(ae.encode_all(split), split.labels, bundle.K, cfg, Rng(0))[0]

    def test_count_and_vocab(self, gan, toy_latents):
        ae, vocab, *_ = toy_latents
        seqs = generate(gan, ae, vocab, 5, Rng(1))
        assert len(seqs) == 5
        assert all(1 <= len(s) <= ae.max_len and all(t in vocab for t in s) for s in seqs)

    def test_zero(self, gan, toy_latents):
        ae, vocab, *_ = toy_latents
        assert generate(gan, ae, vocab, 0, Rng(1)) == []

    def test_deterministic(self, gan, toy_latents):
        ae, vocab, *_ = toy_latents
        assert generate(gan, ae, vocab, 40, Rng(2)) == generate(gan, ae, vocab, 40, Rng(2))

    def test_degenerate_decode_is_unk(self, gan, toy_latents):
        ae, vocab, *_ = toy_latents

        class AllPad:
            max_len = 4

            def decode_logits(self, z):
                logits = np.zeros((len(z), 4, len(vocab)))
                logits[..., 0] = 1.0
                return logits

        assert generate(gan, AllPad(), vocab, 3, Rng(0)) == [[UNK_TOKEN]] * 3

    def test_decode_cuts_at_first_pad(self):
        logits = np.zeros((1, 5, 6))
        for t, tok in enumerate([3, 4, 0, 5, 0]):
            logits[0, t, tok] = 1.0
        assert decode_ids(logits)[0].tolist() == [3, 4]


class TestPostFilter:
    IND = [
        "set an alarm for six in the morning please now".split(),
        "what is the weather like".split(),
    ]

    def test_exact_rule(self):
        kept, rep = post_filter([list(self.IND[1])], self.IND)
        assert kept == [] and rep["exact"] == 1

    def test_jaccard_rule(self):
        cand = self.IND[0][:9] + ["tomorrow"]
        assert OverlapIndex(self.IND).max_jaccard(cand) == pytest.approx(9 / 11)
        kept, rep = post_filter([cand], self.IND)
        assert kept == [] and rep["jaccard"] == 1 and rep["exact"] == 0

    def test_below_jaccard_kept(self):
        cand = self.IND[0][:7] + ["x", "y", "z"]
        kept, rep = post_filter([cand], self.IND)
        assert kept == [cand]

    def test_confidence_rule(self):
        cands = [["zzz", "qqq"], ["foo"]]
        kept, rep = post_filter(cands, self.IND, confidence_fn=lambda c: [0.95, 0.3])
        assert kept == [["foo"]] and rep["confidence"] == 1

    def test_gibberish_uniform_kept(self):
        cands = [["blorp", "zib", "quux"]]
        kept, rep = post_filter(cands, self.IND, confidence_fn=lambda c: [1 / 150] * len(c))
        assert kept == cands and rep["kept"] == 1

    def test_first_rule_wins(self):
        kept, rep = post_filter([list(self.IND[0])], self.IND, confidence_fn=lambda c: [1.0] * len(c))
        assert (rep["exact"], rep["jaccard"], rep["confidence"]) == (1, 0, 0)

    def test_idempotent(self):
        rng = np.random.default_rng(0)
        words = sorted({w for s in self.IND for w in s}) + ["a1", "b2", "c3"]
        cands = [list(rng.choice(words, rng.integers(1, 8))) for _ in range(200)]
        conf = lambda cs: [0.5 + 0.5 * (len(c) % 2) for c in cs]  # noqa: E731
        once, _ = post_filter(cands, self.IND, conf)
        twice, _ = post_filter(once, self.IND, conf)
        assert once == twice

    def test_planted_duplicates(self, clinc_dict):
        bundle = parse_clinc(clinc_dict)
        ind = [ex.utterance.tokens for ex in bundle.train_ind]
        rng = np.random.default_rng(1)
        planted = [list(ind[i]) for i in rng.choice(len(ind), 50, replace=False)]
        cands = [["novel", "words", str(i)] for i in range(30)] + planted
        kept, rep = post_filter(cands, ind)
        assert not any(p in kept for p in planted)
        assert rep["exact"] >= 50
