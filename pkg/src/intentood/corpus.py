"""CLINC150-style ingestion, tokenization, vocabulary and fixed-length encoding."""

import json
import re
from collections import Counter
from dataclasses import dataclass

import numpy as np

from .errors import IngestionError

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
# marker for out-of-scope examples; deliberately outside the 0..K-1 id space
OOS = -1

SPLIT_KEYS = ("train", "val", "test", "oos_train", "oos_val", "oos_test")
_REQUIRED_NONEMPTY = ("train", "oos_train")

_TOKEN_RE = re.compile(r"[^\W_]+(?=n't)|n't|'(?:s|re|m|ll|ve|d)(?![^\W_])|[^\W_]+|[^\w\s]|_")


def tokenize(text):
    """Lowercase, split on whitespace, split off punctuation and clitics.

    >>> tokenize("What's my bank balance?")
    ['what', "'s", 'my', 'bank', 'balance', '?']
    """
    text = text.lower().replace("’", "'")
    return _TOKEN_RE.findall(text)


@dataclass(frozen=True)
class Utterance:
    text: str
    tokens: tuple

    @classmethod
    def from_text(cls, text):
        return cls(text, tuple(tokenize(text)))


@dataclass(frozen=True)
class LabeledExample:
    utterance: Utterance
    label: int  # intent id, or OOS

    @property
    def is_oos(self):
        return self.label == OOS


@dataclass(frozen=True)
class DatasetBundle:
    train_ind: tuple
    val_ind: tuple
    test_ind: tuple
    train_oos: tuple
    val_oos: tuple
    test_oos: tuple
    label_names: tuple  # intent id -> name

    @property
    def K(self):
        return len(self.label_names)

    def sizes(self):
        return tuple(
            len(s)
            for s in (self.train_ind, self.val_ind, self.test_ind,
                      self.train_oos, self.val_oos, self.test_oos)
        )


def _pairs(raw, key):
    if key not in raw:
        raise IngestionError(key, "missing split")
    value = raw[key]
    if not isinstance(value, list):
        raise IngestionError(key, "split must be a list of [utterance, label] pairs")
    for i, pair in enumerate(value):
        if (
            not isinstance(pair, (list, tuple))
            or len(pair) != 2
            or not isinstance(pair[0], str)
            or not isinstance(pair[1], str)
        ):
            raise IngestionError(key, f"malformed pair at index {i}: {pair!r}")
    if key in _REQUIRED_NONEMPTY and not value:
        raise IngestionError(key, "training split is empty")
    return value


def parse_clinc(raw):
    """Build a :class:`DatasetBundle` from the decoded ``data_full.json`` object."""
    if not isinstance(raw, dict):
        raise IngestionError("<root>", "expected a JSON object")
    splits = {key: _pairs(raw, key) for key in SPLIT_KEYS}
    names = tuple(sorted({label for _, label in splits["train"]}))
    ids = {name: i for i, name in enumerate(names)}

    def ind(key):
        out = []
        for text, label in splits[key]:
            if label not in ids:
                raise IngestionError(key, f"label {label!r} not seen in train")
            out.append(LabeledExample(Utterance.from_text(text), ids[label]))
        return tuple(out)

    def oos(key):
        return tuple(LabeledExample(Utterance.from_text(t), OOS) for t, _ in splits[key])

    return DatasetBundle(
        train_ind=ind("train"), val_ind=ind("val"), test_ind=ind("test"),
        train_oos=oos("oos_train"), val_oos=oos("oos_val"), test_oos=oos("oos_test"),
        label_names=names,
    )


def load_clinc(path):
    try:
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
    except json.JSONDecodeError as exc:
        raise IngestionError("<root>", f"invalid JSON: {exc}") from exc
    return parse_clinc(raw)


class Vocabulary:
    def __init__(self, id_to_token):
        if list(id_to_token[:2]) != [PAD_TOKEN, UNK_TOKEN]:
            raise ValueError("vocabulary must start with PAD and UNK")
        self.id_to_token = list(id_to_token)
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ValueError("duplicate tokens in vocabulary")

    def __len__(self):
        return len(self.id_to_token)

    def __contains__(self, token):
        return token in self.token_to_id

    def lookup(self, token):
        return self.token_to_id.get(token, UNK_ID)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as f:
            for i, tok in enumerate(self.id_to_token):
                f.write(f"{tok}\t{i}\n")

    @classmethod
    def load(cls, path):
        rows = []
        with open(path, encoding="utf-8") as f:
            for line in f:
                tok, idx = line.rstrip("\n").split("\t")
                rows.append((int(idx), tok))
        rows.sort()
        if [i for i, _ in rows] != list(range(len(rows))):
            raise ValueError(f"{path}: ids are not contiguous from 0")
        return cls([t for _, t in rows])


def build_vocab(examples, min_freq=1):
    """Ids from 2 upward by descending frequency, ties broken lexicographically."""
    if not examples:
        raise ValueError("cannot build a vocabulary from no examples")
    counts = Counter(tok for ex in examples for tok in ex.utterance.tokens)
    kept = sorted((t for t, c in counts.items() if c >= min_freq), key=lambda t: (-counts[t], t))
    return Vocabulary([PAD_TOKEN, UNK_TOKEN] + kept)


def encode(tokens, vocab, max_len):
    """Return ``(ids, length)``; ids are truncated/right-padded to ``max_len``."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    ids = [vocab.lookup(t) for t in tokens[:max_len]]
    length = len(ids)
    return ids + [PAD_ID] * (max_len - length), length


def decode(ids, vocab):
    return [vocab.id_to_token[i] for i in ids if i != PAD_ID]


@dataclass
class EncodedSplit:
    ids: np.ndarray  # [N, max_len] int64
    lengths: np.ndarray  # [N]
    labels: np.ndarray  # [N]; OOS for out-of-scope

    def __len__(self):
        return len(self.lengths)

    def take(self, idx):
        return EncodedSplit(self.ids[idx], self.lengths[idx], self.labels[idx])


def encode_sequences(token_seqs, vocab, max_len, labels=None):
    n = len(token_seqs)
    ids = np.zeros((n, max_len), dtype=np.int64)
    lengths = np.zeros(n, dtype=np.int64)
    for i, toks in enumerate(token_seqs):
        row, lengths[i] = encode(toks, vocab, max_len)
        ids[i] = row
    labels = np.full(n, OOS, dtype=np.int64) if labels is None else np.asarray(labels, np.int64)
    return EncodedSplit(ids, lengths, labels)


def encode_examples(examples, vocab, max_len):
    return encode_sequences(
        [ex.utterance.tokens for ex in examples], vocab, max_len, [ex.label for ex in examples]
    )
