"""Text ingestion: char/word tokenizers and a synthetic corpus generator."""

from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .errors import UsageError

UNK_TOKEN = "<unk>"


@dataclass
class Vocabulary:
    kind: str  # "char" | "word"
    id_to_token: List[str]
    token_to_id: Dict[str, int] = field(repr=False)
    unk_id: Optional[int] = None  # word kind only

    @property
    def size(self):
        return len(self.id_to_token)


def tokenize_corpus(text, kind="char", max_vocab=None):
    """Build a vocabulary from text and encode it.

    char: every distinct code point gets an id in first-occurrence order
    (max_vocab does not apply). word: whitespace split, top max_vocab-1
    tokens by frequency are kept (ties toward earlier first occurrence),
    everything else collapses to <unk>.
    """
    if not text:
        raise UsageError("tokenize_corpus: empty text")
    if kind == "char":
        token_to_id = {}
        for ch in text:
            if ch not in token_to_id:
                token_to_id[ch] = len(token_to_id)
        vocab = Vocabulary(
            kind="char",
            id_to_token=list(token_to_id.keys()),
            token_to_id=token_to_id,
        )
        ids = np.fromiter((token_to_id[ch] for ch in text), dtype=np.int64)
        return vocab, ids
    if kind != "word":
        raise UsageError("tokenize_corpus: kind must be char or word, got %r" % kind)
    words = text.split()
    if not words:
        raise UsageError("tokenize_corpus: no tokens after whitespace split")
    counts = {}
    first_seen = {}
    for i, w in enumerate(words):
        counts[w] = counts.get(w, 0) + 1
        if w not in first_seen:
            first_seen[w] = i
    ranked = sorted(counts, key=lambda w: (-counts[w], first_seen[w]))
    keep = ranked if max_vocab is None else ranked[: max(max_vocab - 1, 0)]
    id_to_token = list(keep) + [UNK_TOKEN]
    token_to_id = {t: i for i, t in enumerate(id_to_token)}
    unk_id = token_to_id[UNK_TOKEN]
    vocab = Vocabulary(
        kind="word",
        id_to_token=id_to_token,
        token_to_id=token_to_id,
        unk_id=unk_id,
    )
    ids = np.fromiter((token_to_id.get(w, unk_id) for w in words), dtype=np.int64)
    return vocab, ids


def encode(vocab, text):
    """Encode new text with an existing vocabulary."""
    if not text:
        raise UsageError("encode: empty text")
    if vocab.kind == "char":
        try:
            return np.fromiter((vocab.token_to_id[c] for c in text), dtype=np.int64)
        except KeyError as e:
            raise UsageError(
                "encode: code point %r not in char vocabulary" % (e.args[0],)
            ) from None
    unk = vocab.unk_id
    return np.fromiter(
        (vocab.token_to_id.get(w, unk) for w in text.split()), dtype=np.int64
    )


def detokenize(vocab, ids):
    toks = [vocab.id_to_token[int(i)] for i in ids]
    return "".join(toks) if vocab.kind == "char" else " ".join(toks)


_SYLLABLES = (
    "ba be bi bo bu da de di do du ka ke ki ko ku la le li lo lu "
    "ma me mi mo mu na ne ni no nu ra re ri ro ru sa se si so su "
    "ta te ti to tu va ve vi vo vu za ze zi zo zu"
).split()


def synthetic_text(rng, length, vocab_words=200):
    """Deterministic pseudo-English text of roughly `length` characters.

    Words are drawn from a Zipf-like distribution over invented syllabic
    words, with occasional punctuation and newlines, so char-level structure
    is learnable but far from trivial.
    """
    words = []
    seen = set()
    wr = rng.split(2)[0]
    while len(words) < vocab_words:
        n_syl = 1 + int(wr.integers(1, 4))
        w = "".join(_SYLLABLES[int(wr.integers(0, len(_SYLLABLES)))] for _ in range(n_syl))
        if w not in seen:
            seen.add(w)
            words.append(w)
    ranks = np.arange(1, vocab_words + 1, dtype=np.float64)
    probs = 1.0 / ranks
    probs /= probs.sum()
    cdf = np.cumsum(probs)
    out = []
    total = 0
    sentence_len = 0
    while total <= length:  # the final join drops one trailing separator
        u = float(rng.uniform((), 0.0, 1.0))
        w = words[int(np.searchsorted(cdf, u))]
        out.append(w)
        total += len(w) + 1
        sentence_len += 1
        if sentence_len >= 8 and float(rng.uniform((), 0.0, 1.0)) < 0.25:
            out[-1] += "." if float(rng.uniform((), 0.0, 1.0)) < 0.8 else ","
            total += 1
            if float(rng.uniform((), 0.0, 1.0)) < 0.3:
                out[-1] += "\n"
                total += 1
            sentence_len = 0
    return " ".join(out)[:length]


def read_text(path):
    with open(path, "r", encoding="utf-8") as f:
        text = f.read()
    if not text:
        raise UsageError("read_text: %s is empty" % path)
    return text
