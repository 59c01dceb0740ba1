"""Wordpiece vocabulary built greedily from corpus frequencies.

The inventory always contains the five reserved tokens, every corpus
character as both a word-initial and a ``##`` continuation piece (so any
corpus word tokenizes without [UNK]), and then whole words by descending
frequency until the size budget is exhausted. Tokenization is the usual
greedy longest-prefix wordpiece walk. Text is case-folded: the model is
uncased.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from .errors import ConfigError, DataError
from .kb import AnnotatedDocument, KnowledgeBase

PAD, UNK, CLS, SEP, MASK = "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"
RESERVED = [PAD, UNK, CLS, SEP, MASK]


class Vocabulary:
    """Bijective wordpiece <-> id map with stable reserved ids 0..4.

    Special tokens added later (e.g. relation-extraction entity indicators)
    are appended at the end and tokenize atomically.
    """

    def __init__(self, pieces: Sequence[str]):
        if list(pieces[: len(RESERVED)]) != RESERVED:
            raise ConfigError(f"vocabulary must start with the reserved tokens {RESERVED}")
        self.pieces: List[str] = list(pieces)
        self.index: Dict[str, int] = {p: i for i, p in enumerate(self.pieces)}
        if len(self.index) != len(self.pieces):
            raise DataError("duplicate wordpiece in vocabulary")
        self.special: set[str] = set(RESERVED)

    def __len__(self) -> int:
        return len(self.pieces)

    pad_id = property(lambda self: 0)
    unk_id = property(lambda self: 1)
    cls_id = property(lambda self: 2)
    sep_id = property(lambda self: 3)
    mask_id = property(lambda self: 4)

    @property
    def special_ids(self) -> set:
        return {self.index[t] for t in self.special}

    def id_of(self, piece: str) -> int:
        return self.index.get(piece, self.unk_id)

    def add_special(self, token: str) -> int:
        """Register an atomic special token (appended if new)."""
        if token in self.index:
            self.special.add(token)
            return self.index[token]
        self.pieces.append(token)
        self.index[token] = len(self.pieces) - 1
        self.special.add(token)
        return self.index[token]

    # -- tokenization --------------------------------------------------------

    def tokenize_word(self, word: str) -> List[int]:
        """Greedy longest-prefix wordpiece split; whole word -> [UNK] on failure."""
        if word in self.special:
            return [self.index[word]]
        w = word.casefold()
        if not w:
            return []
        out: List[int] = []
        start = 0
        while start < len(w):
            end = len(w)
            piece_id = None
            while start < end:
                sub = w[start:end]
                if start > 0:
                    sub = "##" + sub
                pid = self.index.get(sub)
                if pid is not None:
                    piece_id = pid
                    break
                end -= 1
            if piece_id is None:
                return [self.unk_id]
            out.append(piece_id)
            start = end
        return out

    def detokenize(self, ids: Iterable[int]) -> str:
        """Join pieces back into words (``##`` pieces glue to the left)."""
        words: List[str] = []
        for i in ids:
            piece = self.pieces[int(i)]
            if piece.startswith("##") and words:
                words[-1] += piece[2:]
            else:
                words.append(piece)
        return " ".join(words)

    # -- persistence: one piece per line, line number = id --------------------

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.pieces) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path, special: Optional[Iterable[str]] = None) -> "Vocabulary":
        pieces = Path(path).read_text(encoding="utf-8").splitlines()
        vocab = cls(pieces)
        # Appended specials are recognizable by their indicator form @...$;
        # callers may also pass them explicitly.
        for p in pieces:
            if p.startswith("@") and p.endswith("$"):
                vocab.special.add(p)
        for t in special or ():
            vocab.add_special(t)
        return vocab


def build_vocab(token_lines: Iterable[Sequence[str]], size: int) -> Vocabulary:
    """Greedy frequency-based inventory over pre-tokenized lines.

    Deterministic given the corpus and size: ties in frequency break
    lexicographically.
    """
    if size < len(RESERVED):
        raise ConfigError(f"vocab size {size} is below the {len(RESERVED)} reserved tokens")
    word_freq: Counter = Counter()
    chars: set[str] = set()
    for line in token_lines:
        for tok in line:
            w = tok.casefold()
            if not w:
                continue
            word_freq[w] += 1
            chars.update(w)
    if not word_freq:
        raise DataError("cannot build a vocabulary from an empty corpus")

    pieces: List[str] = list(RESERVED)
    have = set(pieces)

    def push(p: str) -> None:
        if p not in have and len(pieces) < size:
            pieces.append(p)
            have.add(p)

    for c in sorted(chars):
        push(c)
    for c in sorted(chars):
        push("##" + c)
    for w, _ in sorted(word_freq.items(), key=lambda kv: (-kv[1], kv[0])):
        if len(pieces) >= size:
            break
        push(w)
    return Vocabulary(pieces)


# -- document tokenization ------------------------------------------------------


@dataclass
class WpMention:
    """Mention re-expressed on wordpieces: half-open [start, end)."""

    start: int
    end: int
    entity_index: Optional[int]  # row in kb.entities; None = NIL


@dataclass
class TokenizedInput:
    """A document bridged to model input space.

    ``ids`` includes [CLS] ... [SEP] (no padding). ``word_starts`` marks the
    first piece of each corpus token (special positions are False).
    ``token_starts[i]`` is the wordpiece index of the first piece of corpus
    token i; mentions nest exactly inside their original token spans.
    """

    ids: np.ndarray
    word_starts: np.ndarray
    token_starts: List[int]
    n_tokens: int
    mentions: List[WpMention] = field(default_factory=list)

    @property
    def length(self) -> int:
        return int(self.ids.shape[0])


def tokenize_document(
    doc: AnnotatedDocument,
    vocab: Vocabulary,
    kb: Optional[KnowledgeBase] = None,
    max_seq_len: int = 128,
) -> TokenizedInput:
    """Wordpiece-encode a document, keeping mention spans aligned.

    Overlong documents are truncated at a word boundary so that at most
    ``max_seq_len`` pieces remain including [CLS]/[SEP]; mentions that cross
    the truncation point are dropped.
    """
    ids: List[int] = [vocab.cls_id]
    word_starts: List[bool] = [False]
    token_starts: List[int] = []
    kept_tokens = 0
    budget = max_seq_len - 1  # room for [SEP]
    for tok in doc.tokens:
        pieces = vocab.tokenize_word(tok)
        if not pieces:
            pieces = [vocab.unk_id]
        if len(ids) + len(pieces) > budget:
            break
        token_starts.append(len(ids))
        ids.extend(pieces)
        word_starts.append(True)
        word_starts.extend([False] * (len(pieces) - 1))
        kept_tokens += 1
    ids.append(vocab.sep_id)
    word_starts.append(False)

    mentions: List[WpMention] = []
    for m in doc.mentions:
        if m.end > kept_tokens:
            continue
        wp_start = token_starts[m.start]
        wp_end = token_starts[m.end] if m.end < kept_tokens else len(ids) - 1
        ent_idx: Optional[int] = None
        if m.entity is not None:
            if kb is None:
                raise DataError(f"mention links {m.entity!r} but no KB was provided")
            if m.entity not in kb.index:
                raise DataError(f"mention links unknown entity {m.entity!r}")
            ent_idx = kb.index[m.entity]
        mentions.append(WpMention(wp_start, wp_end, ent_idx))

    return TokenizedInput(
        ids=np.asarray(ids, dtype=np.int64),
        word_starts=np.asarray(word_starts, dtype=bool),
        token_starts=token_starts,
        n_tokens=kept_tokens,
        mentions=mentions,
    )
