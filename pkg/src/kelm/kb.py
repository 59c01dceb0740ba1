"""Knowledge base: entity set, synonym lexicon, relation triplets, embeddings.

Owns the on-disk formats:

* lexicon TSV   — ``entity_id<TAB>preferred_name<TAB>syn1|syn2|...``
* triplets TSV  — ``subject_id<TAB>relation_name<TAB>object_id``
* corpus JSONL  — one object per line with ``tokens`` (list of strings) and
  ``mentions`` (objects with ``start``, ``end``, ``cui``; ``cui`` null = NIL)

Entity order is the load order of the lexicon and stays stable across
save/load, so embedding rows never need remapping.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .autodiff import Tensor
from .errors import DataError, ValidationError

EntityId = str
NIL: Optional[EntityId] = None

DEFAULT_ENTITY_DIM = 100


@dataclass
class Mention:
    """Half-open token span [start, end) linked to an entity or NIL."""

    start: int
    end: int
    entity: Optional[EntityId]

    def as_json(self) -> dict:
        return {"start": self.start, "end": self.end, "cui": self.entity}


@dataclass
class AnnotatedDocument:
    tokens: List[str]
    mentions: List[Mention] = field(default_factory=list)

    def validate(self) -> "AnnotatedDocument":
        n = len(self.tokens)
        prev_end = -1
        for m in sorted(self.mentions, key=lambda m: m.start):
            if not (0 <= m.start < m.end <= n):
                raise DataError(f"mention span ({m.start}, {m.end}) out of [0, {n}]")
            if m.start < prev_end:
                raise DataError(f"mention spans overlap at token {m.start}")
            prev_end = m.end
        self.mentions.sort(key=lambda m: m.start)
        return self


class KnowledgeBase:
    """Entity identifiers, names, triplets and the entity-embedding table."""

    def __init__(
        self,
        entities: Sequence[EntityId],
        names: Dict[EntityId, List[str]],
        triplets: Sequence[Tuple[EntityId, str, EntityId]],
        entity_dim: int = DEFAULT_ENTITY_DIM,
        embeddings: Optional[np.ndarray] = None,
    ):
        if len(set(entities)) != len(entities):
            raise ValidationError("duplicate entity ids in entity list")
        for e in entities:
            if not e:
                raise ValidationError("empty entity id")
            if not names.get(e):
                raise DataError(f"entity {e!r} has no names")
        self.entities: List[EntityId] = list(entities)
        self.names = {e: list(names[e]) for e in self.entities}
        self.index: Dict[EntityId, int] = {e: i for i, e in enumerate(self.entities)}
        self.triplets: List[Tuple[EntityId, str, EntityId]] = []
        for i, (s, r, o) in enumerate(triplets):
            if s not in self.index:
                raise ValidationError(f"triplet {i + 1}: unknown subject {s!r}")
            if o not in self.index:
                raise ValidationError(f"triplet {i + 1}: unknown object {o!r}")
            self.triplets.append((s, r, o))
        self.entity_dim = entity_dim
        if embeddings is None:
            embeddings = np.zeros((len(self.entities), entity_dim), dtype=np.float32)
        if embeddings.shape != (len(self.entities), entity_dim):
            raise ValidationError(
                f"embedding table shape {embeddings.shape} does not match "
                f"({len(self.entities)}, {entity_dim})"
            )
        self.embeddings = Tensor(embeddings, requires_grad=False)

    def __len__(self) -> int:
        return len(self.entities)

    @property
    def relations(self) -> List[str]:
        seen: Dict[str, None] = {}
        for _, r, _ in self.triplets:
            seen.setdefault(r, None)
        return list(seen)

    def preferred_name(self, entity: EntityId) -> str:
        return self.names[entity][0]

    def all_names(self, entity: EntityId) -> List[str]:
        return self.names[entity]

    def entity_order_digest(self) -> str:
        h = hashlib.sha256("\n".join(self.entities).encode("utf-8"))
        return h.hexdigest()

    def set_embeddings(self, table: np.ndarray) -> None:
        if table.shape != (len(self.entities), self.entity_dim):
            raise DataError(
                f"embedding table shape {table.shape} does not match "
                f"({len(self.entities)}, {self.entity_dim})"
            )
        self.embeddings = Tensor(
            table.astype(np.float32), requires_grad=self.embeddings.requires_grad
        )


def mention_map(doc: AnnotatedDocument) -> List[Optional[int]]:
    """Token index -> index of the covering mention, or None (NIL).

    Disjointness of mention spans makes the covering mention unique.
    """
    out: List[Optional[int]] = [None] * len(doc.tokens)
    for j, m in enumerate(doc.mentions):
        for i in range(m.start, m.end):
            out[i] = j
    return out


# -- TSV / JSONL loading and saving --------------------------------------------


def load_kb(
    lexicon_path, triplets_path=None, entity_dim: int = DEFAULT_ENTITY_DIM
) -> KnowledgeBase:
    entities: List[EntityId] = []
    names: Dict[EntityId, List[str]] = {}
    seen = set()
    for lineno, raw in enumerate(Path(lexicon_path).read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        parts = raw.split("\t")
        if len(parts) < 2:
            raise ValidationError(f"{lexicon_path}:{lineno}: expected at least 2 tab-separated fields")
        eid = parts[0].strip()
        if not eid:
            raise ValidationError(f"{lexicon_path}:{lineno}: empty entity id")
        if eid in seen:
            raise ValidationError(f"{lexicon_path}:{lineno}: duplicate entity id {eid!r}")
        seen.add(eid)
        preferred = parts[1].strip()
        if not preferred:
            raise ValidationError(f"{lexicon_path}:{lineno}: empty preferred name")
        syns = []
        if len(parts) >= 3 and parts[2].strip():
            syns = [s.strip() for s in parts[2].split("|") if s.strip()]
        entities.append(eid)
        names[eid] = [preferred] + syns

    triplets: List[Tuple[EntityId, str, EntityId]] = []
    if triplets_path is not None:
        known = set(entities)
        for lineno, raw in enumerate(Path(triplets_path).read_text(encoding="utf-8").splitlines(), 1):
            if not raw.strip():
                continue
            parts = raw.split("\t")
            if len(parts) != 3:
                raise ValidationError(f"{triplets_path}:{lineno}: expected 3 tab-separated fields")
            s, r, o = (p.strip() for p in parts)
            if s not in known:
                raise ValidationError(f"{triplets_path}:{lineno}: unknown subject {s!r}")
            if o not in known:
                raise ValidationError(f"{triplets_path}:{lineno}: unknown object {o!r}")
            if not r:
                raise ValidationError(f"{triplets_path}:{lineno}: empty relation name")
            triplets.append((s, r, o))

    return KnowledgeBase(entities, names, triplets, entity_dim=entity_dim)


def save_kb(kb: KnowledgeBase, lexicon_path, triplets_path) -> None:
    lex_lines = []
    for eid in kb.entities:
        ns = kb.names[eid]
        lex_lines.append(f"{eid}\t{ns[0]}\t{'|'.join(ns[1:])}")
    Path(lexicon_path).write_text("\n".join(lex_lines) + "\n", encoding="utf-8")
    trip_lines = [f"{s}\t{r}\t{o}" for s, r, o in kb.triplets]
    Path(triplets_path).write_text(
        "\n".join(trip_lines) + ("\n" if trip_lines else ""), encoding="utf-8"
    )


def load_corpus(path, kb: Optional[KnowledgeBase] = None) -> List[AnnotatedDocument]:
    docs: List[AnnotatedDocument] = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
        if "tokens" not in obj:
            raise ValidationError(f"{path}:{lineno}: missing 'tokens'")
        mentions = []
        for m in obj.get("mentions", []):
            cui = m.get("cui")
            if cui is not None and kb is not None and cui not in kb.index:
                raise ValidationError(f"{path}:{lineno}: unknown cui {cui!r}")
            mentions.append(Mention(int(m["start"]), int(m["end"]), cui))
        try:
            docs.append(AnnotatedDocument(list(obj["tokens"]), mentions).validate())
        except DataError as exc:
            raise ValidationError(f"{path}:{lineno}: {exc}") from exc
    return docs


def save_corpus(docs: Sequence[AnnotatedDocument], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            fh.write(json.dumps(
                {"tokens": doc.tokens, "mentions": [m.as_json() for m in doc.mentions]},
                ensure_ascii=False,
            ))
            fh.write("\n")
