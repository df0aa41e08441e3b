"""Knowledge-graph data model, TSV loaders, filter index, and subsampling.

A dataset directory holds five UTF-8 files: ``train.tsv``, ``valid.tsv``,
``test.tsv`` (one triple per line, tab-separated head/relation/tail names,
optionally a fourth ``1``/``-1`` label field on valid/test for classification
datasets), plus ``entity2text.tsv`` and ``relation2text.tsv`` (name, optional
free-text description).  The two text files define the entity and relation
vocabularies; ids are assigned in file order.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import GraphIntegrityError, GraphLoadError

TRIPLE_FILES = ("train.tsv", "valid.tsv", "test.tsv")
ENTITY_TEXT_FILE = "entity2text.tsv"
RELATION_TEXT_FILE = "relation2text.tsv"


@dataclass(frozen=True)
class Triple:
    """One (head, relation, tail) fact as integer ids into the vocabularies."""

    head: int
    relation: int
    tail: int

    def as_tuple(self):
        return (self.head, self.relation, self.tail)


@dataclass(frozen=True)
class SubsampleSpec:
    """Fraction of the training split to keep, and the shuffle seed."""

    fraction: float
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.fraction <= 1.0:
            raise ValueError(f"fraction must be in (0, 1], got {self.fraction}")


def normalize_text(text: str) -> str:
    """Collapse runs of whitespace to single spaces and strip the ends."""
    return " ".join(text.split())


@dataclass
class KnowledgeGraph:
    """Immutable-after-load container for one benchmark dataset.

    ``positive_index`` holds every gold-positive triple across the three
    splits; for labeled valid/test splits only label-true triples are
    indexed.  It backs both negative-sampling rejection and the filtered
    ranking protocol.
    """

    entities: list[str]
    relations: list[str]
    entity_descriptions: dict[int, str]
    relation_descriptions: dict[int, str]
    train: list[Triple]
    valid: list[Triple]
    test: list[Triple]
    labels_valid: list[bool] | None = None
    labels_test: list[bool] | None = None
    positive_index: set[tuple[int, int, int]] = field(default_factory=set)

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    def entity_description(self, entity_id: int) -> str:
        return self.entity_descriptions[entity_id]

    def relation_description(self, relation_id: int) -> str:
        return self.relation_descriptions[relation_id]

    def check_triple(self, t: Triple) -> None:
        if not (0 <= t.head < self.num_entities
                and 0 <= t.tail < self.num_entities
                and 0 <= t.relation < self.num_relations):
            raise ValueError(f"triple {t} out of range for |E|={self.num_entities}, "
                             f"|R|={self.num_relations}")


def is_known_positive(g: KnowledgeGraph, t: Triple) -> bool:
    """True iff the triple appears as a gold positive in any split."""
    g.check_triple(t)
    return t.as_tuple() in g.positive_index


def _read_vocab_file(path: str) -> tuple[list[str], dict[int, str]]:
    """Read a name/description file; ids are assigned in line order.

    A line with no description field (or an empty one) falls back to the
    name as its own description.
    """
    names: list[str] = []
    descriptions: dict[int, str] = {}
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            name, _, desc = line.partition("\t")
            name = name.strip()
            if name in seen:
                raise GraphIntegrityError(f"duplicate vocabulary entry {name!r}",
                                          path=path, line_no=line_no)
            idx = len(names)
            seen[name] = idx
            names.append(name)
            desc = normalize_text(desc)
            descriptions[idx] = desc if desc else normalize_text(name)
    return names, descriptions


def _read_triple_file(path: str, ent_ids: dict[str, int], rel_ids: dict[str, int],
                      allow_labels: bool) -> tuple[list[Triple], list[bool] | None]:
    triples: list[Triple] = []
    labels: list[bool] = []
    saw_label = False
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) not in (3, 4):
                raise GraphIntegrityError(
                    f"expected 3 or 4 tab-separated fields, got {len(fields)}",
                    path=path, line_no=line_no)
            head, rel, tail = (f.strip() for f in fields[:3])
            for name, ids, kind in ((head, ent_ids, "entity"),
                                    (rel, rel_ids, "relation"),
                                    (tail, ent_ids, "entity")):
                if name not in ids:
                    raise GraphIntegrityError(f"unknown {kind} {name!r}",
                                              path=path, line_no=line_no)
            if len(fields) == 4:
                if not allow_labels:
                    raise GraphIntegrityError("labels are only allowed on valid/test",
                                              path=path, line_no=line_no)
                flag = fields[3].strip()
                if flag not in ("1", "-1"):
                    raise GraphIntegrityError(f"label must be '1' or '-1', got {flag!r}",
                                              path=path, line_no=line_no)
                labels.append(flag == "1")
                saw_label = True
            elif saw_label:
                raise GraphIntegrityError("mixed labeled and unlabeled lines",
                                          path=path, line_no=line_no)
            triples.append(Triple(ent_ids[head], rel_ids[rel], ent_ids[tail]))
    if saw_label and len(labels) != len(triples):
        raise GraphIntegrityError("mixed labeled and unlabeled lines", path=path,
                                  line_no=None)
    return triples, labels if saw_label else None


def build_positive_index(train, valid, test, labels_valid=None, labels_test=None):
    """Union of the splits, restricted to label-true triples where labeled."""
    index: set[tuple[int, int, int]] = set()
    index.update(t.as_tuple() for t in train)
    for split, labels in ((valid, labels_valid), (test, labels_test)):
        if labels is None:
            index.update(t.as_tuple() for t in split)
        else:
            index.update(t.as_tuple() for t, keep in zip(split, labels) if keep)
    return index


def load_graph(data_dir: str, format: str = "tsv") -> KnowledgeGraph:
    """Load a dataset directory into a KnowledgeGraph.

    Raises GraphLoadError if a required file is missing and
    GraphIntegrityError (naming file and line) on malformed content.
    """
    if format != "tsv":
        raise ValueError(f"unsupported dataset format {format!r}")
    paths = {name: os.path.join(data_dir, name)
             for name in TRIPLE_FILES + (ENTITY_TEXT_FILE, RELATION_TEXT_FILE)}
    for name, path in paths.items():
        if not os.path.isfile(path):
            raise GraphLoadError(f"missing required file {name} in {data_dir}")

    entities, entity_descriptions = _read_vocab_file(paths[ENTITY_TEXT_FILE])
    relations, relation_descriptions = _read_vocab_file(paths[RELATION_TEXT_FILE])
    if not entities:
        raise GraphLoadError(f"{paths[ENTITY_TEXT_FILE]} defines no entities")
    if not relations:
        raise GraphLoadError(f"{paths[RELATION_TEXT_FILE]} defines no relations")
    ent_ids = {name: i for i, name in enumerate(entities)}
    rel_ids = {name: i for i, name in enumerate(relations)}

    train, _ = _read_triple_file(paths["train.tsv"], ent_ids, rel_ids, allow_labels=False)
    valid, labels_valid = _read_triple_file(paths["valid.tsv"], ent_ids, rel_ids,
                                            allow_labels=True)
    test, labels_test = _read_triple_file(paths["test.tsv"], ent_ids, rel_ids,
                                          allow_labels=True)

    return KnowledgeGraph(
        entities=entities,
        relations=relations,
        entity_descriptions=entity_descriptions,
        relation_descriptions=relation_descriptions,
        train=train,
        valid=valid,
        test=test,
        labels_valid=labels_valid,
        labels_test=labels_test,
        positive_index=build_positive_index(train, valid, test,
                                            labels_valid, labels_test),
    )


def save_graph(g: KnowledgeGraph, out_dir: str) -> None:
    """Write a graph back out in the dataset directory layout.

    Loading the result reproduces the graph exactly; saving it again is
    byte-identical (descriptions are stored whitespace-normalized).
    """
    os.makedirs(out_dir, exist_ok=True)

    def write_vocab(path, names, descriptions):
        with open(path, "w", encoding="utf-8") as fh:
            for i, name in enumerate(names):
                fh.write(f"{name}\t{descriptions[i]}\n")

    def write_triples(path, triples, labels):
        with open(path, "w", encoding="utf-8") as fh:
            for i, t in enumerate(triples):
                row = (f"{g.entities[t.head]}\t{g.relations[t.relation]}"
                       f"\t{g.entities[t.tail]}")
                if labels is not None:
                    row += "\t1" if labels[i] else "\t-1"
                fh.write(row + "\n")

    write_vocab(os.path.join(out_dir, ENTITY_TEXT_FILE), g.entities,
                g.entity_descriptions)
    write_vocab(os.path.join(out_dir, RELATION_TEXT_FILE), g.relations,
                g.relation_descriptions)
    write_triples(os.path.join(out_dir, "train.tsv"), g.train, None)
    write_triples(os.path.join(out_dir, "valid.tsv"), g.valid, g.labels_valid)
    write_triples(os.path.join(out_dir, "test.tsv"), g.test, g.labels_test)


def subsample_size(fraction: float, n: int) -> int:
    """round(fraction * n) with half-up rounding."""
    return int(math.floor(fraction * n + 0.5))


def subsample_train(g: KnowledgeGraph, spec: SubsampleSpec) -> KnowledgeGraph:
    """Copy of ``g`` with a seed-deterministic uniform subset of the train split.

    The valid/test splits and the positive index are left untouched so that
    filtered evaluation keeps full knowledge of the gold triples.
    """
    n = len(g.train)
    m = subsample_size(spec.fraction, n)
    if spec.fraction == 1.0:
        return replace(g, train=list(g.train))
    rng = np.random.default_rng(spec.seed)
    picked = np.sort(rng.permutation(n)[:m])
    return replace(g, train=[g.train[i] for i in picked])
