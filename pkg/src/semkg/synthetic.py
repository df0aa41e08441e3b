"""Deterministic benchmark generators.

Two families: an ontology-style graph matching the scale of the public
135-entity / 46-relation biomedical benchmark (groups of entities linked by
typed relations), and a small compositional-attribute graph whose triple
truth is decidable from shared description tokens, used to probe whether a
trained model actually exploits the text channel.
"""

from __future__ import annotations

import itertools
import os

import numpy as np

from .graph import KnowledgeGraph, load_graph

GROUP_WORDS = [
    "organism", "anatomy", "substance", "procedure", "finding",
    "device", "occupation", "organization", "idea", "activity",
    "phenomenon", "region", "attribute", "event", "structure",
]

COLORS = ["crimson", "azure", "jade", "amber"]
SHAPES = ["cube", "sphere", "cone", "prism"]
SIZES = ["small", "large"]


def write_dataset(out_dir: str,
                  entities: list[tuple[str, str]],
                  relations: list[tuple[str, str]],
                  train: list[tuple[str, str, str]],
                  valid: list[tuple[str, str, str]],
                  test: list[tuple[str, str, str]],
                  valid_labels: list[bool] | None = None,
                  test_labels: list[bool] | None = None) -> None:
    """Write the five dataset files for the given name-level content."""
    os.makedirs(out_dir, exist_ok=True)

    def vocab_file(name, rows):
        with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
            for entry, desc in rows:
                fh.write(f"{entry}\t{desc}\n")

    def triple_file(name, rows, labels):
        with open(os.path.join(out_dir, name), "w", encoding="utf-8") as fh:
            for i, (h, r, t) in enumerate(rows):
                line = f"{h}\t{r}\t{t}"
                if labels is not None:
                    line += "\t1" if labels[i] else "\t-1"
                fh.write(line + "\n")

    vocab_file("entity2text.tsv", entities)
    vocab_file("relation2text.tsv", relations)
    triple_file("train.tsv", train, None)
    triple_file("valid.tsv", valid, valid_labels)
    triple_file("test.tsv", test, test_labels)


def generate_ontology_benchmark(out_dir: str, n_entities: int = 135,
                                n_relations: int = 46, n_groups: int = 10,
                                density: float = 0.85, seed: int = 7,
                                split=(0.8, 0.1, 0.1)) -> KnowledgeGraph:
    """Groups of entities connected by typed group-to-group relations.

    Every relation links one domain group to one range group; a fraction
    ``density`` of the induced entity pairs become true triples, shuffled
    into train/valid/test splits.  The default sizes mirror the public
    135-entity biomedical benchmark.
    """
    rng = np.random.default_rng(seed)
    group_of = rng.permutation(n_entities) % n_groups
    members = [np.flatnonzero(group_of == gidx) for gidx in range(n_groups)]

    entities = []
    for i in range(n_entities):
        word = GROUP_WORDS[group_of[i] % len(GROUP_WORDS)]
        entities.append((f"concept_{i:03d}", f"{word} concept {i:03d}"))

    relations = []
    triples: list[tuple[int, int, int]] = []
    for j in range(n_relations):
        domain = j % n_groups
        rng_group = int(rng.integers(n_groups))
        words = (GROUP_WORDS[domain % len(GROUP_WORDS)],
                 GROUP_WORDS[rng_group % len(GROUP_WORDS)])
        relations.append((f"rel_{j:02d}", f"rel {j:02d} links {words[0]} to {words[1]}"))
        for h, t in itertools.product(members[domain], members[rng_group]):
            if h == t:
                continue
            if rng.random() < density:
                triples.append((int(h), j, int(t)))

    order = rng.permutation(len(triples))
    n_train = int(split[0] * len(triples))
    n_valid = int(split[1] * len(triples))

    def names(idx_list):
        return [(entities[h][0], relations[r][0], entities[t][0])
                for h, r, t in (triples[i] for i in idx_list)]

    write_dataset(out_dir, entities, relations,
                  train=names(order[:n_train]),
                  valid=names(order[n_train:n_train + n_valid]),
                  test=names(order[n_train + n_valid:]))
    return load_graph(out_dir)


def _attribute_assignment(n_entities: int, rng: np.random.Generator):
    """Balanced color/shape/size assignment, independently shuffled."""
    def balanced(values):
        reps = -(-n_entities // len(values))
        arr = np.array((values * reps)[:n_entities])
        return arr[rng.permutation(n_entities)]

    return balanced(COLORS), balanced(SHAPES), balanced(SIZES)


def _rule_true(rel: str, a: int, b: int, color, shape, size) -> bool:
    if a == b:
        return False
    if rel == "shares color":
        return color[a] == color[b]
    if rel == "shares shape":
        return shape[a] == shape[b]
    if rel == "same size":
        return size[a] == size[b]
    if rel == "smaller than":
        return size[a] == "small" and size[b] == "large"
    raise ValueError(rel)


def generate_compositional_benchmark(out_dir: str, n_entities: int = 40,
                                     seed: int = 11,
                                     shuffle_descriptions: bool = False,
                                     blinded_per_relation: int = 4,
                                     max_train_per_relation: int | None = 250,
                                     valid_share: float = 1 / 3) -> KnowledgeGraph:
    """Attribute-rule graph whose triple truth is readable off the tokens.

    Each entity gets a unique name token plus size/color/shape attribute
    tokens; four relations hold exactly when the corresponding attributes
    match.  A few entities per relation are "blinded": every true pair of
    theirs under that relation is held out of training and placed in the
    labeled valid/test splits, so classifying them requires reading the
    attribute tokens.  (Keeping all such pairs in the eval splits also
    keeps them in the filter index, so negative sampling never teaches
    that a blinded pair is false.)  ``shuffle_descriptions`` permutes the
    attribute tokens across entities while leaving the relation rules on
    the original attributes, which severs the text channel but preserves
    the token statistics.
    """
    rng = np.random.default_rng(seed)
    color, shape, size = _attribute_assignment(n_entities, rng)

    attr_order = (rng.permutation(n_entities) if shuffle_descriptions
                  else np.arange(n_entities))
    entities = []
    for i in range(n_entities):
        j = attr_order[i]
        entities.append((f"item{i:02d}",
                         f"item{i:02d} {size[j]} {color[j]} {shape[j]}"))
    rel_names = ["shares color", "shares shape", "same size", "smaller than"]
    relations = [(name.replace(" ", "_"), name) for name in rel_names]

    all_true: dict[str, list[tuple[int, int]]] = {name: [] for name in rel_names}
    for name in rel_names:
        for a in range(n_entities):
            for b in range(n_entities):
                if _rule_true(name, a, b, color, shape, size):
                    all_true[name].append((a, b))

    # one pool per attribute family: both size relations share a pool, or
    # an entity blinded for one would leak its size through the other
    pool = rng.permutation(n_entities)
    pools = {family: set(int(e) for e in pool[i * blinded_per_relation:
                                              (i + 1) * blinded_per_relation])
             for i, family in enumerate(("color", "shape", "size"))}
    blinded = {"shares color": pools["color"], "shares shape": pools["shape"],
               "same size": pools["size"], "smaller than": pools["size"]}

    held_out: dict[str, list[tuple[int, int]]] = {name: [] for name in rel_names}
    train_pairs: list[tuple[str, int, int]] = []
    for name in rel_names:
        kept = []
        for a, b in all_true[name]:
            if a in blinded[name] or b in blinded[name]:
                held_out[name].append((a, b))
            else:
                kept.append((name, a, b))
        rng.shuffle(kept)
        if max_train_per_relation is not None:
            kept = kept[:max_train_per_relation]
        train_pairs.extend(kept)
        rng.shuffle(held_out[name])

    def false_pair(name: str, a: int) -> tuple[int, int]:
        while True:
            b = int(rng.integers(n_entities))
            if b != a and not _rule_true(name, a, b, color, shape, size):
                return a, b

    # every held-out positive goes into an eval split, paired with one
    # rule-false negative so both splits stay exactly balanced
    valid_rows: list[tuple[str, int, int, bool]] = []
    test_rows: list[tuple[str, int, int, bool]] = []
    for name in rel_names:
        n_valid = int(valid_share * len(held_out[name]))
        for i, (a, b) in enumerate(held_out[name]):
            rows = valid_rows if i < n_valid else test_rows
            rows.append((name, a, b, True))
            fa, fb = false_pair(name, a)
            rows.append((name, fa, fb, False))
    rng.shuffle(valid_rows)
    rng.shuffle(test_rows)

    rel_id = {name: idx for idx, name in enumerate(rel_names)}

    def to_names(rows):
        return [(entities[a][0], relations[rel_id[name]][0], entities[b][0])
                for name, a, b in rows]

    train = to_names(train_pairs)
    valid = to_names([(name, a, b) for name, a, b, _ in valid_rows])
    test = to_names([(name, a, b) for name, a, b, _ in test_rows])
    write_dataset(out_dir, entities, relations, train, valid, test,
                  valid_labels=[label for *_, label in valid_rows],
                  test_labels=[label for *_, label in test_rows])
    return load_graph(out_dir)
