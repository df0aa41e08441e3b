import numpy as np
import pytest

from semkg.graph import KnowledgeGraph, Triple, build_positive_index, load_graph
from semkg.synthetic import (generate_compositional_benchmark,
                             generate_ontology_benchmark, write_dataset)


def make_graph(entity_descs, relation_descs, train, valid=(), test=(),
               labels_valid=None, labels_test=None) -> KnowledgeGraph:
    """In-memory graph straight from id-level pieces (no files)."""
    train, valid, test = ([Triple(*t) for t in split]
                          for split in (train, valid, test))
    return KnowledgeGraph(
        entities=[f"e{i}" for i in range(len(entity_descs))],
        relations=[f"r{i}" for i in range(len(relation_descs))],
        entity_descriptions=dict(enumerate(entity_descs)),
        relation_descriptions=dict(enumerate(relation_descs)),
        train=train, valid=valid, test=test,
        labels_valid=labels_valid, labels_test=labels_test,
        positive_index=build_positive_index(train, valid, test,
                                            labels_valid, labels_test),
    )


@pytest.fixture(scope="session")
def ontology_graph(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "ontology"
    return generate_ontology_benchmark(str(out))


@pytest.fixture(scope="session")
def ontology_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "ontology_dir"
    generate_ontology_benchmark(str(out))
    return str(out)


@pytest.fixture(scope="session")
def compositional_graph(tmp_path_factory):
    out = tmp_path_factory.mktemp("data") / "compositional"
    return generate_compositional_benchmark(str(out))


@pytest.fixture
def tiny_dataset_dir(tmp_path):
    """Four entities, two relations, a labeled test split."""
    out = tmp_path / "tiny"
    write_dataset(
        str(out),
        entities=[("alpha", "the alpha node"), ("beta", "the beta node"),
                  ("gamma", "the gamma node"), ("delta", "the delta node")],
        relations=[("linked_to", "linked to"), ("parent_of", "parent of")],
        train=[("alpha", "linked_to", "beta"), ("beta", "linked_to", "gamma"),
               ("gamma", "parent_of", "delta"), ("alpha", "parent_of", "gamma")],
        valid=[("alpha", "linked_to", "gamma")],
        test=[("beta", "parent_of", "delta"), ("delta", "linked_to", "alpha")],
        test_labels=[True, False],
    )
    return str(out)


@pytest.fixture
def tiny_graph(tiny_dataset_dir):
    return load_graph(tiny_dataset_dir)


def brute_force_filtered_rank(scorer, g, query, side):
    """Independent ranking oracle: sort every candidate, drop other known
    positives, and average the positions the gold could occupy within its
    tie block."""
    if side == "head":
        candidates = [Triple(c, query.relation, query.tail)
                      for c in range(g.num_entities)]
        gold_id = query.head
    else:
        candidates = [Triple(query.head, query.relation, c)
                      for c in range(g.num_entities)]
        gold_id = query.tail
    kept = []
    for cid, cand in enumerate(candidates):
        if cid != gold_id and cand.as_tuple() in g.positive_index:
            continue
        kept.append(scorer.score_one(*cand.as_tuple()))
    scores = sorted(kept, reverse=True)
    gold_score = scorer.score_one(*query.as_tuple())
    positions = [i + 1 for i, s in enumerate(scores) if s == gold_score]
    return sum(positions) / len(positions)


def fd_gradient(loss_fn, param: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar loss over one tensor."""
    grad = np.zeros_like(param)
    it = np.nditer(param, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = param[idx]
        param[idx] = orig + eps
        f_plus = loss_fn()
        param[idx] = orig - eps
        f_minus = loss_fn()
        param[idx] = orig
        grad[idx] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def grad_close(analytic: np.ndarray, numeric: np.ndarray, rtol: float = 1e-4,
               atol: float = 1e-9) -> bool:
    """Elementwise |a - n| <= rtol * max(|a|, |n|) + atol."""
    bound = rtol * np.maximum(np.abs(analytic), np.abs(numeric)) + atol
    return bool(np.all(np.abs(analytic - numeric) <= bound))
