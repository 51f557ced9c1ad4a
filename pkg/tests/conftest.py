"""Shared fixtures: hand-built parses and synthetic corpora."""

from __future__ import annotations

import numpy as np
import pytest

from relgat.corpus import parse_conllu_annotated

# Worked example: SDP {ridges, uprises, from, surge}, e1 graph
# {ridges, uprises}, e2 graph {surge, from, the}.
FIG_EXAMPLE_CONLLU = """\
# id = 0
# e1 = 0 0
# e2 = 4 4
# label = Other
1\tridges\t_\tNOUN\t_\t_\t2\tnsubj\t_\t_
2\tuprises\t_\tVERB\t_\t_\t0\troot\t_\t_
3\tfrom\t_\tADP\t_\t_\t2\tprep\t_\t_
4\tthe\t_\tDET\t_\t_\t5\tdet\t_\t_
5\tsurge\t_\tNOUN\t_\t_\t3\tpobj\t_\t_
"""

POLLEN_CONLLU = """\
# id = 1
# e1 = 1 1
# e2 = 4 4
# label = Cause-Effect(e1,e2)
1\tThe\t_\tDET\t_\t_\t2\tdet\t_\t_
2\tpollen\t_\tNOUN\t_\t_\t3\tnsubj\t_\tNER=THING
3\tcauses\t_\tVERB\t_\t_\t0\troot\t_\t_
4\tthe\t_\tDET\t_\t_\t5\tdet\t_\t_
5\tallergy\t_\tNOUN\t_\t_\t3\tobj\t_\tNER=THING
6\t.\t_\tPUNCT\t_\t_\t3\tpunct\t_\t_
"""


def conllu_block(instance_id, rows, e1, e2, label=None):
    """rows: (surface, pos, head_1_based, deprel[, ner]) tuples."""
    lines = [f"# id = {instance_id}", f"# e1 = {e1[0]} {e1[1]}", f"# e2 = {e2[0]} {e2[1]}"]
    if label is not None:
        lines.append(f"# label = {label}")
    for i, row in enumerate(rows, start=1):
        surface, pos, head, deprel = row[:4]
        ner = row[4] if len(row) > 4 else None
        misc = f"NER={ner}" if ner else "_"
        lines.append(f"{i}\t{surface}\t_\t{pos}\t_\t_\t{head}\t{deprel}\t_\t{misc}")
    return "\n".join(lines) + "\n\n"


# ---------------------------------------------------------------------------
# Tiny two-relation corpus: verb and noun pools are disjoint per class, so
# the task is trivially separable (capacity check material).

_CAUSE_NOUNS = ["storm", "quake", "flood", "virus", "fire", "wind", "heat", "frost", "wave", "blast"]
_BOX_NOUNS = ["box", "jar", "bag", "tank", "crate", "vault", "chest", "drum", "case", "bin"]


def _svo_block(instance_id, n1, verb, n2, label):
    rows = [
        ("the", "DET", 2, "det"),
        (n1, "NOUN", 3, "nsubj", "THING"),
        (verb, "VERB", 0, "root"),
        ("the", "DET", 5, "det"),
        (n2, "NOUN", 3, "obj", "THING"),
        (".", "PUNCT", 3, "punct"),
    ]
    return conllu_block(instance_id, rows, (1, 1), (4, 4), label)


def build_toy_corpus():
    blocks = []
    for i in range(10):
        blocks.append(_svo_block(i, _CAUSE_NOUNS[i], "causes", _CAUSE_NOUNS[(i + 3) % 10], "Cause-Effect(e1,e2)"))
    for i in range(10):
        blocks.append(_svo_block(10 + i, _BOX_NOUNS[i], "holds", _BOX_NOUNS[(i + 3) % 10], "Content-Container(e2,e1)"))
    return parse_conllu_annotated("".join(blocks))


# ---------------------------------------------------------------------------
# Structure-labeled synthetic corpus: noun and verb pools are shared across
# the two patterns, so only the parse shape around the entities carries the
# label signal.

_SHARED_NOUNS = [
    "rock", "tree", "lamp", "door", "wheel", "glass", "chair", "table", "brick", "cable",
    "panel", "motor", "valve", "crane", "fence", "tower", "shelf", "pipe", "plate", "spring",
]
_SHARED_VERBS = ["moved", "turned", "settled", "shifted", "stood", "rested", "leaned", "stayed"]


def _pattern_subject_object(instance_id, n1, verb, n2):
    # e1 is the subject, e2 the direct object of the same verb
    rows = [
        ("the", "DET", 2, "det"),
        (n1, "NOUN", 3, "nsubj"),
        (verb, "VERB", 0, "root"),
        ("the", "DET", 5, "det"),
        (n2, "NOUN", 3, "obj"),
        (".", "PUNCT", 3, "punct"),
    ]
    return conllu_block(instance_id, rows, (1, 1), (4, 4), "Cause-Effect(e1,e2)")


def _pattern_preposition(instance_id, n1, verb, n2):
    # e2 hangs off a preposition attached to e1
    rows = [
        ("the", "DET", 2, "det"),
        (n1, "NOUN", 6, "nsubj"),
        ("of", "ADP", 2, "prep"),
        ("the", "DET", 5, "det"),
        (n2, "NOUN", 3, "pobj"),
        (verb, "VERB", 0, "root"),
        (".", "PUNCT", 6, "punct"),
    ]
    return conllu_block(instance_id, rows, (1, 1), (4, 4), "Member-Collection(e2,e1)")


def build_structure_corpus(n: int, seed: int = 0):
    """n sentences whose label is decided by entity-neighborhood structure."""
    rng = np.random.default_rng(seed)
    blocks = []
    for i in range(n):
        n1, n2 = rng.choice(_SHARED_NOUNS, size=2, replace=False)
        verb = str(rng.choice(_SHARED_VERBS))
        if i % 2 == 0:
            blocks.append(_pattern_subject_object(i, str(n1), verb, str(n2)))
        else:
            blocks.append(_pattern_preposition(i, str(n1), verb, str(n2)))
    return parse_conllu_annotated("".join(blocks))


# ---------------------------------------------------------------------------
# Random trees


def random_heads(rng: np.random.Generator, n: int) -> list[int | None]:
    """Random rooted tree as a head list (vertex 0 is the root)."""
    heads: list[int | None] = [None]
    for i in range(1, n):
        heads.append(int(rng.integers(0, i)))
    return heads


def brute_force_path(heads: list[int | None], u: int, v: int) -> list[int]:
    """Shortest simple path by exhaustive DFS over the undirected tree."""
    n = len(heads)
    adj = [[] for _ in range(n)]
    for child, head in enumerate(heads):
        if head is not None:
            adj[child].append(head)
            adj[head].append(child)
    best: list[list[int]] = []

    def walk(node, path):
        if node == v:
            best.append(list(path))
            return
        for nxt in adj[node]:
            if nxt not in path:
                path.append(nxt)
                walk(nxt, path)
                path.pop()

    walk(u, [u])
    return min(best, key=len)


@pytest.fixture
def fig_example_sentence():
    return parse_conllu_annotated(FIG_EXAMPLE_CONLLU)[0]


@pytest.fixture
def pollen_sentence():
    return parse_conllu_annotated(POLLEN_CONLLU)[0]


@pytest.fixture
def toy_corpus():
    return build_toy_corpus()
