"""Token input encodings and the two edge-feature constructions.

Per-token inputs are the concatenation of a contextual vector (from a
pluggable provider), three trainable symbol embeddings (POS, deprel,
NER) and a 2-row word-type embedding flagging entity tokens.

Edge features come in two flavors. The frequency-based kind (dref) keys
a trainable vector on the (POS, POS, deprel) triple of the underlying
tree edge, with corpus frequency ratios kept alongside. The
connection-type kind (ctef) marks, per attention direction, whether the
attended-from vertex is an entity token (all-ones) or not (all-zeros).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .corpus import EntitySpan, Sentence, Vocabs
from .graph import SubGraph

__all__ = [
    "FeatureError",
    "EmbeddingProvider",
    "HashedEmbeddingProvider",
    "FileEmbeddingProvider",
    "FeatureEmbeddings",
    "DrefTable",
    "EdgeFeatureAssignment",
    "EDGE_MODES",
    "build_dref_table",
    "dref_edge_features",
    "ctef_edge_features",
    "edge_features",
    "attention_pairs",
    "encode_tokens",
]

EDGE_MODES = ("none", "dref", "ctef", "dref+ctef")


class FeatureError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Contextual embedding providers


class EmbeddingProvider:
    """Maps a sentence to one contextual vector per token."""

    dim: int

    def vectors(self, sentence: Sentence) -> np.ndarray:
        raise NotImplementedError


class HashedEmbeddingProvider(EmbeddingProvider):
    """Deterministic fallback: hash (surface, seed) to a pseudo-random vector.

    The same surface always maps to the same unit-variance vector, across
    runs and platforms.
    """

    def __init__(self, dim: int = 768, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self._cache: dict[str, np.ndarray] = {}

    def _vector(self, surface: str) -> np.ndarray:
        cached = self._cache.get(surface)
        if cached is None:
            digest = hashlib.blake2b(
                f"{self.seed}\x00{surface}".encode("utf-8"), digest_size=8
            ).digest()
            rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest, "little")))
            cached = rng.standard_normal(self.dim)
            self._cache[surface] = cached
        return cached

    def vectors(self, sentence: Sentence) -> np.ndarray:
        return np.stack([self._vector(t.surface) for t in sentence.tokens])


class FileEmbeddingProvider(EmbeddingProvider):
    """Precomputed vectors keyed by (instance id, token index).

    File format: one record per token,
    ``instance_id <TAB> token_index <TAB> v1 v2 ... vD`` with
    space-separated decimals.
    """

    def __init__(self, text: str, dim: int = 768):
        self.dim = dim
        self._table: dict[tuple[str, int], np.ndarray] = {}
        for lineno, line in enumerate(text.split("\n"), start=1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FeatureError(f"embedding file line {lineno}: expected 3 tab-separated fields")
            vec = np.array([float(x) for x in parts[2].split()], dtype=np.float64)
            if vec.shape[0] != dim:
                raise FeatureError(
                    f"embedding file line {lineno}: expected {dim} values, got {vec.shape[0]}"
                )
            self._table[(parts[0], int(parts[1]))] = vec

    @classmethod
    def from_path(cls, path: str, dim: int = 768) -> "FileEmbeddingProvider":
        with open(path, encoding="utf-8") as f:
            return cls(f.read(), dim)

    def vectors(self, sentence: Sentence) -> np.ndarray:
        key = str(sentence.instance_id)
        rows = []
        for t in sentence.tokens:
            vec = self._table.get((key, t.index))
            if vec is None:
                raise FeatureError(
                    f"no precomputed vector for instance {sentence.instance_id} token {t.index}"
                )
            rows.append(vec)
        return np.stack(rows)


# ---------------------------------------------------------------------------
# Trainable per-token feature embeddings


class FeatureEmbeddings:
    """Trainable POS/deprel/NER/word-type tables sized from the vocabularies."""

    def __init__(
        self,
        vocabs: Vocabs,
        d_ctx: int = 768,
        d_f: int = 40,
        d_wt: int = 10,
        rng: np.random.Generator | None = None,
    ):
        if not (vocabs.pos.frozen and vocabs.deprel.frozen and vocabs.ner.frozen):
            raise FeatureError("vocabularies must be frozen before building embeddings")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.vocabs = vocabs
        self.d_ctx = d_ctx
        self.d_f = d_f
        self.d_wt = d_wt
        self.pos = nm.parameter(nm.uniform_init(rng, (len(vocabs.pos), d_f), d_f))
        self.deprel = nm.parameter(nm.uniform_init(rng, (len(vocabs.deprel), d_f), d_f))
        self.ner = nm.parameter(nm.uniform_init(rng, (len(vocabs.ner), d_f), d_f))
        self.word_type = nm.parameter(nm.uniform_init(rng, (2, d_wt), d_wt))

    @property
    def input_dim(self) -> int:
        return self.d_ctx + 3 * self.d_f + self.d_wt

    def parameters(self) -> dict[str, nm.Node]:
        return {
            "embed.pos": self.pos,
            "embed.deprel": self.deprel,
            "embed.ner": self.ner,
            "embed.word_type": self.word_type,
        }


def encode_tokens(
    sentence: Sentence,
    sg: SubGraph,
    provider: EmbeddingProvider,
    emb: FeatureEmbeddings,
) -> nm.Node:
    """Per-vertex input matrix [ctx ; pos ; deprel ; ner ; word-type].

    Rows follow the sub-graph vertex order. Output width is
    d_ctx + 3*d_f + d_wt for every vertex.
    """
    ctx_all = provider.vectors(sentence)
    if ctx_all.shape[1] != emb.d_ctx:
        raise FeatureError(
            f"provider dimension {ctx_all.shape[1]} != expected {emb.d_ctx}"
        )
    idx = sg.vertices
    tokens = [sentence.tokens[i] for i in idx]
    ctx = nm.constant(ctx_all[idx])
    pos_rows = nm.gather_rows(emb.pos, [emb.vocabs.pos.index(t.pos) for t in tokens])
    dep_rows = nm.gather_rows(emb.deprel, [emb.vocabs.deprel.index(t.deprel) for t in tokens])
    ner_rows = nm.gather_rows(emb.ner, [emb.vocabs.ner.index(t.ner) for t in tokens])
    wt_rows = nm.gather_rows(
        emb.word_type, [1 if sentence.entity_token(i) else 0 for i in idx]
    )
    return nm.concat([ctx, pos_rows, dep_rows, ner_rows, wt_rows], axis=1)


# ---------------------------------------------------------------------------
# Frequency-based dependency edge features


class DrefTable:
    """Frequency statistics over (head-POS, dependent-POS, deprel) triples.

    Each observed triple owns one row of a trainable embedding matrix;
    row 0 is the unseen-triple fallback and row 1 the self-loop row. The
    matrix itself lives in the model; this table only maps triples to
    rows and keeps counts and frequency ratios.
    """

    UNK_ROW = 0
    SELF_ROW = 1
    RESERVED_ROWS = 2

    def __init__(self, counts: dict[tuple[str, str, str], int], total: int, d_e: int = 40):
        if total <= 0 or not counts:
            raise FeatureError("empty dependency-triple statistics")
        self.counts = dict(counts)
        self.total = total
        self.d_e = d_e
        self.ratio = {t: c / total for t, c in self.counts.items()}
        self.row = {t: i + self.RESERVED_ROWS for i, t in enumerate(self.counts)}

    @property
    def num_rows(self) -> int:
        return len(self.counts) + self.RESERVED_ROWS

    def row_for(self, triple: tuple[str, str, str]) -> int:
        return self.row.get(triple, self.UNK_ROW)

    def ratio_for(self, triple: tuple[str, str, str]) -> float:
        return self.ratio.get(triple, 1.0)

    def to_json_dict(self) -> dict:
        return {
            "|".join(t): {"count": c, "ratio": self.ratio[t]}
            for t, c in self.counts.items()
        }


def build_dref_table(train: list[Sentence], d_e: int = 40) -> DrefTable:
    """Count every tree edge of the training split as one triple.

    The triple is (head POS, dependent POS, deprel of the dependent);
    ratios are counts over the total number of edges seen.
    """
    if not train:
        raise FeatureError("empty corpus")
    counts: dict[tuple[str, str, str], int] = {}
    total = 0
    for sentence in train:
        if not sentence.parsed:
            raise FeatureError(f"instance {sentence.instance_id}: sentence has no parse")
        for t in sentence.tokens:
            if t.head is None:
                continue
            head = sentence.tokens[t.head]
            triple = (head.pos, t.pos, t.deprel)
            counts[triple] = counts.get(triple, 0) + 1
            total += 1
    return DrefTable(counts, total, d_e)


# ---------------------------------------------------------------------------
# Edge feature assignment over a sub-graph


@dataclass
class PairFeature:
    dref_row: int | None = None
    dref_ratio: float = 1.0
    entity_source: bool | None = None


@dataclass
class EdgeFeatureAssignment:
    """Per ordered attention pair (center i, neighbor j) feature payload."""

    mode: str
    d_e: int
    pairs: dict[tuple[int, int], PairFeature]

    def feature_vector(
        self,
        i: int,
        j: int,
        dref_values: np.ndarray | None = None,
        scale_by_ratio: bool = False,
    ) -> np.ndarray:
        """Materialize the d_e vector for one pair (for inspection/tests)."""
        pf = self.pairs[(i, j)]
        vec = np.zeros(self.d_e)
        if pf.dref_row is not None:
            if dref_values is None:
                raise FeatureError("dref feature requested without embedding values")
            row = dref_values[pf.dref_row].copy()
            if scale_by_ratio:
                row *= pf.dref_ratio
            vec += row
        if pf.entity_source is not None and pf.entity_source:
            vec += np.ones(self.d_e)
        return vec


def attention_pairs(sg: SubGraph) -> tuple[list[list[int]], list[tuple[int, int]]]:
    """Neighborhoods (self included, ascending) and the flat ordered pair list.

    Pairs are grouped by center vertex so per-vertex score rows are
    contiguous slices of a flat score column.
    """
    size = len(sg)
    nbrs = []
    pairs = []
    for i in range(size):
        around = sorted(set(np.nonzero(sg.adjacency[i])[0].tolist()) | {i})
        nbrs.append(around)
        pairs.extend((i, j) for j in around)
    return nbrs, pairs


def dref_edge_features(sg: SubGraph, sentence: Sentence, table: DrefTable) -> EdgeFeatureAssignment:
    """Assign a dref embedding row to every ordered pair of the sub-graph.

    The lookup key for pair (i, j) is (POS of i, POS of j, deprel of the
    underlying tree edge); unseen keys map to the fallback row and
    self-loops to the dedicated self-edge row.
    """
    _, pairs = attention_pairs(sg)
    assignment: dict[tuple[int, int], PairFeature] = {}
    for i, j in pairs:
        if i == j:
            assignment[(i, j)] = PairFeature(dref_row=DrefTable.SELF_ROW)
            continue
        u, v = sg.vertices[i], sg.vertices[j]
        tok_u, tok_v = sentence.tokens[u], sentence.tokens[v]
        if tok_v.head == u:
            deprel = tok_v.deprel
        elif tok_u.head == v:
            deprel = tok_u.deprel
        else:
            raise FeatureError(f"pair ({u},{v}) is not an edge of the dependency tree")
        triple = (tok_u.pos, tok_v.pos, deprel)
        assignment[(i, j)] = PairFeature(
            dref_row=table.row_for(triple), dref_ratio=table.ratio_for(triple)
        )
    return EdgeFeatureAssignment("dref", table.d_e, assignment)


def ctef_edge_features(
    sg: SubGraph, e1: EntitySpan, e2: EntitySpan, d_e: int
) -> EdgeFeatureAssignment:
    """All-ones when the attended-from vertex j is an entity token, else zeros.

    The assignment is directional: the two orientations of one undirected
    edge differ whenever exactly one endpoint is an entity token.
    """
    _, pairs = attention_pairs(sg)
    assignment = {}
    for i, j in pairs:
        source = sg.vertices[j]
        assignment[(i, j)] = PairFeature(
            entity_source=e1.covers(source) or e2.covers(source)
        )
    return EdgeFeatureAssignment("ctef", d_e, assignment)


def edge_features(
    sg: SubGraph,
    sentence: Sentence,
    mode: str,
    d_e: int,
    table: DrefTable | None = None,
) -> EdgeFeatureAssignment | None:
    """Dispatch on edge mode; the combined mode sums both feature kinds."""
    if mode not in EDGE_MODES:
        raise FeatureError(f"unknown edge mode {mode!r}")
    if mode == "none":
        return None
    if mode == "ctef":
        return ctef_edge_features(sg, sentence.e1, sentence.e2, d_e)
    if table is None:
        raise FeatureError(f"edge mode {mode!r} needs a dependency-triple table")
    dref = dref_edge_features(sg, sentence, table)
    if mode == "dref":
        return dref
    ctef = ctef_edge_features(sg, sentence.e1, sentence.e2, d_e)
    combined = {
        pair: PairFeature(
            dref_row=dref.pairs[pair].dref_row,
            dref_ratio=dref.pairs[pair].dref_ratio,
            entity_source=ctef.pairs[pair].entity_source,
        )
        for pair in dref.pairs
    }
    return EdgeFeatureAssignment("dref+ctef", d_e, combined)
