"""Hashtag text channel: segmentation, embedding, and neighbor transfer.

Hashtags are transferred to an image from its k nearest neighbor posts,
split into dictionary words (WordBreak), embedded with a pluggable word
embedding table, and mean-pooled into a fixed-dimension feature vector.
The KNN search is exact brute force; approximate indexing is out of scope.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from .errors import ConfigError, InputError

DEFAULT_NEIGHBORS = 150
SWEEP_NEIGHBOR_COUNTS = (25, 50, 100, 150, 200, 250)


@dataclass(frozen=True)
class Hashtag:
    """A normalized hashtag: lowercase, no '#', alphanumeric, nonempty."""

    raw: str

    def __post_init__(self):
        raw = self.raw
        if raw.startswith("#"):
            raw = raw[1:]
        raw = raw.lower()
        if not raw:
            raise InputError("empty hashtag")
        if not raw.isalnum():
            raise InputError(f"hashtag must be alphanumeric: {self.raw!r}")
        object.__setattr__(self, "raw", raw)

    def __str__(self) -> str:
        return self.raw


def as_hashtag(tag) -> Hashtag:
    return tag if isinstance(tag, Hashtag) else Hashtag(tag)


class SegDictionary:
    """Word list with rank scores (higher = more frequent) for WordBreak."""

    def __init__(self, entries: dict):
        if not entries:
            raise InputError("dictionary must not be empty")
        for word in entries:
            if not word or word != word.lower():
                raise InputError(f"dictionary words must be nonempty lowercase: {word!r}")
        self.entries = dict(entries)
        self.max_word_len = max(len(w) for w in entries)

    def __contains__(self, word: str) -> bool:
        return word in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def from_words(cls, words) -> "SegDictionary":
        """Build from a frequency-ordered word list; earlier words rank higher."""
        words = list(words)
        return cls({w: float(len(words) - i) for i, w in enumerate(words)})

    @classmethod
    def from_file(cls, path) -> "SegDictionary":
        """Load one word per line, with an optional second rank-score column."""
        words, scores = [], []
        with open(path) as fh:
            for line in fh:
                parts = line.split()
                if not parts:
                    continue
                words.append(parts[0])
                scores.append(float(parts[1]) if len(parts) > 1 else None)
        if all(s is None for s in scores):
            return cls.from_words(words)
        if any(s is None for s in scores):
            raise InputError("either all or no dictionary lines may carry a rank score")
        return cls(dict(zip(words, scores)))


def _better(a, b) -> bool:
    # (score, token_count, tokens): max score, then fewest tokens, then
    # lexicographically smallest token sequence.
    if a[0] != b[0]:
        return a[0] > b[0]
    if a[1] != b[1]:
        return a[1] < b[1]
    return a[2] < b[2]


def _greedy_fallback(s: str, dictionary: SegDictionary) -> list:
    tokens = []
    residue_start = None
    i, n = 0, len(s)
    while i < n:
        word = None
        for length in range(min(dictionary.max_word_len, n - i), 0, -1):
            if s[i:i + length] in dictionary:
                word = s[i:i + length]
                break
        if word is None:
            if residue_start is None:
                residue_start = i
            i += 1
        else:
            if residue_start is not None:
                tokens.append(s[residue_start:i])
                residue_start = None
            tokens.append(word)
            i += len(word)
    if residue_start is not None:
        tokens.append(s[residue_start:])
    return tokens


def word_break(tag, dictionary: SegDictionary) -> list:
    """Split a hashtag into dictionary words.

    Dynamic program over prefixes: among all full segmentations, pick the
    one maximizing the sum of rank scores (ties: fewest tokens, then
    lexicographically smallest). When no full segmentation exists, fall back
    to a greedy longest-prefix split where each maximal unsegmentable run
    passes through as a single out-of-vocabulary token.
    """
    s = as_hashtag(tag).raw
    n = len(s)
    window = min(dictionary.max_word_len, n)
    best = [None] * (n + 1)
    best[0] = (0.0, 0, ())
    for i in range(1, n + 1):
        chosen = None
        for j in range(max(0, i - window), i):
            prev = best[j]
            if prev is None:
                continue
            score = dictionary.entries.get(s[j:i])
            if score is None:
                continue
            cand = (prev[0] + score, prev[1] + 1, prev[2] + (s[j:i],))
            if chosen is None or _better(cand, chosen):
                chosen = cand
        best[i] = chosen
    if best[n] is not None:
        return list(best[n][2])
    return _greedy_fallback(s, dictionary)


class EmbeddingProvider(Protocol):
    """Word -> fixed-dimension vector, or None for out-of-vocabulary."""

    dim: int

    def lookup(self, word: str) -> Optional[np.ndarray]: ...


class WordEmbeddings:
    """Dict-backed embedding table implementing the provider contract."""

    def __init__(self, table: dict, dim: int = None):
        if not table and dim is None:
            raise InputError("empty table requires an explicit dim")
        self.table = {w: np.asarray(v, dtype=np.float64) for w, v in table.items()}
        dims = {v.shape for v in self.table.values()}
        if len(dims) > 1:
            raise InputError(f"inconsistent vector lengths: {sorted(dims)}")
        self.dim = dim if dim is not None else next(iter(dims))[0]
        for v in self.table.values():
            if v.shape != (self.dim,):
                raise InputError("vector length disagrees with dim")

    def lookup(self, word: str) -> Optional[np.ndarray]:
        return self.table.get(word)

    @classmethod
    def from_text_file(cls, path) -> "WordEmbeddings":
        """Load the standard text format: ``word v1 v2 ... vd``, one per line."""
        table = {}
        with open(path) as fh:
            for line in fh:
                parts = line.split()
                if not parts:
                    continue
                table[parts[0]] = np.array([float(x) for x in parts[1:]], dtype=np.float64)
        if not table:
            raise InputError(f"no embeddings found in {path}")
        return cls(table)


def embed_hashtag(tokens, provider: EmbeddingProvider) -> np.ndarray:
    """Mean of in-vocabulary token vectors; zero vector when all are OOV."""
    vectors = [v for v in (provider.lookup(t) for t in tokens) if v is not None]
    if not vectors:
        return np.zeros(provider.dim, dtype=np.float64)
    return np.mean(np.stack([np.asarray(v, dtype=np.float64) for v in vectors]), axis=0)


@dataclass(frozen=True)
class KnnIndex:
    """Immutable id/vector store queried by exact brute force."""

    ids: np.ndarray
    vectors: np.ndarray

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        ids = np.asarray(self.ids)
        if vectors.ndim != 2:
            raise InputError("index vectors must be a 2-D matrix")
        if len(ids) != len(vectors):
            raise InputError("ids and vectors must have equal length")
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "ids", ids)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @classmethod
    def from_pairs(cls, pairs) -> "KnnIndex":
        pairs = list(pairs)
        if not pairs:
            raise InputError("index must not be empty")
        return cls(np.asarray([p[0] for p in pairs]),
                   np.asarray([np.asarray(p[1], dtype=np.float64) for p in pairs]))


def knn_retrieve(query, index, k: int, metric: str = "euclidean") -> list:
    """Exact k nearest neighbors, ties broken by ascending id.

    ``index`` is a KnnIndex or a list of (id, vector) pairs. Euclidean
    ordering is computed on squared distances; cosine on similarities, with
    zero-norm vectors treated as similarity 0.
    """
    if not isinstance(index, KnnIndex):
        index = KnnIndex.from_pairs(index)
    if not 1 <= k <= len(index):
        raise InputError(f"k must be in [1, {len(index)}], got {k}")
    q = np.asarray(query, dtype=np.float64)
    if q.shape != (index.dim,):
        raise InputError(f"query shape {q.shape} does not match index dim {index.dim}")
    if metric == "euclidean":
        diffs = index.vectors - q
        key = np.einsum("ij,ij->i", diffs, diffs)
    elif metric == "cosine":
        norms = np.linalg.norm(index.vectors, axis=1)
        qnorm = np.linalg.norm(q)
        with np.errstate(divide="ignore", invalid="ignore"):
            sims = (index.vectors @ q) / (norms * qnorm)
        sims = np.where(np.isfinite(sims), sims, 0.0)
        key = -sims
    else:
        raise ConfigError(f"unknown metric {metric!r}")
    order = np.lexsort((index.ids, key))
    return index.ids[order[:k]].tolist()


@dataclass(frozen=True)
class HashtagFeature:
    """Pooled hashtag embedding; the vector is zero iff nothing contributed."""

    vector: np.ndarray
    source_count: int


def build_hashtag_feature(image_feature,
                          index,
                          neighbor_tags: dict,
                          k: int = DEFAULT_NEIGHBORS,
                          *,
                          dictionary: SegDictionary,
                          provider: EmbeddingProvider,
                          metric: str = "euclidean",
                          dedupe: bool = False,
                          segment: bool = True) -> HashtagFeature:
    """Transfer hashtags from the k nearest posts and pool their embeddings.

    Neighbors are looked up in ``neighbor_tags`` (id -> hashtag list; absent
    ids contribute nothing). Each hashtag is segmented (unless
    ``segment=False``, which embeds the whole tag) and embedded; hashtags
    whose tokens are all OOV are dropped. The feature is the mean over the
    remaining hashtag vectors, so with ``dedupe=False`` (default) repeated
    hashtags weight the mean by frequency; ``dedupe=True`` pools each
    distinct hashtag once.
    """
    neighbor_ids = knn_retrieve(image_feature, index, k, metric)
    pooled = [as_hashtag(t) for nid in neighbor_ids for t in neighbor_tags.get(nid, [])]
    if dedupe:
        pooled = [Hashtag(raw) for raw in sorted({t.raw for t in pooled})]
    vectors = []
    for tag in pooled:
        tokens = word_break(tag, dictionary) if segment else [tag.raw]
        vec = embed_hashtag(tokens, provider)
        if np.any(vec):
            vectors.append(vec)
    if not vectors:
        return HashtagFeature(np.zeros(provider.dim, dtype=np.float64), 0)
    return HashtagFeature(np.mean(np.stack(vectors), axis=0), len(vectors))


def sweep_neighbor_counts(ks, index, neighbor_tags: dict, train_labels: dict,
                          queries, query_labels: dict, *,
                          dictionary: SegDictionary, provider: EmbeddingProvider,
                          metric: str = "euclidean", dedupe: bool = False,
                          segment: bool = True, ridge: float = 1e-3) -> list:
    """Score a list of neighbor counts with a closed-form linear probe.

    For each k, hashtag features are built for every indexed post and every
    query; a ridge-regularized least-squares probe maps features to label
    vectors and queries are scored by macro F1 of the argmax predictions.
    The probe is solved in closed form, so the sweep is deterministic and
    needs no training loop.
    """
    if not isinstance(index, KnnIndex):
        index = KnnIndex.from_pairs(index)
    queries = list(queries)
    if not queries:
        raise InputError("no query posts")

    def features(pairs, k):
        rows = [build_hashtag_feature(vec, index, neighbor_tags, k,
                                      dictionary=dictionary, provider=provider,
                                      metric=metric, dedupe=dedupe,
                                      segment=segment).vector
                for _, vec in pairs]
        mat = np.stack(rows)
        return np.hstack([mat, np.ones((len(rows), 1))])  # bias column

    train_pairs = [(pid, index.vectors[i]) for i, pid in enumerate(index.ids.tolist())]
    try:
        y_train = np.stack([np.asarray(train_labels[pid], dtype=np.float64)
                            for pid, _ in train_pairs])
        y_query = np.stack([np.asarray(query_labels[qid], dtype=np.float64)
                            for qid, _ in queries])
    except KeyError as exc:
        raise InputError(f"missing label for post {exc.args[0]!r}") from None
    results = []
    truth = y_query.argmax(axis=1)
    n_classes = y_query.shape[1]
    for k in ks:
        x_train = features(train_pairs, k)
        x_query = features(queries, k)
        gram = x_train.T @ x_train + ridge * np.eye(x_train.shape[1])
        weights = np.linalg.solve(gram, x_train.T @ y_train)
        predicted = (x_query @ weights).argmax(axis=1)
        scores = []
        for cls in range(n_classes):
            tp = int(np.sum((predicted == cls) & (truth == cls)))
            fp = int(np.sum((predicted == cls) & (truth != cls)))
            fn = int(np.sum((predicted != cls) & (truth == cls)))
            denom = 2 * tp + fp + fn
            scores.append(2.0 * tp / denom if denom else 0.0)
        results.append({"k": int(k), "macro_f1": float(np.mean(scores))})
    return results


# --- file formats ------------------------------------------------------------


def load_hashtag_table(path, id_type=str) -> dict:
    """Read a tab-separated (image_id, comma-joined hashtags) table."""
    table = {}
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) not in (1, 2):
                raise InputError(f"malformed hashtag line: {line!r}")
            image_id = id_type(parts[0])
            tags = parts[1] if len(parts) == 2 else ""
            table[image_id] = [Hashtag(t) for t in tags.split(",") if t]
    return table


def save_hashtag_table(path, table: dict) -> None:
    with open(path, "w") as fh:
        for image_id in sorted(table):
            tags = ",".join(t.raw for t in table[image_id])
            fh.write(f"{image_id}\t{tags}\n")


def load_label_table(path, id_type=str) -> dict:
    """Read tab-separated (post_id, 0/1 label bitstring) lines."""
    table = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2 or set(parts[1]) - {"0", "1"}:
                raise InputError(f"malformed label line: {line!r}")
            table[id_type(parts[0])] = np.array([int(b) for b in parts[1]],
                                                dtype=np.float64)
    if not table:
        raise InputError(f"no labels found in {path}")
    return table


def load_vector_table(path, id_type=str) -> KnnIndex:
    """Read whitespace-separated ``id v1 v2 ... vd`` lines into an index."""
    pairs = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            pairs.append((id_type(parts[0]),
                          np.array([float(x) for x in parts[1:]], dtype=np.float64)))
    return KnnIndex.from_pairs(pairs)


def save_vector_table(path, index: KnnIndex) -> None:
    with open(path, "w") as fh:
        for i in range(len(index)):
            coords = " ".join(repr(float(x)) for x in index.vectors[i])
            fh.write(f"{index.ids[i]} {coords}\n")
