"""Embedding-space evaluation: dissimilarity matrices, rank-correlation
comparison with permutation tests, paired-similarity summaries, zero-shot
classification, cross-corpus matching, and residualized category retrieval.

All ranking operations break ties deterministically (lowest index or
lexicographic id). Permutation randomness is derived per permutation
index from the caller's seed, so results are schedule-independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .encoders import Embedding
from .errors import ContractError, DegenerateError, DomainError


@dataclass
class EmbeddingSet:
    embeddings: list[Embedding]

    def __post_init__(self):
        if not self.embeddings:
            raise ContractError("embedding set cannot be empty")
        dims = {e.dim for e in self.embeddings}
        if len(dims) != 1:
            raise ContractError(f"embedding dimensions differ: {sorted(dims)}")
        ids = [e.id for e in self.embeddings]
        if len(set(ids)) != len(ids):
            raise ContractError("embedding ids must be unique")

    def __len__(self) -> int:
        return len(self.embeddings)

    @property
    def dimension(self) -> int:
        return self.embeddings[0].dim

    @property
    def ids(self) -> list[str]:
        return [e.id for e in self.embeddings]

    @property
    def categories(self) -> list[str | None]:
        return [e.category for e in self.embeddings]

    def matrix(self) -> np.ndarray:
        return np.stack([e.values for e in self.embeddings])

    def normalized_matrix(self) -> np.ndarray:
        m = self.matrix()
        norms = np.linalg.norm(m, axis=1, keepdims=True)
        return np.divide(m, norms, out=np.zeros_like(m), where=norms > 0)


@dataclass
class RDM:
    """Pairwise 1 - cosine over L2-normalized features."""

    matrix: np.ndarray
    ids: list[str]

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=np.float64)
        n = len(self.ids)
        if m.shape != (n, n):
            raise ContractError(f"RDM shape {m.shape} does not match {n} ids")
        if not np.array_equal(m, m.T):
            raise ContractError("RDM must be symmetric")
        if np.any(np.diagonal(m) != 0.0):
            raise ContractError("RDM diagonal must be zero")
        self.matrix = m

    def upper(self) -> np.ndarray:
        iu = np.triu_indices(len(self.ids), k=1)
        return self.matrix[iu]


@dataclass
class MatchMatrix:
    values: np.ndarray  # (n_sketches, n_pictographs)
    row_ids: list[str]
    col_ids: list[str]


@dataclass
class CategoryQuery:
    category: str
    v_c: np.ndarray  # unit mean embedding of the category
    r_c: np.ndarray  # v_c with its projection on d_hat removed
    d_hat: np.ndarray  # unit global mean direction


@dataclass(frozen=True)
class PermutationReport:
    observed: float
    n_permutations: int
    p_value: float
    seed: int


@dataclass
class MatchingReport:
    overall: float
    per_category: dict[str, float]
    per_category_counts: dict[str, tuple[int, int]]
    per_sketchability: dict[tuple[str, int], float] = field(default_factory=dict)


def cosine(x: np.ndarray, y: np.ndarray) -> float:
    """Cosine similarity; zero-norm inputs yield the defined value 0."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if x.shape != y.shape:
        raise ContractError(f"dimension mismatch: {x.shape} vs {y.shape}")
    nx = np.linalg.norm(x)
    ny = np.linalg.norm(y)
    if nx == 0.0 or ny == 0.0:
        return 0.0
    return float(x @ y / (nx * ny))


def build_rdm(emb_set: EmbeddingSet) -> RDM:
    if len(emb_set) < 2:
        raise ContractError("RDM needs at least two embeddings")
    normed = emb_set.normalized_matrix()
    sim = normed @ normed.T
    d = 1.0 - sim
    d = (d + d.T) / 2.0  # exact symmetry regardless of BLAS rounding
    np.fill_diagonal(d, 0.0)
    return RDM(matrix=d, ids=emb_set.ids)


def delta_rdm(sketch_rdm: RDM, image_rdm: RDM) -> np.ndarray:
    """sketch RDM minus image RDM; near-zero entries indicate high
    sketch-image correspondence."""
    if sketch_rdm.ids != image_rdm.ids:
        raise ContractError("RDM id order mismatch")
    return sketch_rdm.matrix - image_rdm.matrix


def _rank_average(v: np.ndarray) -> np.ndarray:
    return rankdata(v, method="average")


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc = x - x.mean()
    yc = y - y.mean()
    denom = np.sqrt((xc @ xc) * (yc @ yc))
    if denom == 0.0:
        raise DegenerateError("rank correlation undefined for constant input")
    return float(xc @ yc / denom)


def spearman_upper(rdm_a: RDM, rdm_b: RDM) -> float:
    """Spearman rank correlation of the two upper triangles (no diagonal)."""
    if rdm_a.matrix.shape != rdm_b.matrix.shape:
        raise ContractError("RDM shapes differ")
    if len(rdm_a.ids) < 3:
        raise ContractError("need at least 3 items for a rank correlation")
    ua = rdm_a.upper()
    ub = rdm_b.upper()
    if np.all(ua == ua[0]) or np.all(ub == ub[0]):
        raise DegenerateError("rank correlation undefined for constant RDM")
    return _pearson(_rank_average(ua), _rank_average(ub))


def _permutations(seed: int, n_perm: int, n: int) -> np.ndarray:
    """Per-index seeded permutations (schedule-independent)."""
    return np.stack(
        [np.random.default_rng([seed, i]).permutation(n) for i in range(n_perm)]
    )


def _two_sided_p(observed: float, permuted: np.ndarray, n_perm: int) -> float:
    return (1.0 + float(np.sum(np.abs(permuted) >= abs(observed)))) / (1.0 + n_perm)


def rsa_permutation(rdm_a: RDM, rdm_b: RDM, n_perm: int = 5000, seed: int = 0) -> PermutationReport:
    """Permutation test for spearman_upper: each permutation relabels
    rdm_b's rows and columns jointly."""
    if n_perm < 1:
        raise DomainError("need at least one permutation")
    observed = spearman_upper(rdm_a, rdm_b)
    n = len(rdm_a.ids)
    iu = np.triu_indices(n, k=1)
    ranks_a = _rank_average(rdm_a.upper())
    perms = _permutations(seed, n_perm, n)
    uppers = np.empty((n_perm, iu[0].size))
    b = rdm_b.matrix
    for i, pi in enumerate(perms):
        uppers[i] = b[np.ix_(pi, pi)][iu]
    ranks_b = rankdata(uppers, method="average", axis=1)
    xc = ranks_a - ranks_a.mean()
    yc = ranks_b - ranks_b.mean(axis=1, keepdims=True)
    denom = np.sqrt((xc @ xc) * np.sum(yc * yc, axis=1))
    rhos = (yc @ xc) / denom
    return PermutationReport(
        observed=observed,
        n_permutations=n_perm,
        p_value=_two_sided_p(observed, rhos, n_perm),
        seed=seed,
    )


def mean_paired_cosine(
    images: EmbeddingSet, sketches: EmbeddingSet, n_perm: int = 5000, seed: int = 0
) -> tuple[float, PermutationReport]:
    """Mean cosine over aligned (image, sketch) pairs; the null breaks the
    pairing by permuting the sketch assignment."""
    if images.ids != sketches.ids:
        raise ContractError("paired sets must carry identical id order")
    a = images.normalized_matrix()
    b = sketches.normalized_matrix()
    paired = np.sum(a * b, axis=1)
    observed = float(paired.mean())
    sim = a @ b.T  # sim[i, j] = cos(image_i, sketch_j)
    perms = _permutations(seed, n_perm, len(images))
    idx = np.arange(len(images))
    stats = sim[idx, perms].mean(axis=1)
    report = PermutationReport(
        observed=observed,
        n_permutations=n_perm,
        p_value=_two_sided_p(observed, stats, n_perm),
        seed=seed,
    )
    return observed, report


def zero_shot_classify(
    sketch: Embedding, labels: EmbeddingSet, k: int
) -> list[tuple[str, float]]:
    """Top-k labels by cosine, descending; ties by lexicographic id."""
    if k < 1 or k > len(labels):
        raise ContractError(f"k must be in 1..{len(labels)}")
    scored = [
        (label.id, cosine(sketch.values, label.values)) for label in labels.embeddings
    ]
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored[:k]


def match_matrix(sketches: EmbeddingSet, pictographs: EmbeddingSet) -> MatchMatrix:
    """Row-normalized similarity matrix between the two sets."""
    if sketches.dimension != pictographs.dimension:
        raise ContractError(
            f"dimension mismatch: {sketches.dimension} vs {pictographs.dimension}"
        )
    m = sketches.normalized_matrix() @ pictographs.normalized_matrix().T
    return MatchMatrix(values=m, row_ids=sketches.ids, col_ids=pictographs.ids)


def matching_accuracy(
    m: MatchMatrix,
    sketch_categories: dict[str, str],
    pictograph_categories: dict[str, str],
    sketch_sketchability: dict[str, int] | None = None,
) -> MatchingReport:
    """Argmax retrieval accuracy: a sketch matches when its best pictograph
    shares its category (argmax ties -> lowest column index)."""
    missing = [i for i in m.row_ids if i not in sketch_categories]
    missing += [j for j in m.col_ids if j not in pictograph_categories]
    if missing:
        raise ContractError(f"missing category labels for: {missing[:5]}")
    col_cats = [pictograph_categories[j] for j in m.col_ids]
    per_cat: dict[str, list[int]] = {}
    per_sk: dict[tuple[str, int], list[int]] = {}
    hits = 0
    for row, sketch_id in enumerate(m.row_ids):
        best = int(np.argmax(m.values[row]))
        cat = sketch_categories[sketch_id]
        match = int(col_cats[best] == cat)
        hits += match
        per_cat.setdefault(cat, []).append(match)
        if sketch_sketchability and sketch_id in sketch_sketchability:
            per_sk.setdefault((cat, sketch_sketchability[sketch_id]), []).append(match)
    return MatchingReport(
        overall=hits / len(m.row_ids),
        per_category={c: float(np.mean(v)) for c, v in per_cat.items()},
        per_category_counts={c: (sum(v), len(v)) for c, v in per_cat.items()},
        per_sketchability={k: float(np.mean(v)) for k, v in per_sk.items()},
    )


def residual_query(sketches: EmbeddingSet) -> list[CategoryQuery]:
    """Per-category unit mean embeddings with the global mean direction
    projected out (isolates category-specific structure)."""
    groups: dict[str, list[np.ndarray]] = {}
    for e in sketches.embeddings:
        if e.category is None:
            raise ContractError(f"embedding {e.id!r} lacks a category")
        groups.setdefault(e.category, []).append(e.values)
    if len(groups) < 2:
        raise ContractError("need at least 2 categories")
    v_cs: dict[str, np.ndarray] = {}
    for cat, vecs in groups.items():
        normed = []
        for v in vecs:
            n = np.linalg.norm(v)
            normed.append(v / n if n > 0 else np.zeros_like(v))
        mean = np.mean(normed, axis=0)
        norm = np.linalg.norm(mean)
        if norm == 0.0:
            raise DegenerateError(f"category {cat!r} has zero mean embedding")
        v_cs[cat] = mean / norm
    d = np.mean(list(v_cs.values()), axis=0)
    dn = np.linalg.norm(d)
    if dn == 0.0:
        raise DegenerateError("global mean direction vanished")
    d_hat = d / dn
    return [
        CategoryQuery(category=c, v_c=v, r_c=v - (v @ d_hat) * d_hat, d_hat=d_hat)
        for c, v in sorted(v_cs.items())
    ]


def top_k_retrieve(
    query: CategoryQuery, signs: EmbeddingSet, k: int = 40
) -> list[tuple[str, float, int]]:
    """Signs ranked by cosine to the residual query; ranks 1-based,
    ties by lexicographic id."""
    if k < 1 or k > len(signs):
        raise ContractError(f"k must be in 1..{len(signs)}")
    if np.linalg.norm(query.r_c) == 0.0:
        raise DegenerateError(f"residual query for {query.category!r} is zero")
    scored = [
        (sign.id, cosine(query.r_c, sign.values)) for sign in signs.embeddings
    ]
    scored.sort(key=lambda t: (-t[1], t[0]))
    return [(sid, sim, rank + 1) for rank, (sid, sim) in enumerate(scored[:k])]
