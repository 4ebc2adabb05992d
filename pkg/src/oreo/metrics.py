"""Biometric measurement stack: cosine matching, closed-set CMC, verification
ROC (TAR@FAR), open-set TPIR@FPIR, set pooling, average degradation, and
McNemar paired significance.

Conventions, chosen for bit-exact testability: thresholds sweep the observed
scores (acceptance is score >= threshold), rate queries return the best
operating point whose false rate does not exceed the target along with the
achieved false rate, gallery ties break by ascending gallery index, and no
interpolation happens anywhere.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import ProtocolError


def cosine(a, b):
    """Cosine similarity of two vectors."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ProtocolError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ProtocolError("cosine similarity undefined for a zero-norm embedding")
    return float(np.dot(a, b) / (na * nb))


def cosine_matrix(rows, cols):
    """(n, m) cosine similarities; errors name the first zero-norm row."""
    rows = np.asarray(rows, dtype=np.float64)
    cols = np.asarray(cols, dtype=np.float64)
    for name, mat in (("first", rows), ("second", cols)):
        norms = np.linalg.norm(mat, axis=1)
        bad = np.nonzero(norms == 0.0)[0]
        if len(bad):
            raise ProtocolError(f"zero-norm embedding at index {bad[0]} of {name} argument")
    rn = rows / np.linalg.norm(rows, axis=1, keepdims=True)
    cn = cols / np.linalg.norm(cols, axis=1, keepdims=True)
    return rn @ cn.T


def pool_set(templates):
    """Mean embedding of one media set (un-normalized; matching normalizes)."""
    templates = np.asarray(templates, dtype=np.float64)
    if templates.ndim != 2 or templates.shape[0] == 0:
        raise ProtocolError("set pooling needs at least one template")
    return templates.mean(axis=0)


def cmc(gallery_emb, gallery_ids, probe_emb, probe_ids, max_rank=None):
    """Closed-set identification rates at ranks 1..max_rank.

    A probe counts at rank k if any gallery entry of its identity is among
    its k highest-scoring entries (ties by gallery index).
    """
    gallery_ids = np.asarray(gallery_ids)
    probe_ids = np.asarray(probe_ids)
    missing = set(probe_ids.tolist()) - set(gallery_ids.tolist())
    if missing:
        raise ProtocolError(f"probe identities absent from gallery: {sorted(missing)[:5]}")
    n_gallery = len(gallery_ids)
    if max_rank is None:
        max_rank = n_gallery
    scores = cosine_matrix(probe_emb, gallery_emb)
    ranks = np.empty(len(probe_ids), dtype=np.int64)
    gallery_index = np.arange(n_gallery)
    for i in range(len(probe_ids)):
        order = np.lexsort((gallery_index, -scores[i]))
        mated = np.nonzero(gallery_ids[order] == probe_ids[i])[0]
        ranks[i] = mated[0] + 1
    rates = np.array([(ranks <= k).mean() for k in range(1, max_rank + 1)])
    return rates


def rank1_correct(gallery_emb, gallery_ids, probe_emb, probe_ids):
    """Per-probe rank-1 hit vector (for paired significance tests)."""
    gallery_ids = np.asarray(gallery_ids)
    probe_ids = np.asarray(probe_ids)
    scores = cosine_matrix(probe_emb, gallery_emb)
    gallery_index = np.arange(len(gallery_ids))
    hits = np.zeros(len(probe_ids), dtype=bool)
    for i in range(len(probe_ids)):
        order = np.lexsort((gallery_index, -scores[i]))
        hits[i] = gallery_ids[order[0]] == probe_ids[i]
    return hits


@dataclass
class RocPoint:
    far: float
    tar: float
    threshold: float


def roc_verification(scores, genuine):
    """Threshold sweep over the unique observed scores, highest first."""
    scores = np.asarray(scores, dtype=np.float64)
    genuine = np.asarray(genuine, dtype=bool)
    if scores.shape != genuine.shape:
        raise ProtocolError("scores and labels must align")
    n_gen = int(genuine.sum())
    n_imp = int((~genuine).sum())
    if n_gen == 0 or n_imp == 0:
        raise ProtocolError("verification needs at least one genuine and one impostor pair")
    points = []
    for threshold in np.unique(scores)[::-1]:
        accepted = scores >= threshold
        points.append(
            RocPoint(
                far=float((accepted & ~genuine).sum() / n_imp),
                tar=float((accepted & genuine).sum() / n_gen),
                threshold=float(threshold),
            )
        )
    return points


def tar_at_far(points, target_far):
    """Best achievable TAR subject to FAR <= target.

    Returns (tar, achieved_far, threshold); (0, 0, inf) if even the
    strictest swept threshold exceeds the target.
    """
    feasible = [p for p in points if p.far <= target_far]
    if not feasible:
        return 0.0, 0.0, math.inf
    best = max(feasible, key=lambda p: p.tar)
    return best.tar, best.far, best.threshold


@dataclass
class OpenSetPoint:
    fpir: float
    tpir: float
    threshold: float


def open_set_identification(gallery_emb, gallery_ids, probe_emb, probe_ids):
    """Operating points for 1:N open-set identification.

    Probes whose identity is enrolled are mated; at threshold t, TPIR is the
    fraction of mated probes whose top-1 gallery match is correct with score
    >= t, and FPIR is the fraction of non-mated probes whose top score >= t.
    """
    gallery_ids = np.asarray(gallery_ids)
    probe_ids = np.asarray(probe_ids)
    scores = cosine_matrix(probe_emb, gallery_emb)
    gallery_index = np.arange(len(gallery_ids))
    mated = np.isin(probe_ids, gallery_ids)
    if not (~mated).any():
        raise ProtocolError("open-set protocol needs at least one non-mated probe")

    top_score = np.empty(len(probe_ids))
    top_correct = np.zeros(len(probe_ids), dtype=bool)
    for i in range(len(probe_ids)):
        order = np.lexsort((gallery_index, -scores[i]))
        top_score[i] = scores[i, order[0]]
        top_correct[i] = gallery_ids[order[0]] == probe_ids[i]

    mated_scores = top_score[mated]
    mated_hits = top_correct[mated]
    nonmated_scores = top_score[~mated]
    n_mated = max(int(mated.sum()), 1)
    n_nonmated = int((~mated).sum())

    points = []
    thresholds = np.concatenate([np.unique(top_score)[::-1], [math.inf]])
    for threshold in sorted(thresholds, reverse=True):
        fpir = float((nonmated_scores >= threshold).sum() / n_nonmated)
        tpir = float((mated_hits & (mated_scores >= threshold)).sum() / n_mated)
        points.append(OpenSetPoint(fpir=fpir, tpir=tpir, threshold=float(threshold)))
    return points


def tpir_at_fpir(points, target_fpir):
    """Best achievable TPIR subject to FPIR <= target; mirrors tar_at_far."""
    feasible = [p for p in points if p.fpir <= target_fpir]
    if not feasible:
        return 0.0, 0.0, math.inf
    best = max(feasible, key=lambda p: p.tpir)
    return best.tpir, best.fpir, best.threshold


def adp(rate_pairs):
    """Average degradation: mean over attributes of (rate_without - rate_with),
    in percentage points (inputs in [0, 100])."""
    pairs = list(rate_pairs)
    if not pairs:
        raise ProtocolError("average degradation needs at least one attribute")
    for without, with_ in pairs:
        if not (0.0 <= without <= 100.0 and 0.0 <= with_ <= 100.0):
            raise ProtocolError(f"rates must be in [0,100], got ({without}, {with_})")
    return float(np.mean([without - with_ for without, with_ in pairs]))


@dataclass
class McNemarResult:
    b: int  # first correct, second wrong
    c: int  # first wrong, second correct
    statistic: float
    p_value: float


def mcnemar(correct_a, correct_b):
    """Paired-prediction significance on identical probes.

    Exact two-sided binomial test for b + c < 25, else the continuity-
    corrected chi-square with one degree of freedom.  b + c = 0 yields
    p = 1.0 by convention.
    """
    a = np.asarray(correct_a, dtype=bool)
    bb = np.asarray(correct_b, dtype=bool)
    if a.shape != bb.shape:
        raise ProtocolError(f"paired vectors differ in length: {a.shape} vs {bb.shape}")
    b = int((a & ~bb).sum())
    c = int((~a & bb).sum())
    n = b + c
    if n == 0:
        return McNemarResult(b=b, c=c, statistic=0.0, p_value=1.0)
    if n < 25:
        k = min(b, c)
        tail = sum(math.comb(n, i) for i in range(k + 1)) / 2.0**n
        return McNemarResult(b=b, c=c, statistic=float(k), p_value=min(1.0, 2.0 * tail))
    statistic = max(abs(b - c) - 1.0, 0.0) ** 2 / n
    p = math.erfc(math.sqrt(statistic / 2.0))  # chi-square(1) survival
    return McNemarResult(b=b, c=c, statistic=float(statistic), p_value=float(p))
