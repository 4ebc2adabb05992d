"""Training objectives: identity softmax, attribute sigmoid, similarity triplet.

The triplet term works on a batch of same-identity (non-occluded, occluded)
template pairs.  Cosine similarities between the two halves form a square
matrix whose diagonal holds the only same-identity scores; per anchor the
hardest negative is the highest different-identity score in the anchor's row
or column, and a hinge with margin keeps it below the diagonal score.
"""

from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .errors import DataError

_NORM_EPS = 1e-12


def identity_loss(templates, labels, classifier):
    """Mean softmax cross-entropy of classifier(templates) against labels."""
    n = classifier.out_features
    if labels.numel() == 0:
        raise DataError("identity loss needs a non-empty batch")
    if int(labels.min()) < 0 or int(labels.max()) >= n:
        raise DataError(
            f"identity label out of range: got [{int(labels.min())}, {int(labels.max())}]"
            f" for {n} classes"
        )
    logits = classifier(templates)
    log_probs = F.log_softmax(logits, dim=1)  # log-sum-exp with max subtraction
    return -log_probs[torch.arange(labels.shape[0]), labels].mean()


def attribute_loss(attr_logits, pseudo_labels):
    """Per-attribute sigmoid binary cross-entropy, summed over attributes and
    averaged over the batch; evaluated in log-space."""
    if attr_logits.shape != pseudo_labels.shape:
        raise DataError(
            f"attribute logits {tuple(attr_logits.shape)} vs labels "
            f"{tuple(pseudo_labels.shape)} shape mismatch"
        )
    per_attr = F.binary_cross_entropy_with_logits(
        attr_logits, pseudo_labels.to(attr_logits.dtype), reduction="none"
    )
    return per_attr.sum(dim=1).mean()


@dataclass
class StlInfo:
    similarity: torch.Tensor  # (P, P) detached cosine matrix
    positives: torch.Tensor  # (P,) diagonal scores
    negatives: torch.Tensor  # (P,) mined hard-negative scores
    mined: list  # per anchor, the (row, col) of its hard negative in S


def similarity_matrix(templates_n, templates_o):
    """Row-normalized cosine similarities; errors on zero-norm templates."""
    for name, t in (("non-occluded", templates_n), ("occluded", templates_o)):
        norms = t.norm(dim=1)
        bad = (norms < _NORM_EPS).nonzero(as_tuple=True)[0]
        if len(bad):
            raise DataError(f"zero-norm {name} template at batch index {int(bad[0])}")
    tn = templates_n / templates_n.norm(dim=1, keepdim=True)
    to = templates_o / templates_o.norm(dim=1, keepdim=True)
    return tn @ to.T


def stl_loss(templates_n, templates_o, margin):
    """Similarity triplet loss over one-pair-per-identity batches.

    Returns (loss, StlInfo).  Gradients flow only through the diagonal and
    the mined hard-negative entries.
    """
    if templates_n.shape != templates_o.shape:
        raise DataError("template halves must have identical shapes")
    p = templates_n.shape[0]
    if p < 2:
        raise DataError(f"similarity triplet loss needs >= 2 pairs, got {p}")
    if margin <= 0:
        raise DataError(f"margin must be positive, got {margin}")
    s = similarity_matrix(templates_n, templates_o)
    positives = s.diagonal()
    off = s - torch.diag(torch.full((p,), torch.inf, dtype=s.dtype))
    row_max, row_arg = off.max(dim=1)
    col_max, col_arg = off.max(dim=0)
    negatives = torch.maximum(row_max, col_max)
    loss = torch.clamp(negatives - positives + margin, min=0.0).sum()

    mined = []
    for i in range(p):
        if float(row_max[i]) >= float(col_max[i]):
            mined.append((i, int(row_arg[i])))
        else:
            mined.append((int(col_arg[i]), i))
    return loss, StlInfo(
        similarity=s.detach(),
        positives=positives.detach(),
        negatives=negatives.detach(),
        mined=mined,
    )


def total_loss(parts):
    """Unweighted sum of the active loss components."""
    total = None
    for value in parts.values():
        if value is None:
            continue
        total = value if total is None else total + value
    if total is None:
        raise DataError("no active loss components")
    return total
