"""Occlusion-balanced pair sampling.

Batches hold P same-identity (non-occluded, occluded) image pairs: P distinct
identities per batch, identities drawn without replacement until the eligible
set is exhausted (then reshuffled), and one uniformly chosen image from each
occlusion class per identity, re-drawn every epoch.  All draws are keyed by
(seed, epoch, batch index) so delivery is deterministic and independent of
any prefetching schedule.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError

_STREAM_IDENTITY_ORDER = 10
_STREAM_IMAGE_PICK = 11


@dataclass
class SamplerState:
    occluded_by_id: dict
    non_occluded_by_id: dict
    eligible: list  # identities with at least one image of each class
    ineligible: list  # (identity, n_non_occluded, n_occluded)
    seed: int = 0
    pairs_per_epoch: int = None  # defaults to one pass over eligible identities

    def __post_init__(self):
        if self.pairs_per_epoch is None:
            self.pairs_per_epoch = len(self.eligible)

    def counts(self):
        return {
            "eligible": len(self.eligible),
            "ineligible": len(self.ineligible),
            "pairs_per_epoch": self.pairs_per_epoch,
        }


def build_index(dataset, seed=0, pairs_per_epoch=None) -> SamplerState:
    """Partition identities by occlusion-class availability."""
    occ, non = {}, {}
    for idx, sample in enumerate(dataset.samples):
        bucket = occ if sample.occluded else non
        bucket.setdefault(sample.identity, []).append(idx)
    eligible, ineligible = [], []
    for identity in sorted(set(occ) | set(non)):
        n_o = len(occ.get(identity, []))
        n_n = len(non.get(identity, []))
        if n_o >= 1 and n_n >= 1:
            eligible.append(identity)
        else:
            ineligible.append((identity, n_n, n_o))
    if not eligible:
        raise DataError(
            "occlusion-balanced sampling needs at least one identity with both an "
            "occluded and a non-occluded image; found none"
        )
    return SamplerState(
        occluded_by_id={i: occ[i] for i in eligible},
        non_occluded_by_id={i: non[i] for i in eligible},
        eligible=eligible,
        ineligible=ineligible,
        seed=seed,
        pairs_per_epoch=pairs_per_epoch,
    )


@dataclass
class PairBatch:
    identities: np.ndarray  # (P,)
    non_occluded: np.ndarray  # (P,) dataset indices
    occluded: np.ndarray  # (P,) dataset indices, pairwise same identity


def batches_per_epoch(state: SamplerState, pairs_per_batch) -> int:
    _check_batch_size(state, pairs_per_batch)
    return max(state.pairs_per_epoch // pairs_per_batch, 1)


def _check_batch_size(state, pairs_per_batch):
    if pairs_per_batch < 1:
        raise ConfigError("pairs_per_batch must be positive")
    if pairs_per_batch > len(state.eligible):
        raise ConfigError(
            f"batch needs {pairs_per_batch} distinct identities but only "
            f"{len(state.eligible)} are eligible"
        )


def _identity_stream(state, epoch):
    round_no = 0
    while True:
        rng = np.random.default_rng([state.seed, _STREAM_IDENTITY_ORDER, epoch, round_no])
        for i in rng.permutation(len(state.eligible)):
            yield state.eligible[int(i)]
        round_no += 1


def _collect_distinct(stream, count):
    chosen, seen = [], set()
    while len(chosen) < count:
        identity = next(stream)
        if identity in seen:  # only possible just after a reshuffle boundary
            continue
        seen.add(identity)
        chosen.append(identity)
    return chosen


def _materialize(state, epoch, batch_index, identities):
    rng = np.random.default_rng([state.seed, _STREAM_IMAGE_PICK, epoch, batch_index])
    non_idx = [
        state.non_occluded_by_id[i][int(rng.integers(len(state.non_occluded_by_id[i])))]
        for i in identities
    ]
    occ_idx = [
        state.occluded_by_id[i][int(rng.integers(len(state.occluded_by_id[i])))]
        for i in identities
    ]
    return PairBatch(
        identities=np.array(identities, dtype=np.int64),
        non_occluded=np.array(non_idx, dtype=np.int64),
        occluded=np.array(occ_idx, dtype=np.int64),
    )


def next_batch(state: SamplerState, epoch, batch_index, pairs_per_batch) -> PairBatch:
    """One batch, as a pure function of (seed, epoch, batch_index): replays
    the epoch's identity stream up to the requested batch."""
    _check_batch_size(state, pairs_per_batch)
    stream = _identity_stream(state, epoch)
    for _ in range(batch_index):
        _collect_distinct(stream, pairs_per_batch)
    return _materialize(state, epoch, batch_index, _collect_distinct(stream, pairs_per_batch))


def epoch_batches(state: SamplerState, epoch, pairs_per_batch):
    """Yield the epoch's batches in delivery order (no stream replay)."""
    n_batches = batches_per_epoch(state, pairs_per_batch)
    stream = _identity_stream(state, epoch)
    for b in range(n_batches):
        yield _materialize(state, epoch, b, _collect_distinct(stream, pairs_per_batch))
