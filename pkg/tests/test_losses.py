import math

import numpy as np
import pytest
import torch

from oreo.errors import DataError
from oreo.losses import (
    attribute_loss,
    identity_loss,
    similarity_matrix,
    stl_loss,
    total_loss,
)

from oracles import check_gradients, stl_oracle


def uniform_classifier(d, n):
    clf = torch.nn.Linear(d, n)
    with torch.no_grad():
        clf.weight.zero_()
        clf.bias.zero_()
    return clf


class TestIdentityLoss:
    def test_uniform_logits_give_log_n(self):
        clf = uniform_classifier(8, 10).double()
        templates = torch.randn(6, 8, dtype=torch.float64)
        labels = torch.tensor([0, 1, 2, 3, 4, 5])
        value = float(identity_loss(templates, labels, clf))
        assert abs(value - math.log(10)) < 1e-9
        assert abs(value - 2.302585092994046) < 1e-9

    @pytest.mark.parametrize("margin", [1.0, 2.0, 4.0])
    def test_one_hot_margin_below_log_n(self, margin):
        # classifier that gives the true class a logit lead of `margin`
        n, d = 7, 7
        clf = uniform_classifier(d, n)
        with torch.no_grad():
            clf.weight.copy_(torch.eye(n) * margin)
        templates = torch.eye(d)
        labels = torch.arange(n)
        value = float(identity_loss(templates, labels, clf))
        expected = -math.log(math.exp(margin) / (math.exp(margin) + (n - 1)))
        assert abs(value - expected) < 1e-6
        assert value < math.log(n)

    def test_monotone_in_margin(self):
        values = []
        for margin in (1.0, 2.0, 4.0):
            clf = uniform_classifier(5, 5)
            with torch.no_grad():
                clf.weight.copy_(torch.eye(5) * margin)
            values.append(float(identity_loss(torch.eye(5), torch.arange(5), clf)))
        assert values[0] > values[1] > values[2]

    def test_label_out_of_range(self):
        clf = uniform_classifier(4, 3)
        with pytest.raises(DataError):
            identity_loss(torch.randn(2, 4), torch.tensor([0, 3]), clf)

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(0)
        clf = torch.nn.Linear(6, 4).double()
        templates = torch.randn(5, 6, dtype=torch.float64, requires_grad=True)
        labels = torch.tensor([0, 1, 2, 3, 0])

        def loss():
            return identity_loss(templates, labels, clf)

        params = [("W", clf.weight), ("b", clf.bias), ("templates", templates)]
        failures = check_gradients(loss, params, n_probes=6)
        assert not failures, failures


class TestAttributeLoss:
    def test_zero_logits_give_k_log2(self):
        logits = torch.zeros(4, 5)
        labels = torch.randint(0, 2, (4, 5)).float()
        value = float(attribute_loss(logits, labels))
        assert abs(value - 5 * math.log(2)) < 1e-9
        assert abs(value - 3.4657359027997265) < 1e-9

    def test_saturated_correct_is_negligible(self):
        logits = torch.full((3, 4), 40.0)
        labels = torch.ones(3, 4)
        assert float(attribute_loss(logits, labels)) <= 4 * 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(DataError):
            attribute_loss(torch.zeros(2, 3), torch.zeros(2, 4))

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(1)
        logits = torch.randn(4, 3, dtype=torch.float64, requires_grad=True)
        labels = torch.randint(0, 2, (4, 3)).double()

        def loss():
            return attribute_loss(logits, labels)

        failures = check_gradients(loss, [("logits", logits)], n_probes=8)
        assert not failures, failures


class TestSimilarityTripletLoss:
    def test_orthonormal_pairs_satisfy_margin(self):
        e1 = torch.tensor([[1.0, 0.0], [0.0, 1.0]])
        loss, info = stl_loss(e1, e1.clone(), margin=0.2)
        assert float(loss) == 0.0
        assert torch.allclose(info.similarity, torch.eye(2))

    def test_all_identical_gives_two_margins(self):
        t = torch.ones(2, 3)
        loss, info = stl_loss(t, t.clone(), margin=0.2)
        assert abs(float(loss) - 0.4) < 1e-7
        # hand evaluation: S is all ones, every hinge is exactly the margin
        assert torch.allclose(info.similarity, torch.ones(2, 2), atol=1e-6)

    def test_scale_invariance(self):
        torch.manual_seed(2)
        tn = torch.randn(4, 8, dtype=torch.float64)
        to = torch.randn(4, 8, dtype=torch.float64)
        base, _ = stl_loss(tn, to, margin=0.2)
        scaled_n = tn.clone()
        scaled_n[2] *= 3.7
        scaled, _ = stl_loss(scaled_n, to, margin=0.2)
        assert abs(float(base) - float(scaled)) <= 1e-12

    def test_matches_brute_force_miner(self):
        torch.manual_seed(3)
        for p in (2, 3, 4, 5, 6):
            tn = torch.randn(p, 6, dtype=torch.float64)
            to = torch.randn(p, 6, dtype=torch.float64)
            loss, _ = stl_loss(tn, to, margin=0.3)
            expected = stl_oracle(tn.tolist(), to.tolist(), margin=0.3)
            assert abs(float(loss) - expected) < 1e-10

    def test_swapping_roles_is_invariant(self):
        torch.manual_seed(4)
        for _ in range(10):
            p = int(torch.randint(2, 7, ()))
            tn = torch.randn(p, 5, dtype=torch.float64)
            to = torch.randn(p, 5, dtype=torch.float64)
            a, _ = stl_loss(tn, to, margin=0.2)
            b, _ = stl_loss(to, tn, margin=0.2)
            assert abs(float(a) - float(b)) < 1e-12

    def test_mined_indices_point_at_hard_negatives(self):
        torch.manual_seed(5)
        tn = torch.randn(4, 6)
        to = torch.randn(4, 6)
        _, info = stl_loss(tn, to, margin=0.2)
        s = info.similarity
        for anchor, (i, j) in enumerate(info.mined):
            assert anchor in (i, j) and i != j
            assert abs(float(s[i, j]) - float(info.negatives[anchor])) < 1e-6

    def test_zero_norm_template_is_named(self):
        tn = torch.ones(2, 3)
        tn[1].zero_()
        with pytest.raises(DataError, match="index 1"):
            stl_loss(tn, torch.ones(2, 3), margin=0.2)

    def test_single_pair_rejected(self):
        with pytest.raises(DataError):
            stl_loss(torch.ones(1, 3), torch.ones(1, 3), margin=0.2)

    def test_gradients_match_finite_differences(self):
        torch.manual_seed(6)
        tn = torch.randn(4, 5, dtype=torch.float64, requires_grad=True)
        to = torch.randn(4, 5, dtype=torch.float64, requires_grad=True)

        def loss():
            value, _ = stl_loss(tn, to, margin=0.25)
            return value

        failures = check_gradients(loss, [("tn", tn), ("to", to)], n_probes=8)
        assert not failures, failures

    def test_similarity_entries_bounded(self):
        torch.manual_seed(7)
        s = similarity_matrix(torch.randn(5, 4), torch.randn(5, 4))
        assert float(s.min()) >= -1.0 - 1e-7 and float(s.max()) <= 1.0 + 1e-7


class TestTotalLoss:
    def test_plain_sum(self):
        parts = {
            "L_C": torch.tensor(2.0),
            "L_A": torch.tensor(1.0),
            "L_T": torch.tensor(0.5),
        }
        assert float(total_loss(parts)) == 3.5

    def test_disabled_component_is_dropped(self):
        parts = {"L_C": torch.tensor(2.0), "L_A": torch.tensor(1.0), "L_T": None}
        assert float(total_loss(parts)) == 3.0

    def test_matches_recomputation_from_logged_parts(self):
        torch.manual_seed(8)
        parts = {k: torch.rand(()) for k in ("L_C", "L_A", "L_T")}
        logged = {k: float(v) for k, v in parts.items()}
        assert abs(float(total_loss(parts)) - sum(logged.values())) < 1e-6

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            total_loss({"L_C": None})
