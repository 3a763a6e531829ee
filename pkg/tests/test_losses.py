"""Unit tests for the training objective."""

import math

import pytest
import torch

from coleclip_desk.encoders import TaskPromptBank, VisualBatch, init_adapter
from coleclip_desk.models import TrainConfig
from coleclip_desk.training import (
    BatchEmbeddings,
    ContractViolation,
    NegativeSet,
    compute_losses,
    forward_batch,
)
from coleclip_desk.vocabulary import ClassVocabulary


def _embeddings(visual, text, stored=None):
    visual = torch.as_tensor(visual, dtype=torch.float64)
    text = torch.as_tensor(text, dtype=torch.float64)
    batch = VisualBatch(prompt_outputs=visual.unsqueeze(1), cls_output=visual)
    return BatchEmbeddings(
        batch=batch,
        visual=visual,
        cls=visual,
        refined=text,
        stored=text.clone() if stored is None else torch.as_tensor(stored, dtype=torch.float64),
    )


def _vocabulary(names, dim=2):
    vocabulary = ClassVocabulary()
    generator = torch.Generator().manual_seed(0)
    vocabulary.ensure_entries(
        names, lambda _: torch.randn(dim, generator=generator, dtype=torch.float64), 1
    )
    return vocabulary


class TestComputeLosses:
    """Tests for compute_losses."""

    def test_single_class_has_zero_cross_entropy(self):
        embeddings = _embeddings([[1.0, 0.5]], [[0.3, 1.0]])
        loss = compute_losses(embeddings, ["halo"], ["halo"], NegativeSet(), _vocabulary(["halo"]), tau=0.01)
        assert float(loss.ce) == pytest.approx(0.0, abs=1e-12)

    def test_equal_logits_give_two_ln_two(self):
        # the visual row is orthogonal to both class rows, so every logit is 0
        embeddings = _embeddings([[0.0, 1.0]], [[1.0, 0.0], [-1.0, 0.0]])
        loss = compute_losses(
            embeddings, ["halo"], ["halo", "reef"], NegativeSet(), _vocabulary(["halo", "reef"]), tau=0.01
        )
        assert float(loss.ce) == pytest.approx(2 * math.log(2), abs=1e-12)
        assert float(loss.ce_visual) == pytest.approx(math.log(2), abs=1e-12)

    def test_regression_term(self):
        embeddings = _embeddings([[1.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]], stored=[[1.0, 2.0], [0.0, 1.0]])
        loss = compute_losses(
            embeddings, ["halo"], ["halo", "reef"], NegativeSet(), _vocabulary(["halo", "reef"]), tau=0.1
        )
        # mean over classes of squared distances (4 + 0) / 2
        assert float(loss.reg) == pytest.approx(2.0)
        assert float(loss.total) == pytest.approx(float(loss.ce) + 2.0)

    def test_regression_can_be_disabled(self):
        embeddings = _embeddings([[1.0, 0.0]], [[1.0, 0.0]], stored=[[5.0, 5.0]])
        loss = compute_losses(
            embeddings, ["halo"], ["halo"], NegativeSet(), _vocabulary(["halo"]), tau=0.1, include_reg=False
        )
        assert float(loss.reg) == 0.0

    def test_negatives_only_enter_their_own_sample(self):
        vocabulary = _vocabulary(["halo", "reef", "nova"])
        embeddings = _embeddings([[1.0, 0.0], [0.0, 1.0]], [[1.0, 0.2], [0.2, 1.0]])
        plain = compute_losses(
            embeddings, ["halo", "reef"], ["halo", "reef"], NegativeSet(), vocabulary, tau=0.1
        )
        with_negative = compute_losses(
            embeddings, ["halo", "reef"], ["halo", "reef"],
            NegativeSet({0: frozenset({"nova"})}), vocabulary, tau=0.1,
        )
        # an extra column can only add probability mass away from the label
        assert float(with_negative.ce) > float(plain.ce)

    def test_label_outside_class_set(self):
        embeddings = _embeddings([[1.0, 0.0]], [[1.0, 0.0]])
        with pytest.raises(ContractViolation, match="local class space"):
            compute_losses(embeddings, ["reef"], ["halo"], NegativeSet(), _vocabulary(["halo"]), tau=0.1)

    def test_negative_inside_class_set(self):
        embeddings = _embeddings([[1.0, 0.0]], [[1.0, 0.0], [0.0, 1.0]])
        with pytest.raises(ContractViolation, match="outside the current class set"):
            compute_losses(
                embeddings, ["halo"], ["halo", "reef"],
                NegativeSet({0: frozenset({"reef"})}), _vocabulary(["halo", "reef"]), tau=0.1,
            )

    def test_breakdown_to_dict(self):
        embeddings = _embeddings([[1.0, 0.0]], [[1.0, 0.0]])
        loss = compute_losses(embeddings, ["halo"], ["halo"], NegativeSet(), _vocabulary(["halo"]), tau=0.1)
        assert set(loss.to_dict()) == {"ce_visual", "ce_cls", "ce", "reg", "total"}
        assert loss.is_finite()


class TestForwardBatch:
    """Tests for forward_batch."""

    def test_regression_is_zero_at_task_start(self, backbone, backbone_config, tiny_stream):
        task = tiny_stream.task(1)
        vocabulary = ClassVocabulary()
        vocabulary.ensure_entries(task.class_set, backbone.frozen_text_embedding, 1)
        adapter = init_adapter(1, 2, TrainConfig(), backbone_config)
        pixels = backbone.as_pixels(task.train_samples[:4])
        embeddings = forward_batch(backbone, pixels, TaskPromptBank(), None, adapter, vocabulary, task.class_set)
        labels = [s.label for s in task.train_samples[:4]]
        loss = compute_losses(embeddings, labels, task.class_set, NegativeSet(), vocabulary, tau=0.01)
        assert float(loss.reg) == 0.0
        assert torch.equal(embeddings.visual, embeddings.cls)

    def test_refined_is_mean_of_adapter_and_vocabulary(self, backbone, backbone_config, tiny_stream):
        task = tiny_stream.task(1)
        vocabulary = ClassVocabulary()
        vocabulary.ensure_entries(task.class_set, lambda _: torch.zeros(8, dtype=torch.float64), 1)
        adapter = init_adapter(1, 2, TrainConfig(), backbone_config)
        pixels = backbone.as_pixels(task.train_samples[:2])
        embeddings = forward_batch(backbone, pixels, TaskPromptBank(), None, adapter, vocabulary, task.class_set)
        frozen = backbone.frozen_text_embeddings(task.class_set)
        assert torch.allclose(embeddings.refined, frozen / 2)
        unrefined = forward_batch(
            backbone, pixels, TaskPromptBank(), None, adapter, vocabulary, task.class_set, refine=False
        )
        assert torch.allclose(unrefined.refined, frozen)
