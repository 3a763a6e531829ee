"""Invariant checks run by the ``verify`` command."""

import logging
import time
from dataclasses import dataclass
from typing import Callable, List, Sequence, Tuple

import numpy as np
import torch

from .encoders import DualEncoder, LowRankAdapter, VisualBatch, build_attention_mask
from .metrics import AccuracyMatrix, compute_report
from .models import BackboneConfig
from .training import BatchEmbeddings, NegativeSet, compute_losses
from .vocabulary import ClassVocabulary

logger = logging.getLogger(__name__)

GRAD_EPS = 1e-5
GRAD_RTOL = 1e-4
GRAD_ATOL = 1e-7
TOLERANCE = {torch.float32: 1e-6, torch.float64: 1e-12}


@dataclass
class CheckResult:
    """Outcome of one invariant check."""

    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def __str__(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


def expected_mask(t: int, num_patches: int) -> torch.Tensor:
    """Block structure of the prompt mask written out cell by cell."""
    size = t + num_patches + 1
    allowed = torch.ones(size, size, dtype=torch.bool)
    for query in range(size):
        for key in range(t):
            if query >= t or key > query:
                allowed[query, key] = False
    return allowed


def check_attention_masks() -> str:
    for t in range(5):
        for n in (1, 4, 16):
            mask = build_attention_mask(t, n)
            if not torch.equal(mask.allowed, expected_mask(t, n)):
                raise AssertionError(f"Mask mismatch for t={t}, N={n}")
            expected = t * (t - 1) // 2 + (n + 1) * t
            if mask.false_count != expected:
                raise AssertionError(f"t={t}, N={n}: {mask.false_count} masked cells, expected {expected}")
    return "15 masks match the block structure"


def _backbone(dtype: str, seed: int, embed_dim: int = 8, image_shape=(8, 8, 3)) -> DualEncoder:
    config = BackboneConfig(
        embed_dim=embed_dim, num_layers=2, num_heads=2, patch_size=4, dtype=dtype, seed=seed
    )
    return DualEncoder(config, image_shape)


def _random_prompts(backbone: DualEncoder, count: int, generator: torch.Generator) -> torch.Tensor:
    return torch.randn(count, backbone.embed_dim, generator=generator, dtype=backbone.dtype) * 0.5


def check_cls_invariance(samples: int = 100, dtype: str = "float64") -> str:
    backbone = _backbone(dtype, seed=11)
    generator = torch.Generator().manual_seed(5)
    pixels = torch.rand((samples, 8, 8, 3), generator=generator, dtype=torch.float64).to(backbone.dtype)
    plain = backbone.image(pixels).cls_output
    worst = 0.0
    with torch.no_grad():
        for t in range(1, 5):
            prompted = backbone.image(pixels, _random_prompts(backbone, t, generator)).cls_output
            worst = max(worst, float((prompted - plain).abs().max()))
    tolerance = TOLERANCE[backbone.dtype]
    if worst >= tolerance:
        raise AssertionError(f"class token moved by {worst:.3e} (tolerance {tolerance:.0e})")
    return f"max |dx_cls| = {worst:.2e} over {samples} images, t <= 4"


def check_prefix_stability(dtype: str = "float64") -> str:
    backbone = _backbone(dtype, seed=12)
    generator = torch.Generator().manual_seed(6)
    pixels = torch.rand((16, 8, 8, 3), generator=generator, dtype=torch.float64).to(backbone.dtype)
    prompts = _random_prompts(backbone, 4, generator)
    worst = 0.0
    with torch.no_grad():
        outputs = {t: backbone.image(pixels, prompts[:t]).prompt_outputs for t in range(1, 5)}
        for t in range(1, 5):
            for i in range(1, t + 1):
                diff = outputs[t][:, i - 1] - outputs[i][:, i - 1]
                worst = max(worst, float(diff.abs().max()))
    tolerance = TOLERANCE[backbone.dtype]
    if worst >= tolerance:
        raise AssertionError(f"prompt outputs changed by {worst:.3e} with a longer bank")
    return f"max |dp_i| = {worst:.2e} for i <= t <= 4"


def gradient_problem(seed: int) -> Tuple[Callable[..., torch.Tensor], Tuple[torch.Tensor, ...]]:
    """
    A small float64 training objective and its trainable inputs.

    The first input is the active prompt; the rest are the adapter's down and up
    matrices. The batch includes a negative class from a previous task.
    """
    backbone = _backbone("float64", seed=seed)
    generator = torch.Generator().manual_seed(1000 + seed)
    pixels = torch.rand((3, 8, 8, 3), generator=generator, dtype=torch.float64)
    frozen_prompt = _random_prompts(backbone, 1, generator)
    prompt = _random_prompts(backbone, 1, generator).requires_grad_(True)

    adapter = LowRankAdapter(2, backbone.config.num_layers, backbone.embed_dim, 2, ("q", "v"), torch.float64)
    keys = list(adapter.keys())
    downs = [torch.randn(backbone.embed_dim, 2, generator=generator, dtype=torch.float64) * 0.3 for _ in keys]
    ups = [torch.randn(2, backbone.embed_dim, generator=generator, dtype=torch.float64) * 0.3 for _ in keys]

    class_set = ["amber", "birch"]
    labels = ["amber", "birch", "amber"]
    vocabulary = ClassVocabulary(alpha=0.1)
    vocabulary.ensure_entries(["cedar"], backbone.frozen_text_embedding, 1)
    vocabulary.ensure_entries(class_set, backbone.frozen_text_embedding, 2)
    for name in class_set:
        noise = torch.randn(backbone.embed_dim, generator=generator, dtype=torch.float64) * 0.1
        vocabulary.refresh(name, vocabulary.lookup(name) + noise)
    negatives = NegativeSet({0: frozenset({"cedar"})})

    def objective(prompt_vectors: torch.Tensor, *adapter_params: torch.Tensor) -> torch.Tensor:
        deltas = {}
        for key, down, up in zip(keys, adapter_params[: len(keys)], adapter_params[len(keys) :]):
            layer, target = key.split("_")
            deltas.setdefault(int(layer), {})[target] = (down, up)
        batch: VisualBatch = backbone.image(pixels, torch.cat([frozen_prompt, prompt_vectors]))
        stored = vocabulary.stack(class_set)
        adapted = torch.stack([backbone.text(name, deltas) for name in class_set])
        embeddings = BatchEmbeddings(
            batch=batch,
            visual=batch.fused(2),
            cls=batch.cls_output,
            refined=(adapted + stored) / 2,
            stored=stored,
        )
        return compute_losses(embeddings, labels, class_set, negatives, vocabulary, tau=0.01).total

    inputs = (prompt,) + tuple(p.requires_grad_(True) for p in downs + ups)
    return objective, inputs


def check_gradients(seeds: Sequence[int]) -> str:
    for seed in seeds:
        objective, inputs = gradient_problem(seed)
        torch.autograd.gradcheck(
            objective, inputs, eps=GRAD_EPS, atol=GRAD_ATOL, rtol=GRAD_RTOL, raise_exception=True
        )
    return f"analytic gradients match central differences for {len(seeds)} seeds"


def check_momentum_fixed_point(alpha: float = 0.1, updates: int = 50) -> str:
    generator = torch.Generator().manual_seed(3)
    target = torch.randn(16, generator=generator, dtype=torch.float64)
    vocabulary = ClassVocabulary(alpha=alpha)
    vocabulary.ensure_entries(
        ["kestrel"], lambda _: torch.randn(16, generator=generator, dtype=torch.float64), 1
    )
    start = float((vocabulary.lookup("kestrel") - target).norm())
    for _ in range(updates):
        vocabulary.momentum_update("kestrel", target)
    ratio = float((vocabulary.lookup("kestrel") - target).norm()) / start
    expected = (1 - alpha) ** updates
    error = abs(ratio - expected) / expected
    if error >= 1e-6:
        raise AssertionError(f"contraction {ratio:.6e}, expected {expected:.6e}")
    return f"distance shrank by {ratio:.4e} (expected {expected:.4e})"


def brute_force_metrics(rows: np.ndarray) -> dict:
    """Metric formulas evaluated with plain loops."""
    size = len(rows)
    a_t, last_t, f_t, t_t = [], [], [], []
    for t in range(1, size + 1):
        row = [float(rows[t - 1][i - 1]) for i in range(1, size + 1)]
        a_t.append(sum(row) / size)
        last_t.append(row[size - 1])
        f_t.append(sum(row[i - 1] for i in range(t, size + 1)) / (size - t + 1))
        if t >= 2:
            t_t.append(sum(row[i - 1] for i in range(1, t)) / (t - 1))
    return {
        "avg": sum(a_t) / size,
        "last": sum(last_t) / size,
        "forgetting": sum(f_t) / size,
        "transfer": sum(t_t) / len(t_t) if t_t else None,
    }


def check_metric_oracle(trials: int = 100) -> str:
    rng = np.random.default_rng(17)
    worst = 0.0
    for _ in range(trials):
        size = int(rng.integers(1, 7))
        rows = rng.random((size, size))
        report = compute_report(AccuracyMatrix.from_rows(rows))
        oracle = brute_force_metrics(rows)
        for key, value in oracle.items():
            if value is None:
                if report.aggregate[key] is not None:
                    raise AssertionError(f"{key} should be undefined for T=1")
                continue
            worst = max(worst, abs(report.aggregate[key] - value))
    if worst >= 1e-12:
        raise AssertionError(f"metrics differ from the oracle by {worst:.3e}")
    return f"{trials} random matrices agree to {worst:.1e}"


def run_verification(gradient_seeds: int = 20) -> List[CheckResult]:
    """Run every check; failures are reported, not raised."""
    checks = [
        ("attention mask", check_attention_masks),
        ("class token invariance (float64)", lambda: check_cls_invariance(dtype="float64")),
        ("class token invariance (float32)", lambda: check_cls_invariance(dtype="float32")),
        ("prompt prefix stability", check_prefix_stability),
        ("gradient check", lambda: check_gradients(range(gradient_seeds))),
        ("momentum fixed point", check_momentum_fixed_point),
        ("metric oracle", check_metric_oracle),
    ]
    results = []
    for name, check in checks:
        started = time.perf_counter()
        try:
            detail, passed = check(), True
        except Exception as e:
            detail, passed = f"{type(e).__name__}: {e}", False
        result = CheckResult(name, passed, detail, time.perf_counter() - started)
        (logger.info if passed else logger.error)(str(result))
        results.append(result)
    failed = sum(not r.passed for r in results)
    logger.info(f"Verification: {len(results) - failed}/{len(results)} checks passed")
    return results