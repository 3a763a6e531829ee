"""Checkpoint codec for the model state and class vocabulary.

A checkpoint is one JSON document. Tensors are stored either as decimal lists
(``decimal``: 9 significant digits for float32, shortest round-trip repr for
float64) or as base64 little-endian bytes in the tensor's own dtype
(``binary``). Both round-trip exactly.
"""

import base64
import json
import logging
from dataclasses import asdict
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import torch

from .encoders import DualEncoder, EncoderError, LowRankAdapter, TaskPrompt, TaskPromptBank
from .models import BackboneConfig
from .state import ModelState
from .vocabulary import ClassVocabulary, VocabEntry

logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
FORMATS = ("decimal", "binary")
NUMPY_DTYPES = {"float32": "<f4", "float64": "<f8"}


class CheckpointError(EncoderError):
    """Raised when a checkpoint cannot be written or read."""

    pass


def encode_tensor(tensor: torch.Tensor, fmt: str = "decimal") -> Dict[str, Any]:
    """JSON-ready record of a float tensor."""
    dtype = str(tensor.dtype).replace("torch.", "")
    if dtype not in NUMPY_DTYPES:
        raise CheckpointError(f"Unsupported tensor dtype {dtype}")
    array = tensor.detach().cpu().numpy().astype(NUMPY_DTYPES[dtype])
    record: Dict[str, Any] = {"dtype": dtype, "shape": list(array.shape)}
    if fmt == "binary":
        record["data"] = base64.b64encode(array.tobytes()).decode("ascii")
    elif fmt == "decimal":
        flat = array.ravel().tolist()
        record["values"] = [float(format(v, ".9g")) for v in flat] if dtype == "float32" else flat
    else:
        raise CheckpointError(f"Unknown checkpoint format '{fmt}', expected one of {FORMATS}")
    return record


def decode_tensor(record: Dict[str, Any]) -> torch.Tensor:
    try:
        numpy_dtype = NUMPY_DTYPES[record["dtype"]]
        shape = tuple(record["shape"])
        if "data" in record:
            array = np.frombuffer(base64.b64decode(record["data"]), dtype=numpy_dtype)
        else:
            array = np.asarray(record["values"], dtype=numpy_dtype)
        array = array.reshape(shape).astype(numpy_dtype.replace("<", "="))
    except (KeyError, ValueError, TypeError) as e:
        raise CheckpointError(f"Malformed tensor record: {e}") from e
    return torch.from_numpy(array.copy())


def _encode_state(state: ModelState, fmt: str) -> Dict[str, Any]:
    backbone = state.backbone
    return {
        "backbone": asdict(backbone.config),
        "image_shape": list(backbone.image.image_shape),
        "trained_tasks": state.trained_tasks,
        "use_task_prompts": state.use_task_prompts,
        "shared_prompt": state.shared_prompt,
        "prompts": [
            {"task": prompt.task_index, "vectors": encode_tensor(prompt.vectors, fmt)}
            for prompt in state.bank
        ],
        "adapters": [
            {
                "task": task,
                "rank": adapter.rank,
                "targets": list(adapter.targets),
                "down": {k: encode_tensor(adapter.down[k], fmt) for k in adapter.keys()},
                "up": {k: encode_tensor(adapter.up[k], fmt) for k in adapter.keys()},
            }
            for task, adapter in sorted(state.adapters.items())
        ],
    }


def _encode_vocabulary(vocabulary: ClassVocabulary, fmt: str) -> Dict[str, Any]:
    return {
        "alpha": vocabulary.alpha,
        "entries": [
            {
                "name": entry.class_name,
                "first_task": entry.first_task,
                "source_tasks": sorted(entry.source_tasks),
                "embedding": encode_tensor(entry.embedding, fmt),
            }
            for entry in vocabulary.entries.values()
        ],
    }


def save_checkpoint(
    path: Union[str, Path],
    state: ModelState,
    vocabulary: ClassVocabulary,
    fmt: str = "decimal",
    metadata: Optional[Dict[str, Any]] = None,
) -> Path:
    """
    Write the learned state, the vocabulary and run metadata to ``path``.

    Returns:
        Path written
    """
    path = Path(path)
    document = {
        "version": CHECKPOINT_VERSION,
        "format": fmt,
        "state": _encode_state(state, fmt),
        "vocabulary": _encode_vocabulary(vocabulary, fmt),
        "metadata": metadata or {},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(document, indent=1))
    tmp.replace(path)
    logger.info(f"Checkpoint written: {path} ({state.trained_tasks} tasks, {len(vocabulary)} classes)")
    return path


def load_checkpoint(
    path: Union[str, Path], backbone: Optional[DualEncoder] = None
) -> Tuple[ModelState, ClassVocabulary, Dict[str, Any]]:
    """
    Read a checkpoint written by ``save_checkpoint``.

    The frozen backbone is rebuilt from its stored config unless one is given.

    Raises:
        CheckpointError: If the file is missing, malformed or of another version
    """
    path = Path(path)
    try:
        document = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    if document.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"Unsupported checkpoint version {document.get('version')}")

    try:
        stored = document["state"]
        if backbone is None:
            config = BackboneConfig(**stored["backbone"])
            backbone = DualEncoder(config, tuple(stored["image_shape"]))

        bank = TaskPromptBank()
        for record in stored["prompts"]:
            bank.append(TaskPrompt(record["task"], decode_tensor(record["vectors"])))
        bank.freeze_all()

        adapters: Dict[int, LowRankAdapter] = {}
        for record in stored["adapters"]:
            down = {k: decode_tensor(v) for k, v in record["down"].items()}
            first = next(iter(down.values()))
            adapter = LowRankAdapter(
                record["task"],
                backbone.config.num_layers,
                first.shape[0],
                record["rank"],
                record["targets"],
                first.dtype,
            )
            with torch.no_grad():
                for key in adapter.keys():
                    adapter.down[key].copy_(down[key])
                    adapter.up[key].copy_(decode_tensor(record["up"][key]))
            adapter.freeze()
            adapters[record["task"]] = adapter

        state = ModelState(
            backbone=backbone,
            bank=bank,
            adapters=adapters,
            trained_tasks=stored["trained_tasks"],
            use_task_prompts=stored["use_task_prompts"],
            shared_prompt=stored["shared_prompt"],
        )

        vocab_doc = document["vocabulary"]
        vocabulary = ClassVocabulary(alpha=vocab_doc["alpha"])
        for record in vocab_doc["entries"]:
            vocabulary.entries[record["name"]] = VocabEntry(
                class_name=record["name"],
                embedding=decode_tensor(record["embedding"]),
                first_task=record["first_task"],
                source_tasks=set(record["source_tasks"]),
            )
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"Malformed checkpoint {path}: {e}") from e

    logger.info(f"Checkpoint loaded: {path} ({state.trained_tasks} tasks, {len(vocabulary)} classes)")
    return state, vocabulary, document.get("metadata", {})


def read_metadata(path: Union[str, Path]) -> Dict[str, Any]:
    """Run metadata of a checkpoint, without decoding any tensors."""
    path = Path(path)
    try:
        document = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"Cannot read checkpoint {path}: {e}") from e
    return document.get("metadata", {})
