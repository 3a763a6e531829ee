"""Cross-domain class vocabulary: class name -> momentum-updated text embedding.

The vocabulary is the only state kept for inference after a task is trained.
Overlapping classes of different tasks share one entry.

File format (text, one record per line after the header)::

    version 1
    dim 32
    dtype float32
    alpha 0.1
    entries 2
    ripple<TAB>1<TAB>1,3<TAB>0.125 -0.5 ...
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Set, Union

import torch

logger = logging.getLogger(__name__)

VOCABULARY_VERSION = 1
HEADER_KEYS = ("version", "dim", "dtype", "alpha", "entries")
FLOAT_DIGITS = {torch.float32: 9, torch.float64: 17}


class VocabularyError(Exception):
    """Base exception for vocabulary errors."""

    pass


class MissingEntryError(VocabularyError, KeyError):
    """Raised when an update targets a class name that is not in the vocabulary."""

    pass


class VocabularyFormatError(VocabularyError):
    """Raised when a vocabulary file cannot be parsed."""

    def __init__(self, message: str, path: Union[str, Path], line: int):
        super().__init__(f"{path}:{line}: {message}")
        self.line = line


@dataclass(eq=False)
class VocabEntry:
    """One vocabulary record V(y)."""

    class_name: str
    embedding: torch.Tensor
    first_task: int
    source_tasks: Set[int] = field(default_factory=set)

    def __post_init__(self):
        """Validate the entry."""
        self.source_tasks = set(self.source_tasks) | {self.first_task}
        if self.embedding.ndim != 1:
            raise ValueError(f"Embedding of '{self.class_name}' must be a vector")
        if not torch.isfinite(self.embedding).all():
            raise ValueError(f"Embedding of '{self.class_name}' has non-finite values")

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, VocabEntry):
            return NotImplemented
        return (
            self.class_name == other.class_name
            and self.first_task == other.first_task
            and self.source_tasks == other.source_tasks
            and self.embedding.dtype == other.embedding.dtype
            and torch.equal(self.embedding, other.embedding)
        )


class ClassVocabulary:
    """Key-value store of class embeddings with momentum coefficient alpha."""

    def __init__(self, alpha: float = 0.1):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must be in [0, 1], got {alpha}")
        self.alpha = alpha
        self.entries: Dict[str, VocabEntry] = {}

    def ensure_entries(
        self, names: Iterable[str], encoder: Callable[[str], torch.Tensor], task_index: int
    ) -> int:
        """
        Insert missing classes with their frozen text embedding.

        Names already present keep their value; they only record ``task_index``
        as an additional source task.

        Args:
            names: Class names of the task
            encoder: Frozen text path, name -> f_t(name)
            task_index: Task introducing the names

        Returns:
            Number of entries added
        """
        added = 0
        for name in names:
            entry = self.entries.get(name)
            if entry is not None:
                entry.source_tasks.add(task_index)
                continue
            embedding = encoder(name).detach().clone()
            self.entries[name] = VocabEntry(name, embedding, task_index, {task_index})
            added += 1
        if added:
            logger.info(f"Vocabulary: added {added} classes for task {task_index} ({len(self)} total)")
        return added

    def momentum_update(self, name: str, refined: torch.Tensor) -> torch.Tensor:
        """
        V <- alpha * w + (1 - alpha) * V for one class, in place.

        Raises:
            MissingEntryError: If the class is not in the vocabulary
        """
        entry = self.entries.get(name)
        if entry is None:
            raise MissingEntryError(f"Class '{name}' is not in the vocabulary")
        updated = torch.lerp(entry.embedding, refined.detach().to(entry.embedding.dtype), self.alpha)
        entry.embedding = updated
        return updated

    def refresh(self, name: str, embedding: torch.Tensor) -> None:
        """Replace a stored value outright."""
        entry = self.entries.get(name)
        if entry is None:
            raise MissingEntryError(f"Class '{name}' is not in the vocabulary")
        entry.embedding = embedding.detach().clone()

    def lookup(self, name: str) -> Optional[torch.Tensor]:
        """Stored embedding, or None for classes never learned."""
        entry = self.entries.get(name)
        return None if entry is None else entry.embedding

    def source_tasks(self, name: str) -> Set[int]:
        entry = self.entries.get(name)
        return set() if entry is None else set(entry.source_tasks)

    def stack(self, names: Iterable[str]) -> torch.Tensor:
        """(K, D) tensor of stored embeddings."""
        rows = []
        for name in names:
            entry = self.entries.get(name)
            if entry is None:
                raise MissingEntryError(f"Class '{name}' is not in the vocabulary")
            rows.append(entry.embedding)
        return torch.stack(rows)

    def names(self) -> List[str]:
        """Class names in insertion (first-appearance) order."""
        return list(self.entries)

    def snapshot(self) -> Dict[str, torch.Tensor]:
        return {name: entry.embedding.clone() for name, entry in self.entries.items()}

    def save(self, path: Union[str, Path]) -> Path:
        """Write the vocabulary to a versioned text file."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        first = next(iter(self.entries.values()), None)
        dim = 0 if first is None else first.embedding.shape[0]
        dtype = torch.float32 if first is None else first.embedding.dtype
        digits = FLOAT_DIGITS[dtype]

        lines = [
            f"version {VOCABULARY_VERSION}",
            f"dim {dim}",
            f"dtype {str(dtype).replace('torch.', '')}",
            f"alpha {self.alpha!r}",
            f"entries {len(self.entries)}",
        ]
        for entry in self.entries.values():
            values = " ".join(format(v, f".{digits}g") for v in entry.embedding.tolist())
            sources = ",".join(str(t) for t in sorted(entry.source_tasks))
            lines.append(f"{entry.class_name}\t{entry.first_task}\t{sources}\t{values}")
        path.write_text("\n".join(lines) + "\n")
        logger.debug(f"Saved vocabulary ({len(self.entries)} entries) to {path}")
        return path

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ClassVocabulary":
        """
        Read a vocabulary file written by ``save``.

        Raises:
            VocabularyFormatError: With the offending line number
        """
        path = Path(path)
        lines = path.read_text().splitlines()
        header: Dict[str, str] = {}
        for line_no, key in enumerate(HEADER_KEYS, start=1):
            if line_no > len(lines):
                raise VocabularyFormatError(f"missing header field '{key}'", path, line_no)
            found, _, value = lines[line_no - 1].partition(" ")
            if found != key or not value:
                raise VocabularyFormatError(f"expected header field '{key}'", path, line_no)
            header[key] = value

        try:
            version = int(header["version"])
            dim = int(header["dim"])
            alpha = float(header["alpha"])
            count = int(header["entries"])
            dtype = {"float32": torch.float32, "float64": torch.float64}[header["dtype"]]
        except (ValueError, KeyError) as e:
            raise VocabularyFormatError(f"invalid header value: {e}", path, 1) from e
        if version != VOCABULARY_VERSION:
            raise VocabularyFormatError(f"unsupported version {version}", path, 1)

        vocabulary = cls(alpha=alpha)
        records = lines[len(HEADER_KEYS) :]
        if len(records) != count:
            raise VocabularyFormatError(
                f"header announces {count} entries, found {len(records)}", path, len(HEADER_KEYS)
            )
        for line_no, line in enumerate(records, start=len(HEADER_KEYS) + 1):
            fields = line.split("\t")
            if len(fields) != 4:
                raise VocabularyFormatError("expected 4 tab-separated fields", path, line_no)
            name, first, sources, values = fields
            try:
                embedding = torch.tensor([float(v) for v in values.split()], dtype=dtype)
                entry = VocabEntry(
                    class_name=name,
                    embedding=embedding,
                    first_task=int(first),
                    source_tasks={int(t) for t in sources.split(",")},
                )
            except ValueError as e:
                raise VocabularyFormatError(str(e), path, line_no) from e
            if embedding.shape[0] != dim:
                raise VocabularyFormatError(
                    f"embedding has {embedding.shape[0]} values, expected {dim}", path, line_no
                )
            vocabulary.entries[name] = entry
        logger.debug(f"Loaded vocabulary ({count} entries) from {path}")
        return vocabulary

    def __contains__(self, name: object) -> bool:
        return name in self.entries

    def __len__(self) -> int:
        return len(self.entries)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ClassVocabulary):
            return NotImplemented
        return (
            self.alpha == other.alpha
            and list(self.entries) == list(other.entries)
            and all(self.entries[k] == other.entries[k] for k in self.entries)
        )

    def __repr__(self) -> str:
        return f"ClassVocabulary(alpha={self.alpha}, entries={len(self.entries)})"
