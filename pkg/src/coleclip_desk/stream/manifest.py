"""Dataset manifest format for task streams.

A manifest is a YAML document::

    version: 1
    image_shape: [16, 16, 3]
    T: 3
    tasks:
      - task_index: 1
        domain_id: domain-1
        class_set: [ripple, chevron]
        train: {data: train-t1.bin, index: train-t1.idx, count: 64}
        test: {data: test-t1.bin, index: test-t1.idx, count: 64}

Sample pixels live next to the manifest as flat little-endian float32 arrays.
Each index file starts with the header line ``sample_id<TAB>label<TAB>offset``
followed by one tab-separated line per sample, where offset counts floats into
the array. Only the first line is a header, so sample ids may start with any
character.
"""

import logging
from pathlib import Path
from typing import Any, List, Optional, Sequence, Tuple, Union

import numpy as np
import yaml

from ..models import ImageSample, TaskSpec, TaskStream

logger = logging.getLogger(__name__)

MANIFEST_VERSION = 1
SAMPLE_DTYPE = np.dtype("<f4")
INDEX_HEADER = "sample_id\tlabel\toffset"


class ManifestError(Exception):
    """Raised when a manifest or one of its sample files is malformed."""

    def __init__(
        self, message: str, path: Union[str, Path], line: Optional[int] = None, field: str = ""
    ):
        locus = str(path)
        if line is not None:
            locus += f":{line}"
        if field:
            locus += f" [{field}]"
        super().__init__(f"{locus}: {message}")
        self.path = str(path)
        self.line = line
        self.field = field


def _write_split(
    directory: Path, split: str, task: TaskSpec, samples: Sequence[ImageSample]
) -> dict:
    data_name = f"{split}-t{task.task_index}.bin"
    index_name = f"{split}-t{task.task_index}.idx"
    offset = 0
    lines = [INDEX_HEADER]
    arrays = []
    for sample in samples:
        flat = np.ascontiguousarray(sample.pixels, dtype=SAMPLE_DTYPE).ravel()
        arrays.append(flat)
        lines.append(f"{sample.sample_id}\t{sample.label}\t{offset}")
        offset += flat.size
    data = np.concatenate(arrays) if arrays else np.zeros(0, dtype=SAMPLE_DTYPE)
    data.astype(SAMPLE_DTYPE).tofile(directory / data_name)
    (directory / index_name).write_text("\n".join(lines) + "\n")
    return {"data": data_name, "index": index_name, "count": len(samples)}


def _stream_shape(stream: TaskStream) -> Optional[Tuple[int, ...]]:
    for task in stream.tasks:
        for sample in task.train_samples + task.test_samples:
            return tuple(sample.shape)
    return None


def write_manifest(
    stream: TaskStream,
    path: Union[str, Path],
    image_shape: Optional[Sequence[int]] = None,
) -> Path:
    """
    Write a stream to a manifest file plus per-split sample files.

    Args:
        stream: Stream to persist
        path: Manifest file path; sample files are written to the same directory
        image_shape: Shape to record; taken from the first sample of any split if omitted

    Returns:
        Path of the manifest file

    Raises:
        ManifestError: If the stream holds no sample and no image_shape is given
    """
    path = Path(path)
    shape = image_shape if image_shape is not None else _stream_shape(stream)
    if shape is None:
        raise ManifestError("stream has no samples; pass image_shape explicitly", path)
    shape = [int(v) for v in shape]
    path.parent.mkdir(parents=True, exist_ok=True)

    tasks = []
    for task in stream.tasks:
        tasks.append(
            {
                "task_index": task.task_index,
                "domain_id": task.domain_id,
                "class_set": list(task.class_set),
                "train": _write_split(path.parent, "train", task, task.train_samples),
                "test": _write_split(path.parent, "test", task, task.test_samples),
            }
        )

    document = {
        "version": MANIFEST_VERSION,
        "image_shape": shape,
        "T": stream.total_tasks,
        "tasks": tasks,
    }
    path.write_text(yaml.safe_dump(document, sort_keys=False))
    logger.info(f"Wrote manifest for {stream.total_tasks} tasks to {path}")
    return path


def _node_line(node: Optional[yaml.Node], keys: Sequence[Any]) -> Optional[int]:
    """1-based line of the YAML node at ``keys``, or of the deepest node found."""
    line = node.start_mark.line + 1 if node is not None else None
    for key in keys:
        if isinstance(node, yaml.MappingNode):
            match = next((v for k, v in node.value if k.value == key), None)
        elif isinstance(node, yaml.SequenceNode) and isinstance(key, int) and key < len(node.value):
            match = node.value[key]
        else:
            match = None
        if match is None:
            break
        node = match
        line = node.start_mark.line + 1
    return line


class _ManifestReader:
    def __init__(self, path: Path):
        self.path = path
        self.text = path.read_text()
        try:
            self.root = yaml.compose(self.text)
            self.data = yaml.safe_load(self.text)
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            line = mark.line + 1 if mark is not None else None
            raise ManifestError(f"invalid YAML: {e}", path, line) from e

    def fail(self, message: str, *keys: Any) -> ManifestError:
        field = ".".join(str(k) if not isinstance(k, int) else f"[{k}]" for k in keys)
        return ManifestError(message, self.path, _node_line(self.root, keys), field.replace(".[", "["))

    def require(self, mapping: Any, key: str, kind: type, *where: Any) -> Any:
        if not isinstance(mapping, dict) or key not in mapping:
            raise self.fail(f"missing field '{key}'", *where, key)
        value = mapping[key]
        if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
            raise self.fail(f"field '{key}' must be {kind.__name__}", *where, key)
        return value

    def read(self) -> TaskStream:
        if not isinstance(self.data, dict):
            raise ManifestError("manifest root must be a mapping", self.path, 1)
        version = self.require(self.data, "version", int)
        if version != MANIFEST_VERSION:
            raise self.fail(f"unsupported version {version}", "version")
        shape = self.require(self.data, "image_shape", list)
        if len(shape) != 3 or not all(isinstance(v, int) and v > 0 for v in shape):
            raise self.fail("image_shape must be three positive integers", "image_shape")
        total = self.require(self.data, "T", int)
        raw_tasks = self.require(self.data, "tasks", list)
        if len(raw_tasks) != total:
            raise self.fail(f"T is {total} but {len(raw_tasks)} task blocks are present", "T")

        tasks = []
        for i, raw in enumerate(raw_tasks):
            where = ("tasks", i)
            task_index = self.require(raw, "task_index", int, *where)
            domain_id = self.require(raw, "domain_id", str, *where)
            class_set = self.require(raw, "class_set", list, *where)
            train = self._read_split(raw, "train", tuple(shape), where)
            test = self._read_split(raw, "test", tuple(shape), where)
            try:
                tasks.append(
                    TaskSpec(
                        task_index=task_index,
                        domain_id=domain_id,
                        class_set=[str(name) for name in class_set],
                        train_samples=train,
                        test_samples=test,
                    )
                )
            except ValueError as e:
                raise self.fail(str(e), *where) from e
        try:
            return TaskStream(tasks=tasks)
        except ValueError as e:
            raise self.fail(str(e), "tasks") from e

    def _read_split(
        self, raw: dict, split: str, shape: Tuple[int, int, int], where: Tuple[Any, ...]
    ) -> List[ImageSample]:
        block = self.require(raw, split, dict, *where)
        data_name = self.require(block, "data", str, *where, split)
        index_name = self.require(block, "index", str, *where, split)
        count = self.require(block, "count", int, *where, split)

        data_path = self.path.parent / data_name
        index_path = self.path.parent / index_name
        if not data_path.is_file():
            raise self.fail(f"sample file {data_name} not found", *where, split, "data")
        if not index_path.is_file():
            raise self.fail(f"index file {index_name} not found", *where, split, "index")

        data = np.fromfile(data_path, dtype=SAMPLE_DTYPE)
        size = shape[0] * shape[1] * shape[2]
        samples = []
        lines = index_path.read_text().splitlines()
        if not lines or lines[0] != INDEX_HEADER:
            raise ManifestError("missing index header", index_path, 1)
        for line_no, line in enumerate(lines[1:], start=2):
            if not line.strip():
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise ManifestError(
                    f"expected 3 tab-separated fields, got {len(fields)}", index_path, line_no
                )
            sample_id, label, raw_offset = fields
            try:
                offset = int(raw_offset)
            except ValueError as e:
                raise ManifestError(
                    f"offset '{raw_offset}' is not an integer", index_path, line_no, "offset"
                ) from e
            if offset < 0 or offset + size > data.size:
                raise ManifestError(
                    f"offset {offset} outside {data_name} ({data.size} floats)",
                    index_path,
                    line_no,
                    "offset",
                )
            pixels = data[offset : offset + size].reshape(shape).copy()
            try:
                samples.append(ImageSample(sample_id=sample_id, pixels=pixels, label=label))
            except ValueError as e:
                raise ManifestError(str(e), index_path, line_no) from e

        if len(samples) != count:
            raise self.fail(
                f"count is {count} but {index_name} lists {len(samples)} samples",
                *where,
                split,
                "count",
            )
        return samples


def load_manifest(path: Union[str, Path]) -> TaskStream:
    """
    Load a stream from a manifest file.

    Args:
        path: Manifest file path

    Returns:
        The TaskStream described by the manifest

    Raises:
        ManifestError: If the manifest or a sample file is malformed (message carries
            file, line and field)
    """
    path = Path(path)
    if not path.is_file():
        raise ManifestError("manifest not found", path)
    stream = _ManifestReader(path).read()
    logger.info(f"Loaded manifest {path}: {stream.total_tasks} tasks")
    return stream
