"""Save and load trained models.

A model is stored as two files: a flat binary tensor container (``.mvoc``) holding every
named parameter, DSVDD center and normalization bound, and a JSON side file with the
method configuration and architecture.

Container layout (little-endian): magic ``MVOC``, u32 version, u32 tensor count, then per
tensor u32 name length, UTF-8 name, u32 ndim, ndim x u32 shape, f64 row-major data.
"""

import json
import logging
import struct
from pathlib import Path
from typing import Dict, Tuple, Union

import numpy as np

from .data import NormStats
from .errors import DataFormatError
from .methods import MethodConfig, Model
from .nn import MlpSpec
from .tensor import Tensor

logger = logging.getLogger(__name__)

CONTAINER_MAGIC = b"MVOC"
CONTAINER_VERSION = 1
SIDE_SUFFIX = ".json"

_U32 = struct.Struct("<I")


def write_tensors(path: Union[str, Path], tensors: Dict[str, Tensor]) -> None:
    """Write named tensors in sorted name order."""
    chunks = [CONTAINER_MAGIC, _U32.pack(CONTAINER_VERSION), _U32.pack(len(tensors))]
    for name in sorted(tensors):
        array = np.ascontiguousarray(tensors[name], dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(_U32.pack(len(encoded)))
        chunks.append(encoded)
        chunks.append(_U32.pack(array.ndim))
        chunks.extend(_U32.pack(d) for d in array.shape)
        chunks.append(array.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def read_tensors(path: Union[str, Path]) -> Dict[str, Tensor]:
    """
    Read a tensor container.

    Raises:
        DataFormatError: On a bad magic, unknown version or truncated file
    """
    raw = Path(path).read_bytes()
    if raw[:4] != CONTAINER_MAGIC:
        raise DataFormatError(f"{path}: not a model container (magic {raw[:4]!r})")
    offset = 4

    def u32() -> int:
        nonlocal offset
        if offset + 4 > len(raw):
            raise DataFormatError(f"{path}: truncated container")
        (value,) = _U32.unpack_from(raw, offset)
        offset += 4
        return value

    version = u32()
    if version != CONTAINER_VERSION:
        raise DataFormatError(f"{path}: unsupported container version {version}")
    tensors = {}
    for _ in range(u32()):
        length = u32()
        name = raw[offset : offset + length].decode("utf-8")
        offset += length
        shape = tuple(u32() for _ in range(u32()))
        size = int(np.prod(shape)) if shape else 1
        end = offset + 8 * size
        if end > len(raw):
            raise DataFormatError(f"{path}: truncated data for tensor '{name}'")
        tensors[name] = np.frombuffer(raw[offset:end], dtype="<f8").astype(np.float64).reshape(shape)
        offset = end
    return tensors


def _paths(path: Union[str, Path]) -> Tuple[Path, Path]:
    container = Path(path)
    return container, container.with_suffix(container.suffix + SIDE_SUFFIX)


def save_model(model: Model, path: Union[str, Path]) -> Path:
    """
    Write ``path`` and its JSON side file ``path + '.json'``.

    Returns:
        Path of the tensor container
    """
    container, side = _paths(path)
    container.parent.mkdir(parents=True, exist_ok=True)
    tensors = dict(model.params)
    for v, center in enumerate(model.centers or []):
        tensors[f"center{v}"] = center
    if model.norm_stats is not None:
        for v, (low, high) in enumerate(zip(model.norm_stats.mins, model.norm_stats.maxs)):
            tensors[f"norm.min{v}"] = low
            tensors[f"norm.max{v}"] = high
    write_tensors(container, tensors)

    meta = {
        "config": model.config.model_dump(mode="json"),
        "view_dims": model.view_dims,
        "encoders": [spec.model_dump(mode="json") for spec in model.encoders],
        "decoders": [spec.model_dump(mode="json") for spec in model.decoders],
        "has_centers": model.centers is not None,
        "has_norm_stats": model.norm_stats is not None,
        "history": model.history,
        "round_counts": model.round_counts,
    }
    side.write_text(json.dumps(meta, indent=2, sort_keys=True))
    logger.info(f"Saved {model.method} model ({len(tensors)} tensors) to {container}")
    return container


def load_model(path: Union[str, Path]) -> Model:
    """
    Load a model written by ``save_model``; scores are bit-identical to the saved model's.

    Raises:
        DataFormatError: If either file is missing or malformed
    """
    container, side = _paths(path)
    if not container.exists() or not side.exists():
        raise DataFormatError(f"Model files missing: {container} / {side}")
    try:
        meta = json.loads(side.read_text())
    except json.JSONDecodeError as e:
        raise DataFormatError(f"{side}: invalid JSON: {e}") from e
    tensors = read_tensors(container)
    n_views = len(meta["view_dims"])

    centers = None
    if meta.get("has_centers"):
        centers = [tensors.pop(f"center{v}") for v in range(n_views)]
    norm_stats = None
    if meta.get("has_norm_stats"):
        norm_stats = NormStats(
            mins=tuple(tensors.pop(f"norm.min{v}") for v in range(n_views)),
            maxs=tuple(tensors.pop(f"norm.max{v}") for v in range(n_views)),
        )
    return Model(
        config=MethodConfig.model_validate(meta["config"]),
        view_dims=list(meta["view_dims"]),
        encoders=[MlpSpec.model_validate(spec) for spec in meta["encoders"]],
        decoders=[MlpSpec.model_validate(spec) for spec in meta["decoders"]],
        params=tensors,
        centers=centers,
        norm_stats=norm_stats,
        history=list(meta.get("history", [])),
        round_counts=[list(c) for c in meta.get("round_counts", [])],
    )
