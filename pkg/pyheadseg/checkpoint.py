"""
Checkpoint file: a plain-text header followed by raw little-endian tensor bytes.

    pyheadseg-checkpoint 1
    config.encoder_channels=16,32,64,128
    ...
    meta.epoch=10
    tensor enc1.conv1.weight float32 16,1,3,3 0 576
    ...
    end
    <binary payload>

Tensor offsets are relative to the first byte after the `end` line.
"""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Tuple, Union

import numpy as np

from pyheadseg.config import parse_lines
from pyheadseg.exceptions import CheckpointError, ConfigError
from pyheadseg.network import Network, NetworkConfig, build
from pyheadseg.typed import StateDict

logger = logging.getLogger(__name__)

MAGIC = "pyheadseg-checkpoint 1"
END = "end"
_DTYPES = {"float32": np.dtype("<f4"), "float64": np.dtype("<f8")}


def _header(config: NetworkConfig, state: StateDict, metadata: Mapping[str, object]) -> Tuple[List[str], List[bytes]]:
    lines = [MAGIC]
    lines += config.to_lines(prefix="config.")
    lines += [f"meta.{key}={value}" for key, value in metadata.items()]
    payload: List[bytes] = []
    offset = 0
    for name, array in state.items():
        dtype_name = "float64" if array.dtype == np.float64 else "float32"
        raw = np.ascontiguousarray(array, dtype=_DTYPES[dtype_name]).tobytes()
        shape = ",".join(str(s) for s in array.shape)
        lines.append(f"tensor {name} {dtype_name} {shape} {offset} {len(raw)}")
        payload.append(raw)
        offset += len(raw)
    lines.append(END)
    return lines, payload


def save_checkpoint(
    path: Union[str, Path],
    network: Network,
    metadata: Optional[Mapping[str, object]] = None,
) -> Path:
    path = Path(path)
    lines, payload = _header(network.config, network.state_dict(), metadata or {})
    with path.open("wb") as fh:
        fh.write(("\n".join(lines) + "\n").encode("utf-8"))
        for raw in payload:
            fh.write(raw)
    logger.debug("wrote checkpoint %s (%d tensors)", path, len(payload))
    return path


def read_checkpoint(path: Union[str, Path]) -> Tuple[NetworkConfig, StateDict, Dict[str, str]]:
    """
    Parse a checkpoint into its config, named arrays and `meta.*` values.
    """
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"checkpoint {path} does not exist")
    blob = path.read_bytes()
    marker = f"\n{END}\n".encode("utf-8")
    cut = blob.find(marker)
    if not blob.startswith(MAGIC.encode("utf-8")) or cut < 0:
        raise CheckpointError(f"{path} is not a checkpoint file")
    header = blob[:cut].decode("utf-8").splitlines()[1:]
    payload = memoryview(blob)[cut + len(marker):]

    config_values: Dict[str, str] = {}
    metadata: Dict[str, str] = {}
    state: StateDict = {}
    for line in header:
        if line.startswith("tensor "):
            try:
                _, name, dtype_name, shape_text, offset, nbytes = line.split(" ")
                shape = tuple(int(s) for s in shape_text.split(",") if s)
                start, size = int(offset), int(nbytes)
                dtype = _DTYPES[dtype_name]
            except (ValueError, KeyError):
                raise CheckpointError(f"malformed tensor entry: {line!r}")
            if start + size > len(payload):
                raise CheckpointError(f"{name}: payload truncated")
            array = np.frombuffer(payload[start:start + size], dtype=dtype)
            state[name] = array.reshape(shape).astype(dtype_name)
            continue
        values = parse_lines([line])
        for key, value in values.items():
            if key.startswith("config."):
                config_values[key[len("config."):]] = value
            elif key.startswith("meta."):
                metadata[key[len("meta."):]] = value
            else:
                raise CheckpointError(f"unexpected header line {line!r}")

    try:
        config = NetworkConfig.from_values(config_values)
    except ConfigError as exc:
        raise CheckpointError(f"{path}: {exc}") from exc
    return config, state, metadata


def load_checkpoint(path: Union[str, Path]) -> Tuple[Network, Dict[str, str]]:
    config, state, metadata = read_checkpoint(path)
    network = build(config)
    network.load_state_dict(state)
    network.eval()
    return network, metadata
