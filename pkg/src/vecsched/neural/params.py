"""Flat parameter vector with a named block registry.

The registry order is fixed and documented by the block list itself; the
federated aggregation step depends on every worker sharing it, so parameter
files embed the registry manifest and its hash, and loading verifies the hash
against the registry the caller expects.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor

_MAGIC = b"VECSCHEDP1\n"


@dataclass(frozen=True)
class BlockSpec:
    name: str
    shape: tuple[int, ...]
    init: str = "xavier"  # "xavier" | "zero"

    @property
    def size(self) -> int:
        n = 1
        for d in self.shape:
            n *= d
        return n


class ParameterRegistry:
    """Ordered named blocks carved out of one flat float64 vector."""

    def __init__(self, blocks: list[BlockSpec]):
        names = [b.name for b in blocks]
        if len(set(names)) != len(names):
            raise ValueError("duplicate block names in registry")
        self.blocks = tuple(blocks)
        self._offsets: dict[str, tuple[int, BlockSpec]] = {}
        offset = 0
        for b in self.blocks:
            self._offsets[b.name] = (offset, b)
            offset += b.size
        self.total_size = offset

    def __contains__(self, name: str) -> bool:
        return name in self._offsets

    def slice(self, name: str) -> slice:
        offset, spec = self._offsets[name]
        return slice(offset, offset + spec.size)

    def shape(self, name: str) -> tuple[int, ...]:
        return self._offsets[name][1].shape

    def view(self, flat: np.ndarray, name: str) -> np.ndarray:
        offset, spec = self._offsets[name]
        return flat[offset : offset + spec.size].reshape(spec.shape)

    def tensors(self, flat: np.ndarray) -> dict[str, Tensor]:
        """Fresh Tensor per block, viewing (not copying) ``flat``."""
        if flat.shape != (self.total_size,):
            raise ValueError(
                f"parameter vector has {flat.shape}, registry expects ({self.total_size},)"
            )
        return {b.name: Tensor(self.view(flat, b.name)) for b in self.blocks}

    def flatten_grads(self, tensors: dict[str, Tensor]) -> np.ndarray:
        grad = np.zeros(self.total_size, dtype=np.float64)
        for b in self.blocks:
            t = tensors[b.name]
            if t.grad is not None:
                grad[self.slice(b.name)] = np.asarray(t.grad).reshape(-1)
        return grad

    def manifest(self) -> dict:
        return {
            "blocks": [
                {"name": b.name, "shape": list(b.shape), "init": b.init}
                for b in self.blocks
            ],
            "total_size": self.total_size,
            "dtype": "<f8",
        }

    def manifest_hash(self) -> str:
        canonical = json.dumps(self.manifest(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def init_params(registry: ParameterRegistry, seed: int) -> np.ndarray:
    """Xavier-uniform weights (scale sqrt(6 / (fan_in + fan_out))), zero
    biases; deterministic per seed, drawn block by block in registry order."""
    rng = np.random.default_rng(seed)
    flat = np.zeros(registry.total_size, dtype=np.float64)
    for b in registry.blocks:
        if b.init == "zero":
            continue
        if len(b.shape) == 2:
            fan_out, fan_in = b.shape
        else:
            fan_out, fan_in = 1, b.shape[0]
        scale = np.sqrt(6.0 / (fan_in + fan_out))
        flat[registry.slice(b.name)] = rng.uniform(-scale, scale, size=b.size)
    return flat


def save_params(
    path, flat: np.ndarray, registry: ParameterRegistry, extra: dict | None = None
) -> None:
    """Binary layout: magic, u64-LE manifest length, manifest JSON, raw
    little-endian float64 block."""
    manifest = registry.manifest()
    manifest["registry_sha256"] = registry.manifest_hash()
    if extra:
        manifest["extra"] = extra
    blob = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(flat, dtype="<f8").tobytes())


def load_params(path, registry: ParameterRegistry) -> tuple[np.ndarray, dict]:
    """Load a parameter file; the embedded manifest hash must match the
    expected registry."""
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise ValueError(f"{path}: not a parameter file")
        (length,) = struct.unpack("<Q", fh.read(8))
        manifest = json.loads(fh.read(length).decode("utf-8"))
        if manifest.get("registry_sha256") != registry.manifest_hash():
            raise ValueError(
                f"{path}: parameter registry mismatch; the file was written for a "
                "different network architecture"
            )
        flat = np.frombuffer(fh.read(), dtype="<f8").astype(np.float64)
    if flat.shape != (registry.total_size,):
        raise ValueError(f"{path}: expected {registry.total_size} parameters, got {flat.size}")
    return flat, manifest.get("extra", {})
