"""Capture of the inputs flowing into each linear layer of a torch model.

Calibration needs the exact tensor a linear layer multiplies, so forward
pre-hooks grab the positional input before the layer runs, flatten batch
and sequence dimensions, and keep the result as [d_in, n] column blocks.
"""

from __future__ import annotations

import numpy as np
import torch

MAX_COLUMNS = 4096


def linear_modules(model: torch.nn.Module) -> list[tuple[str, torch.nn.Module]]:
    """Name every linear-weight module in traversal order.

    Covers plain nn.Linear and the transposed "Conv1D" wrapper used by the
    GPT-2 family (matched by class name to avoid depending on its import
    path). Embeddings and normalization layers are not linear maps over
    calibration columns and are skipped.
    """
    found: list[tuple[str, torch.nn.Module]] = []
    for name, module in model.named_modules():
        if isinstance(module, torch.nn.Linear):
            found.append((name, module))
        elif type(module).__name__ == "Conv1D":
            weight = getattr(module, "weight", None)
            if isinstance(weight, torch.Tensor) and weight.ndim == 2:
                found.append((name, module))
    return found


def weight_matrix(module: torch.nn.Module) -> np.ndarray:
    """Weight as a [d_out, d_in] float32 array.

    nn.Linear already stores that orientation; Conv1D stores [d_in, d_out]
    and is transposed.
    """
    weight = module.weight.detach().to(torch.float32)
    if not isinstance(module, torch.nn.Linear):
        weight = weight.t()
    return np.ascontiguousarray(weight.numpy())


class ActivationCapture:
    """Accumulates per-layer input columns up to a fixed count.

    Hooks stay registered until close(); use as a context manager around
    the calibration forward passes. Layers the forward never reaches keep
    an empty block list and matrix() returns None for them.
    """

    def __init__(self, targets: list[tuple[str, torch.nn.Module]], columns: int):
        if columns < 1:
            raise ValueError(f"columns must be positive, got {columns}")
        self.columns = columns
        self.blocks: dict[str, list[np.ndarray]] = {name: [] for name, _ in targets}
        self.counts: dict[str, int] = {name: 0 for name, _ in targets}
        self._handles = [
            module.register_forward_pre_hook(self._grabber(name)) for name, module in targets
        ]

    def _grabber(self, name: str):
        def grab(module: torch.nn.Module, args: tuple) -> None:
            if self.counts[name] >= self.columns or not args:
                return
            x = args[0]
            if not isinstance(x, torch.Tensor) or x.ndim < 1:
                return
            cols = x.detach().to(torch.float32).reshape(-1, x.shape[-1])
            take = min(cols.shape[0], self.columns - self.counts[name])
            block = cols[:take].t()
            self.blocks[name].append(np.ascontiguousarray(block.numpy()))
            self.counts[name] += take

        return grab

    def close(self) -> None:
        for handle in self._handles:
            handle.remove()
        self._handles = []

    def __enter__(self) -> "ActivationCapture":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def done(self) -> bool:
        """True once every hooked layer has reached the column target."""
        return all(count >= self.columns for count in self.counts.values())

    def matrix(self, name: str) -> np.ndarray | None:
        """Captured columns for one layer as [d_in, n], or None if unseen."""
        blocks = self.blocks[name]
        if not blocks:
            return None
        if len(blocks) == 1:
            return blocks[0]
        return np.concatenate(blocks, axis=1)
