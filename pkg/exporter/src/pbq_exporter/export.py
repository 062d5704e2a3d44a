"""Export of a pretrained transformer's linear layers plus calibration data.

One container holds "<layer>.weight" tensors of shape [d_out, d_in] and
"<layer>.acts" tensors of shape [d_in, n] for every linear layer the
calibration forward passes reach. Payloads are float32 to halve the file
size; the consuming side upcasts.
"""

from __future__ import annotations

import json
import os
import sys
import tempfile
from dataclasses import dataclass

import numpy as np
import torch

from .capture import MAX_COLUMNS, ActivationCapture, linear_modules, weight_matrix
from .container import container_bytes

BATCH_SEQUENCES = 8
MAX_SEQUENCE = 64

SAMPLE_TEXT = (
    "The quick brown fox jumps over the lazy dog while seventeen geese "
    "watch from a fence. Numbers such as 3, 14, 159 and 2653 pad the "
    "stream with digits, and a second sentence about rain on a tin roof "
    "adds a few more common words. Calibration only needs a spread of "
    "ordinary tokens, so plain text about nothing in particular will do."
)


@dataclass
class LayerRecord:
    """One exported layer: matrix shape and captured column count."""

    name: str
    d_out: int
    d_in: int
    samples: int


@dataclass
class ExportManifest:
    """What an export produced, mirroring the container contents."""

    model: str
    dtype: str
    layers: list[LayerRecord]

    def to_json(self) -> str:
        return json.dumps(
            {
                "model": self.model,
                "dtype": self.dtype,
                "layers": [vars(record) for record in self.layers],
            }
        )


def load_model(model_id: str) -> torch.nn.Module:
    """Load a causal LM if the checkpoint is one, else a bare model.

    model_id may be a local save_pretrained directory or a hub identifier.
    The model is forced to float32 and eval mode.
    """
    from transformers import AutoModel, AutoModelForCausalLM

    failure: Exception | None = None
    for loader in (AutoModelForCausalLM, AutoModel):
        try:
            model = loader.from_pretrained(model_id)
        except Exception as exc:
            failure = exc
            continue
        return model.float().eval()
    raise RuntimeError(f"cannot load model {model_id!r}: {failure}")


def _try_tokenizer(model_id: str):
    try:
        from transformers import AutoTokenizer

        return AutoTokenizer.from_pretrained(model_id)
    except Exception:
        return None


def _vocab_size(model: torch.nn.Module) -> int:
    embedding = model.get_input_embeddings() if hasattr(model, "get_input_embeddings") else None
    size = getattr(embedding, "num_embeddings", None)
    if not isinstance(size, int) or size < 1:
        raise RuntimeError("model has no token embedding; cannot build calibration input")
    return size


def _sequence_length(model: torch.nn.Module) -> int:
    limit = getattr(getattr(model, "config", None), "max_position_embeddings", None)
    if isinstance(limit, int) and limit > 0:
        return min(MAX_SEQUENCE, limit)
    return MAX_SEQUENCE


def calibration_ids(
    model: torch.nn.Module, model_id: str, rows: int, seq: int, seed: int
) -> torch.Tensor:
    """Token id matrix [rows, seq] for the calibration forward passes.

    When the checkpoint ships a tokenizer, the built-in sample text is
    encoded and cycled, so the ids are real token statistics. Without one,
    seeded uniform ids over the embedding range stand in; for calibration
    the inputs only need to exercise the layers.
    """
    vocab = _vocab_size(model)
    needed = rows * seq
    ids: list[int] | None = None
    tokenizer = _try_tokenizer(model_id)
    if tokenizer is not None:
        try:
            raw = tokenizer.encode(SAMPLE_TEXT)
        except Exception:
            raw = []
        # Drop ids a mismatched tokenizer maps outside the embedding table.
        ids = [int(i) for i in raw if 0 <= int(i) < vocab] or None
    if ids is not None:
        repeats = -(-needed // len(ids))
        flat = np.asarray((ids * repeats)[:needed], dtype=np.int64)
    else:
        rng = np.random.default_rng(seed)
        flat = rng.integers(0, vocab, size=needed, dtype=np.int64)
    return torch.from_numpy(flat.reshape(rows, seq))


def write_atomic(path: str, blob: bytes) -> None:
    """Write via a sibling temp file so failures leave no partial output."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(prefix=".pbtc-", dir=directory)
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(blob)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def export_model(
    model_id: str, samples: int, out_path: str, seed: int = 0
) -> ExportManifest:
    """Dump every reachable linear layer plus calibration activations.

    samples is the column count per layer, capped at MAX_COLUMNS. Layers
    the forward never invokes are omitted with a warning on stderr.
    """
    if samples < 1:
        raise ValueError(f"samples must be positive, got {samples}")
    columns = min(samples, MAX_COLUMNS)
    if columns < samples:
        print(f"capping calibration columns at {MAX_COLUMNS}", file=sys.stderr)

    model = load_model(model_id)
    targets = linear_modules(model)
    if not targets:
        raise RuntimeError(f"model {model_id!r} has no linear layers to export")

    seq = _sequence_length(model)
    rows = -(-columns // seq)
    ids = calibration_ids(model, model_id, rows, seq, seed)
    with ActivationCapture(targets, columns) as capture:
        with torch.no_grad():
            for start in range(0, rows, BATCH_SEQUENCES):
                model(input_ids=ids[start : start + BATCH_SEQUENCES])
                if capture.done():
                    break

        entries: list[tuple[str, np.ndarray]] = []
        records: list[LayerRecord] = []
        for name, module in targets:
            layer = name if name else "layer"
            acts = capture.matrix(name)
            if acts is None:
                print(f"skipping layer {layer!r}: no activations captured", file=sys.stderr)
                continue
            weight = weight_matrix(module)
            if weight.shape[1] != acts.shape[0]:
                print(
                    f"skipping layer {layer!r}: weight is {weight.shape} but its "
                    f"input has {acts.shape[0]} features",
                    file=sys.stderr,
                )
                continue
            if acts.shape[1] < columns:
                print(
                    f"layer {layer!r}: captured {acts.shape[1]} of {columns} columns",
                    file=sys.stderr,
                )
            entries.append((f"{layer}.weight", weight))
            entries.append((f"{layer}.acts", acts))
            records.append(LayerRecord(layer, weight.shape[0], weight.shape[1], acts.shape[1]))

    if not entries:
        raise RuntimeError("no layer produced both a weight matrix and activations")
    write_atomic(out_path, container_bytes(entries))
    return ExportManifest(model=model_id, dtype="f32", layers=records)
