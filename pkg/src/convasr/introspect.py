"""Weight introspection: per-layer histograms, checkpoint diffs, filter export.

Histograms report raw fractions per bin (they sum to 1); applying a log10
scale is left to plotting. Diffs compare two parameter sets layer by layer
as elementwise |a - b|; when the two class heads differ in size (an extended
alphabet) the head is skipped and flagged instead of raising.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass

import numpy as np

DEFAULT_BIN_WIDTH = 0.2


def _layer_values(params, layer: int) -> np.ndarray:
    return np.concatenate(
        [params.weights[layer].ravel(), params.biases[layer].ravel()]
    ).astype(np.float64)


def default_edges(values: np.ndarray, width: float = DEFAULT_BIN_WIDTH) -> np.ndarray:
    """Bin edges at a fixed spacing covering the observed range."""
    lo = np.floor(values.min() / width) * width
    hi = np.ceil(values.max() / width) * width
    if hi <= lo:
        hi = lo + width
    n = int(round((hi - lo) / width))
    return lo + width * np.arange(n + 1)


def weight_histogram(params, layer: int, bin_edges=None):
    """Fractions of a layer's weights (and biases) per bin.

    Out-of-range values are clamped into the end bins so fractions always
    sum to 1. Returns (edges, fractions).
    """
    values = _layer_values(params, layer)
    if bin_edges is None:
        bin_edges = default_edges(values)
    edges = np.asarray(bin_edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("bin_edges must be strictly increasing with >= 2 entries")
    clamped = np.clip(values, edges[0], edges[-1])
    counts, _ = np.histogram(clamped, bins=edges)
    return edges, counts / values.size


@dataclass(frozen=True)
class LayerDiff:
    layer: int
    edges: np.ndarray | None
    fractions: np.ndarray | None
    max_abs: float
    mean_abs: float
    skipped: bool = False


def weight_diff(params_a, params_b, bin_edges=None) -> list[LayerDiff]:
    """Per-layer statistics of |a - b|.

    The final layer is excluded (flagged, not compared) when the two heads
    have different class counts; any other shape mismatch raises.
    """
    n = params_a.config.num_layers
    if params_b.config.num_layers != n:
        raise ValueError("models have different layer counts")
    out = []
    for i in range(n):
        wa, wb = params_a.weights[i], params_b.weights[i]
        if wa.shape != wb.shape:
            if i == n - 1 and wa.shape[1:] == wb.shape[1:]:
                out.append(LayerDiff(i, None, None, float("nan"), float("nan"), True))
                continue
            raise ValueError(f"layer {i + 1} shapes differ: {wa.shape} vs {wb.shape}")
        delta = np.abs(
            np.concatenate([(wa - wb).ravel(), (params_a.biases[i] - params_b.biases[i]).ravel()])
        ).astype(np.float64)
        edges = np.asarray(
            bin_edges if bin_edges is not None
            else np.linspace(0.0, max(delta.max(), 1e-12), 21)
        )
        clamped = np.clip(delta, edges[0], edges[-1])
        counts, _ = np.histogram(clamped, bins=edges)
        out.append(LayerDiff(
            i, edges, counts / delta.size, float(delta.max()), float(delta.mean())
        ))
    return out


def export_filters(params, layer: int, other=None) -> np.ndarray:
    """Filter grids for a layer: [out_channels, kernel_width, in_channels].

    With a second parameter set, returns the elementwise difference grids
    instead (shapes must match).
    """
    w = params.weights[layer]
    if other is not None:
        w2 = other.weights[layer]
        if w2.shape != w.shape:
            raise ValueError("filter shapes differ between the two models")
        w = w - w2
    # [out, in, kw] -> [out, kw, in]
    return np.transpose(w, (0, 2, 1)).copy()


def filters_to_json(grids: np.ndarray, path, layer: int):
    obj = {
        "layer": layer,
        "out_channels": grids.shape[0],
        "kernel_width": grids.shape[1],
        "in_channels": grids.shape[2],
        "filters": grids.astype(np.float64).tolist(),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh)


def filters_from_json(path) -> np.ndarray:
    with open(path, encoding="utf-8") as fh:
        obj = json.load(fh)
    return np.asarray(obj["filters"], dtype=np.float64)


def filters_to_csv(grids: np.ndarray, path, layer: int):
    """Columns: layer, out_channel, tap (kernel position), then one value per
    input channel, formatted to survive a float32 round trip."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["layer", "out_channel", "tap"]
            + [f"in_{c}" for c in range(grids.shape[2])]
        )
        for o in range(grids.shape[0]):
            for t in range(grids.shape[1]):
                writer.writerow(
                    [layer, o, t] + [f"{v:.9g}" for v in grids[o, t]]
                )


def filters_from_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], rows[1:]
    n_in = len(header) - 3
    n_out = max(int(r[1]) for r in data) + 1
    kw = max(int(r[2]) for r in data) + 1
    grids = np.zeros((n_out, kw, n_in))
    for r in data:
        grids[int(r[1]), int(r[2])] = [float(v) for v in r[3:]]
    return grids


def histogram_to_csv(rows, path):
    """rows: iterable of (layer, edges, fractions) triples."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["layer", "bin_lo", "bin_hi", "fraction"])
        for layer, edges, fractions in rows:
            for lo, hi, frac in zip(edges[:-1], edges[1:], fractions):
                writer.writerow([layer, f"{lo:.9g}", f"{hi:.9g}", f"{frac:.12g}"])
