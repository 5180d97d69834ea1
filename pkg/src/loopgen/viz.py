"""Figure rendering: spectrogram images and metric curves.

Colormap, value range, and layout are pinned by STYLE_VERSION so images
stay comparable across runs; bump the version when any of them change.
Curve plots write a JSON sidecar with the exact plotted arrays, so tests
and downstream tools can verify the figures without reading pixels.
"""

import json
from pathlib import Path
from typing import Union

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from . import melpipe
from .errors import InputError, ShapeError

STYLE_VERSION = "1"
COLORMAP = "magma"
VMIN, VMAX = -1.0, 1.0


def save_mel_png(clip, path: Union[str, Path], title: str = ""):
    """Render one clip, mel bins on the vertical axis, time horizontal."""
    if isinstance(clip, melpipe.MelClip):
        values = clip.values
    else:
        values = np.asarray(clip)
    if values.shape != (melpipe.N_MELS, melpipe.N_FRAMES):
        raise ShapeError(
            f"expected ({melpipe.N_MELS}, {melpipe.N_FRAMES}), got {values.shape}"
        )
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6.0, 2.4), dpi=120)
    ax.imshow(
        values,
        origin="lower",
        aspect="auto",
        cmap=COLORMAP,
        vmin=VMIN,
        vmax=VMAX,
        interpolation="nearest",
    )
    ax.set_xlabel("frame")
    ax.set_ylabel("mel bin")
    if title:
        ax.set_title(title, fontsize=9)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def save_metric_curves(runs: list, out_path: Union[str, Path]) -> Path:
    """Overlaid FAD and IS curves against training hours.

    runs: list of (name, records) where records have .seconds, .fad,
    .inception. Writes the figure plus a sidecar JSON holding the exact
    plotted values next to it.
    """
    if not runs:
        raise InputError("need at least one run to plot")
    for name, records in runs:
        if not records:
            raise InputError(f"run {name!r} has no evaluation records")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)

    fig, (ax_fad, ax_is) = plt.subplots(1, 2, figsize=(10, 3.6), dpi=120)
    sidecar = {"style_version": STYLE_VERSION, "runs": []}
    for name, records in runs:
        hours = [r.seconds / 3600.0 for r in records]
        fad_vals = [r.fad for r in records]
        is_vals = [r.inception for r in records]
        ax_fad.plot(hours, fad_vals, marker="o", markersize=3, label=name)
        ax_is.plot(hours, is_vals, marker="o", markersize=3, label=name)
        sidecar["runs"].append(
            {"name": name, "hours": hours, "fad": fad_vals, "is": is_vals}
        )
    ax_fad.set_xlabel("training hours")
    ax_fad.set_ylabel("FAD")
    ax_is.set_xlabel("training hours")
    ax_is.set_ylabel("IS")
    ax_fad.legend(fontsize=8)
    ax_is.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)

    sidecar_path = out_path.with_suffix(out_path.suffix + ".json")
    sidecar_path.write_text(json.dumps(sidecar, indent=2) + "\n")
    return out_path
