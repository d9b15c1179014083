"""Ternary per-pixel scribble annotations."""

from __future__ import annotations

import numpy as np

UNLABELED = 0
BG = 1
FG = 2

_PNG_CODES = {UNLABELED: 0, BG: 128, FG: 255}


class ScribbleMask:
    """Per-pixel labels in {foreground, background, unlabeled}."""

    def __init__(self, labels: np.ndarray):
        labels = np.asarray(labels)
        if labels.ndim != 2:
            raise ValueError(f"labels must be (H, W), got shape {labels.shape}")
        if not np.isin(labels, (UNLABELED, BG, FG)).all():
            raise ValueError("labels must be UNLABELED, BG, or FG")
        self.labels = labels.astype(np.uint8)

    @classmethod
    def from_regions(cls, fg: np.ndarray, bg: np.ndarray) -> "ScribbleMask":
        fg = np.asarray(fg, dtype=bool)
        bg = np.asarray(bg, dtype=bool)
        if (fg & bg).any():
            raise ValueError("foreground and background scribbles overlap")
        labels = np.zeros(fg.shape, dtype=np.uint8)
        labels[bg] = BG
        labels[fg] = FG
        return cls(labels)

    @property
    def shape(self):
        return self.labels.shape

    @property
    def fg(self) -> np.ndarray:
        return self.labels == FG

    @property
    def bg(self) -> np.ndarray:
        return self.labels == BG

    @property
    def labeled(self) -> np.ndarray:
        return self.labels != UNLABELED

    @property
    def unlabeled(self) -> np.ndarray:
        return self.labels == UNLABELED

    def to_png_array(self) -> np.ndarray:
        """Grayscale encoding: 0 unlabeled, 128 background, 255 foreground."""
        out = np.zeros(self.labels.shape, dtype=np.uint8)
        out[self.bg] = _PNG_CODES[BG]
        out[self.fg] = _PNG_CODES[FG]
        return out

    @classmethod
    def from_png_array(cls, arr: np.ndarray) -> "ScribbleMask":
        arr = np.asarray(arr)
        labels = np.zeros(arr.shape, dtype=np.uint8)
        labels[arr == _PNG_CODES[BG]] = BG
        labels[arr == _PNG_CODES[FG]] = FG
        return cls(labels)
