"""Procedural stroke glyphs for lowercase letters and digits.

Each glyph is a list of polylines in a unit box: x in [0, 1] across the
advance, y in [0, 1] down the 32 px line height. Confusable pairs are built
from shared stroke pieces (h = tall stem + n-arch, b = tall stem + bowl,
e = c + bar, i/l share a stem) so that visually driven errors look like the
ones a recognizer makes on real text.
"""

from __future__ import annotations

import numpy as np

ASC, XH, BASE, DESC = 0.18, 0.42, 0.76, 0.93
MID = (XH + BASE) / 2
L, R = 0.22, 0.78  # stem positions


def _arc(cx, cy, rx, ry, a0, a1, n=10):
    t = np.radians(np.linspace(a0, a1, n))
    return np.stack([cx + rx * np.cos(t), cy - ry * np.sin(t)], axis=1)


def _line(*pts):
    return np.asarray(pts, dtype=float)


def _bowl(cx=0.5):
    return _arc(cx, MID, 0.28, (BASE - XH) / 2, 0, 360, 16)


def _arch(x0=L, x1=R):
    r = (x1 - x0) / 2
    top = _arc(x0 + r, XH + 0.09, r, 0.09, 180, 0, 8)
    return np.concatenate([top, [[x1, BASE]]])


_C_ARC = _arc(0.52, MID, 0.28, (BASE - XH) / 2, 50, 310, 12)

GLYPHS: dict[str, list[np.ndarray]] = {
    "a": [_bowl(0.48), _line((R, XH), (R, BASE))],
    "b": [_line((L, ASC), (L, BASE)), _bowl(0.5)],
    "c": [_C_ARC],
    "d": [_bowl(0.48), _line((R, ASC), (R, BASE))],
    "e": [_C_ARC, _line((0.24, MID), (0.8, MID))],
    "f": [np.concatenate([_arc(0.55, ASC + 0.07, 0.17, 0.07, 20, 180, 6), [[0.38, BASE]]]),
          _line((0.2, XH), (0.66, XH))],
    "g": [_bowl(0.48), np.concatenate([_line((R, XH), (R, 0.86)),
                                      _arc(0.5, 0.86, 0.28, 0.07, 0, -160, 6)])],
    "h": [_line((L, ASC), (L, BASE)), _arch()],
    "i": [_line((0.5, XH), (0.5, BASE)), _line((0.5, 0.28), (0.5, 0.31))],
    "j": [np.concatenate([_line((0.55, XH), (0.55, 0.86)), _arc(0.38, 0.86, 0.17, 0.07, 0, -160, 6)]),
          _line((0.55, 0.28), (0.55, 0.31))],
    "k": [_line((L, ASC), (L, BASE)), _line((0.74, XH), (L, 0.62), (0.78, BASE))],
    "l": [_line((0.5, ASC), (0.5, BASE))],
    "m": [_line((0.14, XH), (0.14, BASE)), _arch(0.14, 0.5), _arch(0.5, 0.86)],
    "n": [_line((L, XH), (L, BASE)), _arch()],
    "o": [_bowl()],
    "p": [_line((L, XH), (L, DESC)), _bowl(0.5)],
    "q": [_bowl(0.48), _line((R, XH), (R, DESC))],
    "r": [_line((L, XH), (L, BASE)), _arc(0.46, XH + 0.09, 0.24, 0.09, 180, 45, 6)],
    "s": [np.concatenate([_arc(0.5, XH + 0.08, 0.24, 0.08, 20, 270, 7),
                          _arc(0.5, BASE - 0.09, 0.26, 0.09, 90, -160, 7)])],
    "t": [_line((0.42, 0.27), (0.42, BASE - 0.05), (0.62, BASE)), _line((0.2, XH), (0.7, XH))],
    "u": [np.concatenate([[[L, XH]], _arc(0.5, BASE - 0.09, 0.28, 0.09, 180, 360, 8)]),
          _line((R, XH), (R, BASE))],
    "v": [_line((0.18, XH), (0.5, BASE), (0.82, XH))],
    "w": [_line((0.1, XH), (0.3, BASE), (0.5, XH + 0.06), (0.7, BASE), (0.9, XH))],
    "x": [_line((0.2, XH), (0.8, BASE)), _line((0.8, XH), (0.2, BASE))],
    "y": [_line((0.18, XH), (0.5, BASE)), _line((0.82, XH), (0.3, DESC))],
    "z": [_line((0.2, XH), (0.8, XH), (0.2, BASE), (0.8, BASE))],
    "0": [_arc(0.5, (ASC + BASE) / 2, 0.28, (BASE - ASC) / 2, 0, 360, 16)],
    "1": [_line((0.32, 0.3), (0.52, ASC), (0.52, BASE))],
    "2": [np.concatenate([_arc(0.5, 0.32, 0.25, 0.13, 160, -40, 7), [[0.22, BASE], [0.8, BASE]]])],
    "3": [np.concatenate([_arc(0.5, 0.32, 0.24, 0.13, 160, -90, 7), _arc(0.5, 0.62, 0.26, 0.15, 90, -160, 7)])],
    "4": [_line((0.66, BASE), (0.66, ASC), (0.18, 0.6), (0.84, 0.6))],
    "5": [np.concatenate([_line((0.76, ASC), (0.3, ASC), (0.28, 0.44)), _arc(0.5, 0.6, 0.26, 0.16, 120, -150, 8)])],
    "6": [np.concatenate([_arc(0.6, 0.4, 0.3, 0.22, 80, 180, 5), _arc(0.5, 0.6, 0.26, 0.16, 180, -180, 12)])],
    "7": [_line((0.2, ASC), (0.8, ASC), (0.4, BASE))],
    "8": [_arc(0.5, 0.32, 0.22, 0.13, 0, 360, 12), _arc(0.5, 0.62, 0.26, 0.15, 0, 360, 12)],
    "9": [np.concatenate([_arc(0.5, 0.34, 0.26, 0.16, 0, 360, 12), _line((0.76, 0.34), (0.7, BASE))])],
}

# Substitutions that the glyph shapes make likely; weights are relative.
DEFAULT_CONFUSIONS: dict[str, dict[str, float]] = {
    "h": {"n": 2.0, "b": 1.0, "k": 0.5},
    "n": {"h": 1.0, "m": 0.5, "r": 1.0, "u": 0.5},
    "b": {"h": 1.0, "o": 0.5, "p": 0.5},
    "c": {"e": 2.0, "o": 0.5},
    "e": {"c": 2.0},
    "o": {"a": 0.5, "c": 0.5, "b": 0.3},
    "i": {"l": 2.0, "j": 0.3},
    "l": {"i": 2.0, "t": 0.5},
    "a": {"d": 1.0, "o": 0.5, "q": 0.5},
    "d": {"a": 1.0, "b": 0.3},
    "m": {"n": 1.0},
    "r": {"n": 1.0},
    "u": {"n": 0.5, "v": 0.5},
    "p": {"q": 0.5, "b": 0.5},
    "q": {"g": 1.0, "p": 0.5},
    "g": {"q": 1.0},
    "v": {"y": 0.5, "u": 0.5},
    "t": {"l": 0.5, "f": 0.5},
}


def glyph_segments(char: str) -> np.ndarray:
    """All stroke segments of a glyph as an array of shape (S, 2, 2)."""
    segs = []
    for poly in GLYPHS[char]:
        segs.append(np.stack([poly[:-1], poly[1:]], axis=1))
    return np.concatenate(segs, axis=0)
