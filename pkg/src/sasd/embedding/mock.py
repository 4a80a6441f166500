"""Deterministic, attribute-analytic stand-in for a vision-language model.

Both towers write into the same 16 slots:

====== =====================================================================
slot   meaning
====== =====================================================================
0-7    hue mass: share of patch pixels with saturation > 0.3 in each 45 degree
       hue bin (bin k is centred on hue 45k)
8      foreground fraction f: pixels differing from the water colour by more
       than 30 in some channel
9      blob elongation in [-1, 1], scaled by f; fades to 0 as f goes from
       ``outline_fill`` to 1, since a blob filling the patch shows no outline
10     area decile of the blob, centred to [-1, 1] and scaled by f
11     marking stripe, +1 when a bright unsaturated interior band is present,
       -1 otherwise, scaled by f
12     grey mass: share of unsaturated foreground pixels (a ninth colour bin)
13     fragmentation: share of foreground outside the largest connected
       component, scaled by f
14-15  background energy. Image side: (1 - f) spread evenly. Text side: a
       constant negative prior, so open water scores below 0.5 for any query
====== =====================================================================

Query text is parsed as a bag of vocabulary words (see :mod:`sasd.vocab`).
A colour word puts +1 on its bin and ``-color_contrast`` on the other eight,
so a hull of the wrong colour pulls the cosine down instead of just failing
to add to it. Object words ask for one elongated, unfragmented blob.
"""

from __future__ import annotations

import hashlib
import re
import threading
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from sasd import vocab
from sasd.embedding.base import EmbeddingBackend, EmbeddingVector, TextQuery
from sasd.raster import Raster

DIM = 16
HUE_SLOTS = slice(0, 8)
FG_SLOT, ELONG_SLOT, AREA_SLOT, STRIPE_SLOT, GREY_SLOT, FRAG_SLOT = 8, 9, 10, 11, 12, 13
BG_SLOTS = slice(14, 16)

FOREGROUND_DELTA = 30


@dataclass(frozen=True)
class MockParams:
    """Slot gains and feature cut-offs. Frozen values come from the sweep in
    ``tests/fixtures/mock_sweep.json``; change them only together with it."""

    color_gain: float = 2.0
    color_contrast: float = 0.3
    fg_gain: float = 0.3
    elong_gain: float = 1.2
    area_gain: float = 0.25
    stripe_gain: float = 0.25
    bg_gain: float = 0.05
    bg_prior: float = 1.0
    # product frag_gain * frag_prior is the penalty; a small text-side prior
    # keeps the query norm low
    frag_gain: float = 1.0 / 0.3
    frag_prior: float = 0.3
    outline_fill: float = 0.95
    aspect_low: float = 1.0
    aspect_high: float = 3.0
    area_step: int = 120
    stripe_min_share: float = 0.03
    stripe_min_value: int = 200
    stripe_max_saturation: float = 0.15
    size_targets: tuple = (-1.0, -0.2, 1.0)  # small, medium, large


@dataclass(frozen=True)
class PatchFeatures:
    """Raw measurements before gains are applied."""

    hue_mass: tuple
    fg_fraction: float
    elongation: float
    area_code: float
    striped: bool
    grey_mass: float = 0.0
    fragmentation: float = 0.0


_WORD = re.compile(r"[a-z]+")


def _hue_bins(r: np.ndarray, g: np.ndarray, b: np.ndarray, mx: np.ndarray, delta: np.ndarray):
    """45 degree hue bin (0..7, bin k centred on 45k) of pixels with delta > 0."""
    r, g, b, mx = (x.astype(np.float64) for x in (r, g, b, mx))
    d = delta.astype(np.float64)
    hue = np.where(
        mx == r,
        ((g - b) / d) % 6.0,
        np.where(mx == g, (b - r) / d + 2.0, (r - g) / d + 4.0),
    ) * 60.0
    return (np.floor(((hue + 22.5) % 360.0) / 45.0).astype(np.int64)) % 8


class MockBackend(EmbeddingBackend):
    """Pure and concurrent-safe. ``text_calls``/``image_calls`` count requests."""

    dim = DIM
    concurrent_safe = True

    def __init__(self, params: MockParams | None = None, background=vocab.WATER_RGB):
        self.params = params or MockParams()
        self.background = tuple(int(c) for c in background)
        digest = hashlib.sha256(repr((self.params, self.background)).encode()).hexdigest()[:12]
        self.backend_id = f"mock-v1:{digest}"
        self._lock = threading.Lock()
        self.text_calls = 0
        self.image_calls = 0

    def reset_counts(self):
        with self._lock:
            self.text_calls = 0
            self.image_calls = 0

    # -- image side -------------------------------------------------------

    def features(self, patch: Raster) -> PatchFeatures:
        p = self.params
        rgb = patch.rgb().astype(np.int32)
        h, w = rgb.shape[:2]
        n_pix = h * w
        r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
        mx = np.maximum(np.maximum(r, g), b)
        delta = mx - np.minimum(np.minimum(r, g), b)

        # saturation = delta / max, compared in integers
        saturated = 10 * delta > 3 * mx
        bins = _hue_bins(r[saturated], g[saturated], b[saturated], mx[saturated], delta[saturated])
        counts = np.bincount(bins, minlength=8)
        hue_mass = tuple(float(c) / n_pix for c in counts)

        bg = self.background
        fg = (
            (np.abs(r - bg[0]) > FOREGROUND_DELTA)
            | (np.abs(g - bg[1]) > FOREGROUND_DELTA)
            | (np.abs(b - bg[2]) > FOREGROUND_DELTA)
        )
        n_fg = int(np.count_nonzero(fg))
        f = n_fg / n_pix
        if n_fg == 0:
            return PatchFeatures(hue_mass, 0.0, 0.0, 0.0, False)

        # second moments from projections, plus the 1/12 variance of a unit pixel
        fgf = fg.astype(np.float64)
        xs = np.arange(w, dtype=np.float64)
        ys = np.arange(h, dtype=np.float64)
        col, row = fgf.sum(axis=0), fgf.sum(axis=1)
        mx_, my_ = col @ xs / n_fg, row @ ys / n_fg
        vxx = col @ (xs - mx_) ** 2 / n_fg + 1.0 / 12.0
        vyy = row @ (ys - my_) ** 2 / n_fg + 1.0 / 12.0
        vxy = (ys - my_) @ fgf @ (xs - mx_) / n_fg
        tr, det = vxx + vyy, vxx * vyy - vxy * vxy
        disc = max(0.0, tr * tr / 4.0 - det)
        lam1 = tr / 2.0 + disc ** 0.5
        lam2 = max(tr / 2.0 - disc ** 0.5, 1e-12)
        aspect = (lam1 / lam2) ** 0.5
        span = p.aspect_high - p.aspect_low
        elongation = float(np.clip(2.0 * (aspect - p.aspect_low) / span - 1.0, -1.0, 1.0))

        decile = min(9, n_fg // p.area_step)
        area_code = (decile - 4.5) / 4.5

        bright = fg & (mx >= p.stripe_min_value) & (delta <= p.stripe_max_saturation * mx)
        n_bright = int(np.count_nonzero(bright))
        striped = n_bright >= max(4, p.stripe_min_share * n_fg)
        grey_mass = int(np.count_nonzero(fg & ~saturated)) / n_pix

        labels, n_comp = ndimage.label(fg)
        largest = int(np.bincount(labels.ravel())[1:].max()) if n_comp > 1 else n_fg
        fragmentation = 1.0 - largest / n_fg
        return PatchFeatures(
            hue_mass, f, elongation, area_code, bool(striped), grey_mass, fragmentation
        )

    def image_vector(self, feats: PatchFeatures) -> np.ndarray:
        p = self.params
        f = feats.fg_fraction
        v = np.zeros(DIM)
        v[HUE_SLOTS] = p.color_gain * np.asarray(feats.hue_mass)
        v[FG_SLOT] = p.fg_gain * f
        outline = min(1.0, (1.0 - f) / (1.0 - p.outline_fill))
        v[ELONG_SLOT] = p.elong_gain * f * outline * feats.elongation
        v[AREA_SLOT] = p.area_gain * f * feats.area_code
        v[STRIPE_SLOT] = p.stripe_gain * f * (1.0 if feats.striped else -1.0)
        v[GREY_SLOT] = p.color_gain * feats.grey_mass
        v[FRAG_SLOT] = p.frag_gain * f * feats.fragmentation
        v[BG_SLOTS] = p.bg_gain * (1.0 - f)
        return v

    def _embed_image(self, patch: Raster) -> EmbeddingVector:
        with self._lock:
            self.image_calls += 1
        return EmbeddingVector(self.image_vector(self.features(patch)))

    # -- text side --------------------------------------------------------

    def text_vector(self, text: str) -> np.ndarray:
        p = self.params
        words = set(_WORD.findall(text.lower()))
        v = np.zeros(DIM)
        colors = [i for i, name in enumerate(vocab.COLOR_NAMES) if name in words]
        if colors:
            v[HUE_SLOTS] = -p.color_contrast * p.color_gain
            v[GREY_SLOT] = -p.color_contrast * p.color_gain
            for i in colors:
                v[i] = p.color_gain
        if words & set(vocab.OBJECT_WORDS):
            v[FG_SLOT] = p.fg_gain
            v[ELONG_SLOT] = p.elong_gain
            v[FRAG_SLOT] = -p.frag_prior
        if "elongated" in words:
            v[ELONG_SLOT] = p.elong_gain
        if "compact" in words:
            v[ELONG_SLOT] = -p.elong_gain
        for word, target in zip(vocab.SIZE_WORDS, p.size_targets):
            if word in words:
                v[AREA_SLOT] = p.area_gain * target
        if "striped" in words:
            v[STRIPE_SLOT] = p.stripe_gain
        elif "plain" in words:
            v[STRIPE_SLOT] = -p.stripe_gain
        v[BG_SLOTS] = -p.bg_prior * p.bg_gain
        return v

    def _embed_text(self, query: TextQuery) -> EmbeddingVector:
        with self._lock:
            self.text_calls += 1
        return EmbeddingVector(self.text_vector(query.text))
