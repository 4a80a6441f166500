"""Seeded synthetic harbour scenes with ground-truthed ships.

Rendering is integer-only: hull masks are built with integer inequalities on
doubled pixel-centre coordinates, diagonal headings use a fixed-point
rotation, and the water texture is integer value noise. The same
:class:`SceneSpec` therefore produces the same bytes on every platform.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from sasd import vocab
from sasd.embedding.base import TextQuery
from sasd.errors import PlacementError
from sasd.evaluation import TaskCase, write_manifest
from sasd.raster import BBox, Raster, write_png

MIN_LENGTH = 12
MIN_BEAM = 8
MAX_SEED = 2**64
PLACEMENT_TRIES = 400

# cos(45 deg) in 8-bit fixed point
_COS45 = 181
_FIX = 256

HULL, STRIPE = 1, 2


@dataclass(frozen=True)
class SpriteSpec:
    color: str
    length: int
    aspect: float = 3.0
    striped: bool = False
    heading: int = 0

    def __post_init__(self):
        if self.color not in vocab.COLOR_RGB:
            raise ValueError(f"unknown colour {self.color!r}; expected one of {vocab.COLOR_NAMES}")
        if int(self.length) != self.length or self.length < MIN_LENGTH:
            raise ValueError(f"sprite length must be an integer >= {MIN_LENGTH}, got {self.length}")
        if self.aspect < 1:
            raise ValueError(f"aspect must be >= 1, got {self.aspect}")
        if self.beam < MIN_BEAM:
            raise ValueError(
                f"beam {self.beam} px (length {self.length} / aspect {self.aspect}) is below {MIN_BEAM}"
            )
        if self.heading % 45:
            raise ValueError(f"heading must be a multiple of 45 degrees, got {self.heading}")

    @property
    def beam(self) -> int:
        return int(round(self.length / self.aspect))

    @property
    def size_word(self) -> str:
        return vocab.size_word(self.length)

    def to_dict(self) -> dict:
        return {
            "color": self.color,
            "length": self.length,
            "aspect": self.aspect,
            "striped": self.striped,
            "heading": self.heading,
        }


@dataclass(frozen=True)
class SceneSpec:
    """``sprites`` pairs each sprite with a placement box or ``None`` (auto).

    An explicit box is the region the sprite is centred in. Auto placement
    keeps every pair of sprites at least ``min_gap`` pixels apart.
    """

    width: int
    height: int
    seed: int
    sprites: tuple = ()
    min_gap: int = 16
    base_color: tuple = vocab.WATER_RGB
    docks: int = 0
    dock_gap: int = 48

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError("scene must be at least 8x8")
        if self.min_gap < 0:
            raise ValueError("min_gap must be non-negative")
        if not 0 <= int(self.seed) < MAX_SEED:
            raise ValueError("seed must be a 64-bit unsigned integer")
        items = []
        for item in self.sprites:
            if isinstance(item, SpriteSpec):
                items.append((item, None))
            else:
                sprite, placement = item
                items.append((sprite, placement))
        object.__setattr__(self, "sprites", tuple(items))


def caption_of(s: SpriteSpec) -> TextQuery:
    marking = "striped" if s.striped else "plain"
    return TextQuery(f"a {s.size_word} {s.color} {marking} ship")


def box_gap(a: BBox, b: BBox) -> int:
    """Chebyshev gap between boxes; negative when they overlap."""
    return max(b.x_min - a.x_max, a.x_min - b.x_max, b.y_min - a.y_max, a.y_min - b.y_max)


# -- sprite rasterisation -------------------------------------------------

def _hull_labels(length: int, beam: int) -> np.ndarray:
    """Label image (beam rows x length cols) of a hull with the bow at +x."""
    bow = max(2, min(beam // 2, length // 3))
    radius = beam // 4
    px = 2 * np.arange(length, dtype=np.int64)[None, :] + 1
    py = 2 * np.arange(beam, dtype=np.int64)[:, None] + 1
    body_end = 2 * (length - bow)

    inside = np.ones((beam, length), dtype=bool)
    # rounded stern corners
    if radius > 0:
        r2 = 2 * radius
        for cy, in_corner in ((r2, py < r2), (2 * beam - r2, py > 2 * beam - r2)):
            outside = (px - r2) ** 2 + (py - cy) ** 2 > r2 * r2
            inside &= ~((px < r2) & in_corner & outside)
    # bow triangle tapering to the tip
    bow_zone = px >= body_end
    taper_ok = np.abs(py - beam) * 2 * bow <= beam * (2 * length - px)
    inside &= ~bow_zone | taper_ok

    return _trim(inside.astype(np.uint8) * HULL)


def _trim(labels: np.ndarray) -> np.ndarray:
    rows = np.nonzero(labels.any(axis=1))[0]
    cols = np.nonzero(labels.any(axis=0))[0]
    return labels[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1]


def _stripe_columns(length: int, beam: int) -> tuple[int, int]:
    bow = max(2, min(beam // 2, length // 3))
    width = max(2, length // 8)
    mid = (length - bow) // 2
    start = mid - width // 2
    return start, start + width


def _rotate45(labels: np.ndarray) -> np.ndarray:
    """Rotate a label image 45 degrees counter-clockwise (nearest neighbour)."""
    h, w = labels.shape
    side = (h + w) * _COS45 // _FIX + 3
    ys, xs = np.mgrid[0:side, 0:side].astype(np.int64)
    # doubled coordinates relative to the canvas centre
    tx = 2 * xs + 1 - side
    ty = 2 * ys + 1 - side
    # inverse rotation (clockwise) back into the source frame
    sx2 = (tx * _COS45 + ty * _COS45)
    sy2 = (-tx * _COS45 + ty * _COS45)
    sx = (sx2 + w * _FIX) // (2 * _FIX)
    sy = (sy2 + h * _FIX) // (2 * _FIX)
    valid = (sx >= 0) & (sx < w) & (sy >= 0) & (sy < h)
    out = np.zeros((side, side), dtype=labels.dtype)
    out[valid] = labels[sy[valid], sx[valid]]
    return _trim(out)


def sprite_labels(s: SpriteSpec) -> np.ndarray:
    """Tight label image of a sprite: 0 water, 1 hull, 2 stripe."""
    labels = _hull_labels(s.length, s.beam)
    if s.striped:
        c0, c1 = _stripe_columns(s.length, s.beam)
        band = labels[:, c0:c1]
        band[band == HULL] = STRIPE
    heading = s.heading % 360
    if heading % 90:
        labels = _rotate45(labels)
        heading -= 45
    return np.ascontiguousarray(np.rot90(labels, k=heading // 90))


# -- background -----------------------------------------------------------

def _water(width: int, height: int, base, rng: np.random.Generator) -> np.ndarray:
    cell = 16
    gh, gw = height // cell + 2, width // cell + 2
    coarse = rng.integers(-9, 10, size=(gh, gw), dtype=np.int64)
    y = np.arange(height, dtype=np.int64)[:, None]
    x = np.arange(width, dtype=np.int64)[None, :]
    gy, fy = y // cell, y % cell
    gx, fx = x // cell, x % cell
    acc = (
        coarse[gy, gx] * (cell - fx) * (cell - fy)
        + coarse[gy, gx + 1] * fx * (cell - fy)
        + coarse[gy + 1, gx] * (cell - fx) * fy
        + coarse[gy + 1, gx + 1] * fx * fy
    )
    smooth = acc // (cell * cell)
    fine = rng.integers(-2, 3, size=(height, width), dtype=np.int64)
    noise = smooth + fine
    img = np.asarray(base, dtype=np.int64)[None, None, :] + noise[:, :, None]
    return np.clip(img, 0, 255).astype(np.uint8)


# -- placement ------------------------------------------------------------

def _fits(box: BBox, others, gap: int) -> bool:
    return all(box_gap(box, o) >= gap for o in others)


def _auto_place(fw, fh, width, height, taken, gap, rng) -> BBox:
    if fw > width or fh > height:
        raise PlacementError()
    for _ in range(PLACEMENT_TRIES):
        x = int(rng.integers(0, width - fw + 1))
        y = int(rng.integers(0, height - fh + 1))
        box = BBox(x, y, x + fw, y + fh)
        if _fits(box, taken, gap):
            return box
    raise PlacementError()


def gen_scene(spec: SceneSpec) -> tuple[Raster, list[tuple[BBox, SpriteSpec]]]:
    """Render ``spec``; returns the image and tight ground-truth boxes."""
    rng = np.random.default_rng(int(spec.seed))
    img = _water(spec.width, spec.height, spec.base_color, rng)

    footprints = [sprite_labels(s) for s, _ in spec.sprites]
    placed: list[BBox] = []
    for (sprite, placement), labels in zip(spec.sprites, footprints):
        fh, fw = labels.shape
        if placement is None:
            box = _auto_place(fw, fh, spec.width, spec.height, placed, spec.min_gap, rng)
        else:
            if fw > placement.width or fh > placement.height:
                raise PlacementError(
                    f"placement infeasible: sprite {fw}x{fh} does not fit box {placement.to_list()}"
                )
            x = placement.x_min + (placement.width - fw) // 2
            y = placement.y_min + (placement.height - fh) // 2
            box = BBox(x, y, x + fw, y + fh)
            if box.clip(spec.width, spec.height) != box:
                raise PlacementError(f"placement infeasible: box {box.to_list()} leaves the image")
        placed.append(box)

    for _ in range(spec.docks):
        long_side = int(rng.integers(24, 49))
        short_side = int(rng.integers(24, 41))
        horizontal = bool(rng.integers(0, 2))
        dw, dh = (long_side, short_side) if horizontal else (short_side, long_side)
        try:
            dock = _auto_place(dw, dh, spec.width, spec.height, placed, spec.dock_gap, rng)
        except PlacementError:
            # clutter is best effort; ships are not
            continue
        img[dock.y_min:dock.y_max, dock.x_min:dock.x_max] = vocab.DOCK_RGB

    gt = []
    for (sprite, _), labels, box in zip(spec.sprites, footprints, placed):
        region = img[box.y_min:box.y_max, box.x_min:box.x_max]
        region[labels == HULL] = vocab.COLOR_RGB[sprite.color]
        region[labels == STRIPE] = vocab.STRIPE_RGB
        gt.append((box, sprite))
    return Raster(img), gt


# -- suites ---------------------------------------------------------------

SUITE_SIZE = 512
SUITE_ASPECTS = (3.0, 3.5, 4.0)
SUITE_LENGTHS = (36, 56)  # inclusive
SUITE_MIN_BEAM = 10
HEADINGS = tuple(range(0, 360, 45))
# C-suite gaps: wide cases first, then sub-stride adjacency
WIDE_GAPS = (64, 96)
ADJACENT_GAPS = (4, 28)
C_LENGTHS = (36, 44)


def _pick(rng, seq):
    return seq[int(rng.integers(len(seq)))]


def _suite_sprite(rng, color=None, headings=HEADINGS, lengths=SUITE_LENGTHS) -> SpriteSpec:
    while True:
        length = int(rng.integers(lengths[0], lengths[1] + 1))
        aspect = float(_pick(rng, SUITE_ASPECTS))
        if round(length / aspect) >= SUITE_MIN_BEAM:
            break
    return SpriteSpec(
        color=color or _pick(rng, vocab.COLOR_NAMES),
        length=length,
        aspect=aspect,
        striped=bool(rng.integers(2)),
        heading=int(_pick(rng, headings)),
    )


def _other_color(rng, color: str) -> str:
    return _pick(rng, [c for c in vocab.COLOR_NAMES if c != color])


def _case_a(rng, size):
    first = _suite_sprite(rng)
    sprites = [first]
    if rng.random() < 0.4:
        sprites.append(_suite_sprite(rng, color=first.color))
    spec = SceneSpec(size, size, int(rng.integers(MAX_SEED, dtype=np.uint64)), tuple(sprites), min_gap=80, docks=4)
    image, gt = gen_scene(spec)
    query = caption_of(first) if len(sprites) == 1 else TextQuery(f"a {first.color} ship")
    return spec, image, query, [(box, True) for box, _ in gt]


def _case_b(rng, size):
    target = _suite_sprite(rng)
    distractors = [
        SpriteSpec(
            _other_color(rng, target.color), target.length, target.aspect, target.striped,
            int(_pick(rng, HEADINGS)),
        )
        for _ in range(2)
    ]
    spec = SceneSpec(
        size, size, int(rng.integers(MAX_SEED, dtype=np.uint64)), (target, *distractors), min_gap=48, docks=2
    )
    image, gt = gen_scene(spec)
    marks = [True] + [False] * len(distractors)
    return spec, image, caption_of(target), [(box, m) for (box, _), m in zip(gt, marks)]


def tandem_boxes(length: int, beam: int, gap: int, x: int, y: int, vertical: bool):
    """Placement boxes for two hulls bow to stern, ``gap`` pixels apart."""
    a = BBox(x, y, x + length, y + beam)
    b = BBox(x + length + gap, y, x + 2 * length + gap, y + beam)
    if vertical:
        a = BBox(a.y_min, a.x_min, a.y_max, a.x_max)
        b = BBox(b.y_min, b.x_min, b.y_max, b.x_max)
    return a, b


def _case_c(rng, size, gap):
    vertical = bool(rng.integers(2))
    heading = 90 if vertical else 0
    pair = _suite_sprite(rng, headings=(heading,), lengths=C_LENGTHS)
    margin = 24
    span = 2 * pair.length + gap
    along = int(rng.integers(margin, size - margin - span + 1))
    across = int(rng.integers(margin, size - margin - pair.beam + 1))
    a, b = tandem_boxes(pair.length, pair.beam, gap, along, across, vertical)
    distractor = SpriteSpec(
        _other_color(rng, pair.color), pair.length, pair.aspect, pair.striped,
        int(_pick(rng, HEADINGS)),
    )
    spec = SceneSpec(
        size, size, int(rng.integers(MAX_SEED, dtype=np.uint64)),
        ((pair, a), (pair, b), (distractor, None)), min_gap=64,
    )
    image, gt = gen_scene(spec)
    marks = (True, True, False)
    return spec, image, TextQuery(f"a {pair.color} ship"), [
        (box, m) for (box, _), m in zip(gt, marks)
    ]


def c_suite_gaps(n_cases: int, rng) -> list[int]:
    """Gap per C case: the first fifth wide, the rest below the default
    64-px scan stride of 32."""
    n_wide = max(1, n_cases // 5) if n_cases > 1 else 0
    gaps = [int(rng.integers(WIDE_GAPS[0], WIDE_GAPS[1] + 1)) for _ in range(n_wide)]
    gaps += [
        int(rng.integers(ADJACENT_GAPS[0], ADJACENT_GAPS[1] + 1)) for _ in range(n_cases - n_wide)
    ]
    return gaps


@dataclass
class SuiteCase:
    task_kind: str
    image_ref: str
    query: TextQuery
    ground_truth: list
    image: Raster
    scene: SceneSpec
    gap: int | None = None


def gen_suite(kind: str, n_cases: int, seed: int, out_dir=None, size: int = SUITE_SIZE) -> list[SuiteCase]:
    """Generate ``n_cases`` scenes of one task kind.

    Each case draws from its own child of ``np.random.SeedSequence(seed)``,
    so case i does not depend on how many cases follow it. With ``out_dir``
    the suite is written as ``suite.jsonl`` plus ``images/case_###.png``.
    """
    if kind not in ("A", "B", "C"):
        raise ValueError(f"kind must be A, B or C, got {kind!r}")
    if n_cases < 1:
        raise ValueError("n_cases must be >= 1")
    root = np.random.SeedSequence(int(seed))
    gap_rng = np.random.default_rng(root.spawn(1)[0]) if kind == "C" else None
    children = root.spawn(n_cases)
    gaps = c_suite_gaps(n_cases, gap_rng) if kind == "C" else [None] * n_cases

    cases = []
    for i, (child, gap) in enumerate(zip(children, gaps)):
        rng = np.random.default_rng(child)
        if kind == "A":
            spec, image, query, gt = _case_a(rng, size)
        elif kind == "B":
            spec, image, query, gt = _case_b(rng, size)
        else:
            spec, image, query, gt = _case_c(rng, size, gap)
        cases.append(SuiteCase(kind, f"images/case_{i:03d}.png", query, gt, image, spec, gap))

    if out_dir is not None:
        write_suite(cases, out_dir)
    return cases


def write_suite(cases: list[SuiteCase], out_dir) -> Path:
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    for c in cases:
        write_png(c.image, out / c.image_ref)
    manifest = out / "suite.jsonl"
    write_manifest(
        [TaskCase(c.task_kind, c.image_ref, c.query, c.ground_truth) for c in cases], manifest
    )
    return manifest
