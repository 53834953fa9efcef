"""Constructive shape programs: tokens, validation, execution, rasterization.

A program is a fixed-length postfix token sequence over a vocabulary of
parameterized primitives (circle / triangle / square at a grid of centers
and scales) plus three binary operations (union, intersect, subtract). A
valid program leaves exactly one image on the stack; executing it yields a
square binary bitmap.

Rasterization rules (all integer arithmetic, canvas-clipped):
  circle(cx, cy, s):   (px-cx)^2 + (py-cy)^2 <= s^2
  square(cx, cy, s):   |px-cx| <= s and |py-cy| <= s
  triangle(cx, cy, s): filled, apex up, vertices (cx, cy-s), (cx-s, cy+s),
                       (cx+s, cy+s), inclusive edges via half-plane tests
Subtract keeps the earlier-pushed operand: [..., a, b, subtract] -> a AND NOT b.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SHAPE_KINDS = ("circle", "triangle", "square")
OP_KINDS = ("union", "intersect", "subtract")

# 132 variants per shape kind: 396 shapes + 3 operations = 399 tokens.
DEFAULT_GRID = {
    8: tuple(range(8, 57, 8)),
    12: tuple(range(8, 57, 8)),
    16: tuple(range(16, 49, 8)),
    24: (24, 32, 40),
}

# 27 shapes + 3 operations = 30 tokens; quick desk-scale experiments.
REDUCED_GRID = {12: (16, 32, 48)}


class InvalidProgramError(ValueError):
    pass


@dataclass(frozen=True)
class ShapeToken:
    kind: str
    cx: int
    cy: int
    scale: int

    def describe(self) -> str:
        return f"{self.kind}({self.cx},{self.cy},s={self.scale})"


@dataclass(frozen=True)
class OpToken:
    kind: str

    def describe(self) -> str:
        return self.kind


class Vocabulary:
    """Index <-> token bijection; shapes first (sorted by kind, scale, cy, cx),
    then union, intersect, subtract. Primitive rasters are cached."""

    def __init__(self, tokens, image_size: int = 64):
        self.tokens = tuple(tokens)
        self.image_size = int(image_size)
        if len(set(self.tokens)) != len(self.tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.num_shapes = sum(1 for t in self.tokens if isinstance(t, ShapeToken))
        self._index = {t: i for i, t in enumerate(self.tokens)}
        self._renders: dict[int, np.ndarray] = {}

    @classmethod
    def build(cls, grid=None, image_size: int = 64) -> "Vocabulary":
        grid = DEFAULT_GRID if grid is None else grid
        shapes = []
        for kind_rank, kind in enumerate(SHAPE_KINDS):
            for scale, centers in grid.items():
                for cy in centers:
                    for cx in centers:
                        shapes.append((kind_rank, scale, cy, cx, ShapeToken(kind, cx, cy, scale)))
        shapes.sort(key=lambda row: row[:4])
        tokens = [row[4] for row in shapes] + [OpToken(k) for k in OP_KINDS]
        return cls(tokens, image_size=image_size)

    def __len__(self) -> int:
        return len(self.tokens)

    def index(self, token) -> int:
        return self._index[token]

    def is_shape(self, i: int) -> bool:
        return isinstance(self.tokens[i], ShapeToken)

    def render(self, i: int) -> np.ndarray:
        """Cached primitive bitmap for shape token i (read-only)."""
        if i not in self._renders:
            token = self.tokens[i]
            if not isinstance(token, ShapeToken):
                raise InvalidProgramError(f"token {i} is not a shape")
            img = render_primitive(token, self.image_size)
            img.flags.writeable = False
            self._renders[i] = img
        return self._renders[i]

    def manifest_lines(self) -> list[str]:
        return [f"{i}\t{t.describe()}" for i, t in enumerate(self.tokens)]

    def save_manifest(self, path) -> None:
        Path(path).write_text("\n".join(self.manifest_lines()) + "\n", encoding="utf-8")


def render_primitive(token: ShapeToken, size: int = 64) -> np.ndarray:
    xs = np.arange(size, dtype=np.int64)[None, :]
    ys = np.arange(size, dtype=np.int64)[:, None]
    cx, cy, s = token.cx, token.cy, token.scale
    if token.kind == "circle":
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= s * s
    if token.kind == "square":
        return (np.abs(xs - cx) <= s) & (np.abs(ys - cy) <= s)
    if token.kind == "triangle":
        ax, ay = cx, cy - s
        bx, by = cx - s, cy + s
        qx, qy = cx + s, cy + s

        def half(px, py, ux, uy, vx, vy):
            # cross(v - u, p - u) <= 0 keeps the interior for this winding
            return (vx - ux) * (py - uy) - (vy - uy) * (px - ux) <= 0

        return (
            half(xs, ys, ax, ay, bx, by)
            & half(xs, ys, bx, by, qx, qy)
            & half(xs, ys, qx, qy, ax, ay)
        )
    raise ValueError(f"unknown shape kind {token.kind!r}")


def validate_program(indices, vocab: Vocabulary) -> bool:
    """Stack simulation: shapes push 1, operations pop 2 push 1; valid iff
    no underflow and exactly one value remains."""
    depth = 0
    for i in indices:
        if vocab.is_shape(int(i)):
            depth += 1
        else:
            if depth < 2:
                return False
            depth -= 1
    return depth == 1


def execute(indices, vocab: Vocabulary) -> np.ndarray:
    if not validate_program(indices, vocab):
        raise InvalidProgramError(f"invalid program {tuple(int(i) for i in indices)}")
    stack: list[np.ndarray] = []
    for i in indices:
        i = int(i)
        token = vocab.tokens[i]
        if isinstance(token, ShapeToken):
            stack.append(vocab.render(i))
        else:
            b = stack.pop()
            a = stack.pop()
            if token.kind == "union":
                stack.append(a | b)
            elif token.kind == "intersect":
                stack.append(a & b)
            else:
                stack.append(a & ~b)
    return stack[0]


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two binary images; 1.0 when both empty."""
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a & b)) / union


LENGTH5_PATTERNS = ((True, True, False, True, False), (True, True, True, False, False))


def _sample_program(rng: np.random.Generator, vocab: Vocabulary, length: int = 5):
    if length == 5:
        pattern = LENGTH5_PATTERNS[int(rng.integers(2))]
    else:
        pattern = _random_valid_pattern(rng, length)
    out = []
    for is_shape in pattern:
        if is_shape:
            out.append(int(rng.integers(vocab.num_shapes)))
        else:
            out.append(vocab.num_shapes + int(rng.integers(len(OP_KINDS))))
    return tuple(out)


def _random_valid_pattern(rng: np.random.Generator, length: int):
    # rejection sampling over shape/op patterns; cheap for small lengths
    for _ in range(10000):
        pattern = tuple(bool(rng.integers(2)) for _ in range(length))
        depth = 0
        ok = True
        for is_shape in pattern:
            depth += 1 if is_shape else -1
            if depth < 1:
                ok = False
                break
        if ok and depth == 1:
            return pattern
    raise RuntimeError(f"no valid shape/op pattern of length {length} found")


def generate_dataset(n: int, rng: np.random.Generator, vocab: Vocabulary, length: int = 5):
    """n distinct-image (bitmap, program) pairs from uniformly sampled valid
    programs; empty images and duplicate images are rejected."""
    if n < 1:
        raise ValueError("n must be positive")
    pairs = []
    seen: set[bytes] = set()
    attempts = 0
    limit = 100 * n
    while len(pairs) < n:
        if attempts >= limit:
            raise RuntimeError(
                f"could not generate {n} distinct images within {limit} attempts"
            )
        attempts += 1
        prog = _sample_program(rng, vocab, length)
        img = execute(prog, vocab)
        if not img.any():
            continue
        key = img.tobytes()
        if key in seen:
            continue
        seen.add(key)
        pairs.append((img, prog))
    return pairs


# -- on-disk formats -------------------------------------------------------

_BIMG_MAGIC = b"BIMG"
_BIMG_VERSION = 1


def save_images(path, images, text: bool = False) -> None:
    """Binary container of packed bit rows by default; with text=True, a
    directory of one P2 graymap per image."""
    images = list(images)
    if text:
        root = Path(path)
        root.mkdir(parents=True, exist_ok=True)
        for i, img in enumerate(images):
            h, w = img.shape
            rows = "\n".join(" ".join(str(int(v)) for v in row) for row in img)
            (root / f"{i:05d}.pgm").write_text(f"P2\n{w} {h}\n1\n{rows}\n", encoding="utf-8")
        return
    with open(path, "wb") as fh:
        if not images:
            fh.write(_BIMG_MAGIC + struct.pack("<IIHH", _BIMG_VERSION, 0, 0, 0))
            return
        h, w = images[0].shape
        fh.write(_BIMG_MAGIC + struct.pack("<IIHH", _BIMG_VERSION, len(images), h, w))
        for img in images:
            if img.shape != (h, w):
                raise ValueError("images in one container must share dimensions")
            fh.write(np.packbits(img, axis=1).tobytes())


def load_images(path) -> list[np.ndarray]:
    blob = Path(path).read_bytes()
    if blob[:4] != _BIMG_MAGIC:
        raise ValueError("not an image container (bad magic)")
    version, count, h, w = struct.unpack_from("<IIHH", blob, 4)
    if version != _BIMG_VERSION:
        raise ValueError(f"unsupported image container version {version}")
    row_bytes = (w + 7) // 8
    out = []
    off = 16
    for _ in range(count):
        packed = np.frombuffer(blob, dtype=np.uint8, count=h * row_bytes, offset=off)
        off += h * row_bytes
        img = np.unpackbits(packed.reshape(h, row_bytes), axis=1)[:, :w].astype(bool)
        out.append(img)
    return out


def save_programs(path, programs) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for prog in programs:
            fh.write(" ".join(str(int(i)) for i in prog) + "\n")


def load_programs(path) -> list[tuple[int, ...]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(tuple(int(t) for t in line.split()))
    return out


def file_sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
