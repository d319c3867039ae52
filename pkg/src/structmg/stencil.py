"""Stencil patterns for structured matrices and grid-transfer operators.

A stencil pattern is a mask over the neighbor offsets ``{-1, 0, 1}^dim``.
Offsets are always kept in lexicographic order with the x component most
significant, which is also the order of the coefficient slots in an SG-DIA
matrix and the order chain tables refer to.
"""

from __future__ import annotations

import itertools
import re
from dataclasses import dataclass, field

Offset = tuple[int, ...]

__all__ = [
    "StencilPattern",
    "TransferPattern",
    "pattern_from_name",
    "parse_pattern",
    "project_to_2d",
    "lower_triangular_part",
    "upper_triangular_part",
    "transpose_pattern",
    "transfer_from_name",
    "make_transfer",
    "CANONICAL_NAMES",
    "TRANSFER_NAMES",
]


def _cube(dim: int) -> list[Offset]:
    return list(itertools.product((-1, 0, 1), repeat=dim))


def _l1(o: Offset) -> int:
    return sum(abs(c) for c in o)


# 3d15: the 7-point star plus the 8 cube corners.
_CANONICAL_RULES = {
    "2d5": (2, lambda o: _l1(o) <= 1),
    "2d9": (2, lambda o: True),
    "3d7": (3, lambda o: _l1(o) <= 1),
    "3d15": (3, lambda o: _l1(o) <= 1 or _l1(o) == 3),
    "3d19": (3, lambda o: _l1(o) <= 2),
    "3d27": (3, lambda o: True),
}
CANONICAL_NAMES = tuple(_CANONICAL_RULES)


def _canonical_offsets(name: str) -> tuple[Offset, ...]:
    dim, rule = _CANONICAL_RULES[name]
    return tuple(o for o in _cube(dim) if rule(o))


def _name_for(dim: int, offsets: tuple[Offset, ...]) -> str:
    for name, (d, _) in _CANONICAL_RULES.items():
        if d == dim and _canonical_offsets(name) == offsets:
            return name
    return "custom"


@dataclass(frozen=True)
class StencilPattern:
    """Set of neighbor offsets in ``{-1, 0, 1}^dim`` in canonical order.

    Construct from any iterable of offsets; they are validated, sorted and
    checked for duplicates.  ``name`` is filled in automatically when the
    offsets match one of the canonical masks.
    """

    dim: int
    offsets: tuple[Offset, ...]
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"stencil dimension must be 2 or 3, got {self.dim}")
        offs = [tuple(int(c) for c in o) for o in self.offsets]
        for o in offs:
            if len(o) != self.dim:
                raise ValueError(f"offset {o} does not have {self.dim} components")
            if any(c not in (-1, 0, 1) for c in o):
                raise ValueError(f"offset {o} is outside {{-1,0,1}}^{self.dim}")
        if len(set(offs)) != len(offs):
            raise ValueError("duplicate offsets in stencil pattern")
        offs = tuple(sorted(offs))
        object.__setattr__(self, "offsets", offs)
        object.__setattr__(self, "name", _name_for(self.dim, offs))

    @property
    def entries_per_row(self) -> int:
        return len(self.offsets)

    @property
    def center(self) -> Offset:
        return (0,) * self.dim

    @property
    def has_center(self) -> bool:
        return self.center in self.offsets

    @property
    def mask(self) -> tuple[bool, ...]:
        s = set(self.offsets)
        return tuple(o in s for o in _cube(self.dim))

    @property
    def center_index(self) -> int:
        return self.offsets.index(self.center)

    def index(self, offset: Offset) -> int:
        return self.offsets.index(tuple(offset))

    def __contains__(self, offset) -> bool:
        return tuple(offset) in self.offsets

    def __len__(self) -> int:
        return len(self.offsets)

    def __iter__(self):
        return iter(self.offsets)

    def union(self, other: StencilPattern) -> StencilPattern:
        if other.dim != self.dim:
            raise ValueError("cannot combine patterns of different dimension")
        return StencilPattern(self.dim, tuple(set(self.offsets) | set(other.offsets)))

    def issubset(self, other: StencilPattern) -> bool:
        return set(self.offsets) <= set(other.offsets)

    def to_text(self) -> str:
        body = ",".join("(" + ",".join(str(c) for c in o) + ")" for o in self.offsets)
        return f"{self.dim}d{len(self.offsets)}:[{body}]"

    @classmethod
    def from_mask(cls, dim: int, mask) -> StencilPattern:
        mask = list(mask)
        cube = _cube(dim)
        if len(mask) != len(cube):
            raise ValueError(f"mask for dim {dim} needs {len(cube)} flags")
        return cls(dim, tuple(o for o, m in zip(cube, mask) if m))

    def __str__(self) -> str:
        return self.name if self.name != "custom" else self.to_text()


def pattern_from_name(name: str) -> StencilPattern:
    """Return the canonical pattern called ``name`` (e.g. ``"3d19"``)."""
    if name not in _CANONICAL_RULES:
        raise ValueError(
            f"unknown stencil pattern {name!r}; supported: {', '.join(CANONICAL_NAMES)}"
        )
    return StencilPattern(_CANONICAL_RULES[name][0], _canonical_offsets(name))


_TEXT_RE = re.compile(r"^\s*(\d)d(\d+)\s*:\s*\[(.*)\]\s*$")
_TUPLE_RE = re.compile(r"\(([^()]*)\)")


def parse_pattern(text: str) -> StencilPattern:
    """Parse a canonical name or the ``3dN:[(dx,dy,dz),...]`` text form."""
    text = text.strip()
    if text in _CANONICAL_RULES:
        return pattern_from_name(text)
    m = _TEXT_RE.match(text)
    if not m:
        raise ValueError(f"cannot parse stencil pattern {text!r}")
    dim, count = int(m.group(1)), int(m.group(2))
    offsets = [
        tuple(int(c) for c in t.split(",")) for t in _TUPLE_RE.findall(m.group(3))
    ]
    if len(offsets) != count:
        raise ValueError(f"pattern header says {count} offsets, found {len(offsets)}")
    return StencilPattern(dim, tuple(offsets))


def project_to_2d(p: StencilPattern) -> StencilPattern:
    """Drop the z component of a 3D pattern (column-wise view)."""
    if p.dim != 3:
        raise ValueError("project_to_2d expects a 3D pattern")
    return StencilPattern(2, tuple({o[:2] for o in p.offsets}))


def lower_triangular_part(p: StencilPattern) -> StencilPattern:
    """Offsets strictly preceding the center in canonical order."""
    return StencilPattern(p.dim, tuple(o for o in p.offsets if o < p.center))


def upper_triangular_part(p: StencilPattern) -> StencilPattern:
    return StencilPattern(p.dim, tuple(o for o in p.offsets if o > p.center))


def transpose_pattern(p: StencilPattern) -> StencilPattern:
    return StencilPattern(p.dim, tuple(tuple(-c for c in o) for o in p.offsets))


# ---------------------------------------------------------------------------
# transfer patterns


@dataclass(frozen=True)
class TransferPattern:
    """Fine-grid displacements reached from a coarse element's image point.

    ``offsets`` are in fine-grid units.  For cell-centered transfers they
    enumerate the fine children of a coarse cell; for vertex-centered ones
    they surround the coincident fine vertex.
    """

    centering: str
    offsets: tuple[Offset, ...]
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        if self.centering not in ("vertex", "cell"):
            raise ValueError(f"centering must be 'vertex' or 'cell', got {self.centering!r}")
        offs = [tuple(int(c) for c in o) for o in self.offsets]
        if not offs:
            raise ValueError("transfer pattern needs at least one offset")
        if len({len(o) for o in offs}) != 1:
            raise ValueError("transfer offsets must share one dimension")
        if len(set(offs)) != len(offs):
            raise ValueError("duplicate offsets in transfer pattern")
        object.__setattr__(self, "offsets", tuple(sorted(offs)))

    @property
    def dim(self) -> int:
        return len(self.offsets[0])

    def __len__(self) -> int:
        return len(self.offsets)

    def index(self, offset: Offset) -> int:
        return self.offsets.index(tuple(offset))

    def __str__(self) -> str:
        return self.name


def make_transfer(centering: str, strides, kind: str = "full") -> TransferPattern:
    """Build the transfer pattern for given per-axis strides.

    ``kind="full"`` is the tensor-product range (``3d8c``, ``3d27v``, ...);
    ``kind="axis"`` keeps only offsets along a single axis (``3d7v``).
    Unstrided axes contribute only the zero offset.
    """
    strides = tuple(int(s) for s in strides)
    if any(s not in (1, 2) for s in strides):
        raise ValueError(f"strides must be 1 or 2, got {strides}")
    per_axis = []
    for s in strides:
        if centering == "cell":
            per_axis.append(tuple(range(s)))
        elif centering == "vertex":
            per_axis.append(tuple(range(-(s - 1), s)))
        else:
            raise ValueError(f"centering must be 'vertex' or 'cell', got {centering!r}")
    offsets = list(itertools.product(*per_axis))
    if kind == "axis":
        offsets = [o for o in offsets if sum(1 for c in o if c) <= 1]
    elif kind != "full":
        raise ValueError(f"transfer kind must be 'full' or 'axis', got {kind!r}")
    ncoarse = sum(1 for s in strides if s > 1)
    name = f"{ncoarse}d{len(offsets)}{centering[0]}"
    return TransferPattern(centering, tuple(offsets), name)


_TRANSFER_SPECS = {
    "3d8c": ("cell", (2, 2, 2), "full"),
    "3d27v": ("vertex", (2, 2, 2), "full"),
    "3d7v": ("vertex", (2, 2, 2), "axis"),
    "2d4c": ("cell", (2, 2), "full"),
    "2d9v": ("vertex", (2, 2), "full"),
    "2d5v": ("vertex", (2, 2), "axis"),
}
TRANSFER_NAMES = tuple(_TRANSFER_SPECS)


def transfer_from_name(name: str) -> TransferPattern:
    if name not in _TRANSFER_SPECS:
        raise ValueError(
            f"unknown transfer pattern {name!r}; supported: {', '.join(TRANSFER_NAMES)}"
        )
    centering, strides, kind = _TRANSFER_SPECS[name]
    return make_transfer(centering, strides, kind)
