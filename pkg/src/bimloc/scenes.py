"""Synthetic building models assembled from axis-aligned elements.

Each element contributes its box surface to the mesh and its bounding box
(with category) to the manifest, which is what an exported building model
provides. Used by the demos and the test-suite.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .mapping import CategoryTable, LabeledBox, TriangleMesh, box_mesh


@dataclass(frozen=True)
class Element:
    id: str
    category: str
    lo: tuple
    hi: tuple
    faces: Optional[tuple] = None  # subset of BOX_FACES; None = closed box


@dataclass
class BuildingModel:
    elements: list = field(default_factory=list)

    def add(self, eid: str, category: str, lo, hi, faces=None) -> None:
        faces = None if faces is None else tuple(faces)
        self.elements.append(Element(eid, category, tuple(map(float, lo)), tuple(map(float, hi)), faces))

    @property
    def table(self) -> CategoryTable:
        return CategoryTable(e.category for e in self.elements)

    @property
    def mesh(self) -> TriangleMesh:
        return TriangleMesh.concatenate([box_mesh(e.lo, e.hi, e.faces) for e in self.elements])

    def boxes(self, table: CategoryTable | None = None) -> list[LabeledBox]:
        table = table or self.table
        return [LabeledBox(e.id, table.id(e.category), e.lo, e.hi) for e in self.elements]

    def element(self, eid: str) -> Element:
        for e in self.elements:
            if e.id == eid:
                return e
        raise KeyError(eid)


def corridor(
    length: float = 40.0,
    width: float = 2.4,
    height: float = 3.0,
    wall: float = 0.2,
    slab: float = 0.2,
    segment: float = 8.0,
    column_every: float = 4.0,
    column_size: float = 0.4,
    margin: float = 1.0,
) -> BuildingModel:
    """Straight corridor along +x from 0 to ``length`` with pilasters on alternating sides.

    Side walls are split into ``segment``-long elements; the corridor is
    closed by end walls ``margin`` beyond each end of the walking line.
    """
    m = BuildingModel()
    x0, x1 = -margin, length + margin
    yw = width / 2
    m.add("floor", "Floors", (x0 - wall, -yw - wall, -slab), (x1 + wall, yw + wall, 0.0))
    m.add("ceiling", "Ceilings", (x0 - wall, -yw - wall, height), (x1 + wall, yw + wall, height + slab))
    n_seg = int(np.ceil((x1 - x0) / segment))
    edges = np.linspace(x0, x1, n_seg + 1)
    for i in range(n_seg):
        m.add(f"wall_L{i}", "Walls", (edges[i], yw, 0.0), (edges[i + 1], yw + wall, height))
        m.add(f"wall_R{i}", "Walls", (edges[i], -yw - wall, 0.0), (edges[i + 1], -yw, height))
    m.add("wall_start", "Walls", (x0 - wall, -yw - wall, 0.0), (x0, yw + wall, height))
    m.add("wall_end", "Walls", (x1, -yw - wall, 0.0), (x1 + wall, yw + wall, height))
    xs = np.arange(column_every / 2, length, column_every)
    for i, x in enumerate(xs):
        if i % 2 == 0:
            lo, hi = (x, yw - column_size, 0.0), (x + column_size, yw, height)
        else:
            lo, hi = (x, -yw, 0.0), (x + column_size, -yw + column_size, height)
        m.add(f"column_{i}", "Columns", lo, hi)
    # door leaves set into the walls between pilasters
    for i, x in enumerate(xs[1::3]):
        y = yw - 0.05 if i % 2 else -yw
        m.add(f"door_{i}", "Doors", (x + 1.2, y, 0.0), (x + 2.1, y + 0.05, 2.1))
    return m


def room(
    size=(8.0, 6.0),
    height: float = 3.0,
    wall: float = 0.2,
    slab: float = 0.2,
    columns=((2.0, 1.5), (5.5, 4.0)),
    column_size: float = 0.5,
    recess: bool = True,
    interior_only: bool = False,
) -> BuildingModel:
    """Rectangular room with free-standing columns and a recess in one wall.

    With ``interior_only`` the enclosing elements keep their boxes but only
    contribute the face that looks into the room, as in a surface model.
    """
    sx, sy = size
    m = BuildingModel()

    def face(f):
        return (f,) if interior_only else None

    m.add("floor", "Floors", (-wall, -wall, -slab), (sx + wall, sy + wall, 0.0), face("+z"))
    m.add("ceiling", "Ceilings", (-wall, -wall, height), (sx + wall, sy + wall, height + slab), face("-z"))
    m.add("wall_S", "Walls", (-wall, -wall, 0.0), (sx + wall, 0.0, height), face("+y"))
    m.add("wall_N", "Walls", (-wall, sy, 0.0), (sx + wall, sy + wall, height), face("-y"))
    m.add("wall_W", "Walls", (-wall, 0.0, 0.0), (0.0, sy, height), face("+x"))
    m.add("wall_E", "Walls", (sx, 0.0, 0.0), (sx + wall, sy, height), face("-x"))
    if recess:
        # asymmetric recess: a thick wall block along part of the north wall
        m.add("wall_N_block", "Walls", (0.0, sy - 1.0, 0.0), (2.5, sy, height), ("-y", "+x") if interior_only else None)
    for i, (cx, cy) in enumerate(columns):
        h = column_size / 2
        m.add(f"column_{i}", "Columns", (cx - h, cy - h, 0.0), (cx + h, cy + h, height))
    return m


def hall(size=(16.0, 12.0), height: float = 3.0, column_size: float = 0.8) -> BuildingModel:
    """Large surface-model room: wide enough that floor and ceiling fall inside a +-15 degree sweep."""
    sx, sy = size
    cols = ((0.3 * sx, 0.3 * sy), (0.65 * sx, 0.7 * sy), (0.8 * sx, 0.25 * sy))
    return room(size, height, columns=cols, column_size=column_size, interior_only=True)


def lounge(size=(14.0, 10.0), height: float = 3.5, column_size: float = 0.6, sill: float = 0.4) -> BuildingModel:
    """Glazed lounge: curtain panels above a low sill on three sides, one solid wall.

    Most returns come from ceiling and glazing, so the whitelisted share of
    a scan is small.
    """
    sx, sy = size
    m = BuildingModel()
    m.add("floor", "Floors", (-0.2, -0.2, -0.2), (sx + 0.2, sy + 0.2, 0.0), ("+z",))
    m.add("ceiling", "Ceilings", (-0.2, -0.2, height), (sx + 0.2, sy + 0.2, height + 0.2), ("-z",))
    m.add("wall_W", "Walls", (-0.2, 0.0, 0.0), (0.0, sy, height), ("+x",))
    m.add("sill_S", "Walls", (0.0, -0.2, 0.0), (sx, 0.0, sill), ("+y",))
    m.add("sill_E", "Walls", (sx, 0.0, 0.0), (sx + 0.2, sy, sill), ("-x",))
    m.add("curtain_S", "Curtain Panels", (0.0, -0.1, sill), (sx, 0.0, height), ("+y",))
    m.add("curtain_E", "Curtain Panels", (sx, 0.0, sill), (sx + 0.1, sy, height), ("-x",))
    m.add("sill_N", "Walls", (0.0, sy, 0.0), (sx, sy + 0.2, sill), ("-y",))
    m.add("curtain_N", "Curtain Panels", (0.0, sy, sill), (sx, sy + 0.1, height), ("-y",))
    for i, (fx, fy) in enumerate(((0.35, 0.4), (0.7, 0.65))):
        cx, cy, h = fx * sx, fy * sy, column_size / 2
        m.add(f"column_{i}", "Columns", (cx - h, cy - h, 0.0), (cx + h, cy + h, height))
    return m


def deviation_columns(model: BuildingModel, rng: np.random.Generator, n: int = 2, size: float = 0.4, height: float = 3.0):
    """Boxes for ``n`` as-built columns absent from the model, placed against a side wall."""
    out = []
    floor = model.element("floor")
    walls = [e for e in model.elements if e.id.startswith("wall_L") or e.id.startswith("wall_R")]
    x_lo, x_hi = floor.lo[0] + 4.0, floor.hi[0] - 4.0
    for _ in range(n):
        x = rng.uniform(x_lo, x_hi)
        w = walls[rng.integers(len(walls))]
        if w.id.startswith("wall_L"):
            lo, hi = (x, w.lo[1] - size, 0.0), (x + size, w.lo[1], height)
        else:
            lo, hi = (x, w.hi[1], 0.0), (x + size, w.hi[1] + size, height)
        out.append((lo, hi))
    return out
