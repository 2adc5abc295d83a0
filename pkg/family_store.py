"""
family_store.py
---------------
JSON records of point families and subset-sum lattices, written by the
`points` command and read back by the others. Floats go through repr, so a
saved family reloads bit-for-bit.
"""
import json
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel

from construction import SubsetSumLattice
from geometry import CurveParams, PointFamily

PathLike = Union[str, Path]


class FamilyPayload(BaseModel):
    d: int
    c: float
    b: float
    N: int
    R: float
    surface: str
    stride: int = 1
    indices: List[int]
    xi0: List[float]
    xis: List[List[float]]

    @classmethod
    def of(cls, family: PointFamily) -> "FamilyPayload":
        p = family.params
        return cls(
            d=p.d, c=p.c, b=p.b, N=p.N, R=family.R, surface=family.surface, stride=family.stride,
            indices=list(family.indices), xi0=family.xi0.tolist(), xis=family.xis.tolist(),
        )

    def to_family(self) -> PointFamily:
        return PointFamily(
            xi0=np.array(self.xi0, dtype=float),
            xis=np.array(self.xis, dtype=float).reshape(self.N, self.d),
            params=CurveParams(d=self.d, c=self.c, b=self.b, N=self.N),
            R=self.R, indices=tuple(self.indices), surface=self.surface, stride=self.stride,
        )


class LatticePayload(BaseModel):
    k: int
    bits: List[int]
    points: List[List[float]]


class StoredRun(BaseModel):
    family: FamilyPayload
    lattice: Optional[LatticePayload] = None


def save_family(path: PathLike, family: PointFamily, lattice: Optional[SubsetSumLattice] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    record = StoredRun(
        family=FamilyPayload.of(family),
        lattice=None if lattice is None else LatticePayload(
            k=lattice.k, bits=[int(v) for v in lattice.bits], points=lattice.points.tolist()
        ),
    )
    with open(path, "w", encoding="utf-8") as f:
        json.dump(record.model_dump(), f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def load_family(path: PathLike) -> Tuple[PointFamily, Optional[SubsetSumLattice]]:
    with open(path, "r", encoding="utf-8") as f:
        record = StoredRun.model_validate(json.load(f))
    family = record.family.to_family()
    if record.lattice is None:
        return family, None
    lat = record.lattice
    lattice = SubsetSumLattice(
        generators=family.generators,
        k=lat.k,
        bits=np.array(lat.bits, dtype=np.uint64),
        points=np.array(lat.points, dtype=float).reshape(len(lat.bits), family.d),
    )
    return family, lattice
