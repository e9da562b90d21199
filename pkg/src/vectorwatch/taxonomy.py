"""Genus/species registry for the nine surveilled vector species.

Class orderings are fixed (genus order, and species in genus-major order)
so that report layouts, confusion matrices and label indices are stable.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class Genus(Enum):
    AEDES = "Aedes"
    ANOPHELES = "Anopheles"
    CULEX = "Culex"


GENUS_ORDER: tuple[Genus, ...] = (Genus.AEDES, Genus.ANOPHELES, Genus.CULEX)

SPECIES_BY_GENUS: dict[Genus, tuple[str, ...]] = {
    Genus.AEDES: ("aegypti", "infirmatus", "taeniorhynchus"),
    Genus.ANOPHELES: ("crucians", "quadrimaculatus", "stephensi"),
    Genus.CULEX: ("coronator", "nigripalpus", "salinarius"),
}

SPECIES_ORDER: tuple[str, ...] = tuple(
    s for g in GENUS_ORDER for s in SPECIES_BY_GENUS[g]
)

_GENUS_OF = {s: g for g, names in SPECIES_BY_GENUS.items() for s in names}


def genus_of(species: str) -> Genus:
    try:
        return _GENUS_OF[species]
    except KeyError:
        raise ValueError(f"unknown species {species!r}") from None


def species_index(species: str) -> int:
    try:
        return SPECIES_ORDER.index(species)
    except ValueError:
        raise ValueError(f"unknown species {species!r}") from None


@dataclass(frozen=True)
class TaxonLabel:
    genus: Genus
    species: str

    def __post_init__(self) -> None:
        if self.species not in SPECIES_BY_GENUS[self.genus]:
            raise ValueError(
                f"species {self.species!r} does not belong to genus {self.genus.value}")

    @classmethod
    def from_species(cls, species: str) -> "TaxonLabel":
        return cls(genus_of(species), species)

    def as_dict(self) -> dict[str, str]:
        return {"genus": self.genus.value, "species": self.species}

    @classmethod
    def from_dict(cls, d: dict[str, str]) -> "TaxonLabel":
        return cls(Genus(d["genus"]), d["species"])
