"""Named transport instances used by the sweeps and the CLI."""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ParameterError
from .marginals import ConvexDomain, DiscreteMarginal, build_marginal, make_density


@dataclass(frozen=True)
class InstanceSpec:
    """Source and target (domain, density) pairs plus a grid resolution per axis.

    Domains are boxes given as one ``(lo, hi)`` interval per axis.
    """

    name: str
    source_box: tuple
    target_box: tuple
    source_density: str = "uniform"
    target_density: str = "uniform"
    source_params: tuple = field(default_factory=tuple)
    target_params: tuple = field(default_factory=tuple)
    resolution: int = 128

    def __post_init__(self):
        object.__setattr__(self, "source_box", tuple(tuple(map(float, iv)) for iv in self.source_box))
        object.__setattr__(self, "target_box", tuple(tuple(map(float, iv)) for iv in self.target_box))
        object.__setattr__(self, "source_params", tuple(sorted(dict(self.source_params).items())))
        object.__setattr__(self, "target_params", tuple(sorted(dict(self.target_params).items())))
        if len(self.source_box) != len(self.target_box):
            raise ParameterError("source and target must have the same dimension")

    @property
    def dimension(self) -> int:
        return len(self.source_box)

    @property
    def source(self) -> ConvexDomain:
        return ConvexDomain.box(*self.source_box)

    @property
    def target(self) -> ConvexDomain:
        return ConvexDomain.box(*self.target_box)

    def build(self) -> tuple[DiscreteMarginal, DiscreteMarginal]:
        src, tgt = self.source, self.target
        f = make_density(self.source_density, src, dict(self.source_params))
        g = make_density(self.target_density, tgt, dict(self.target_params))
        return build_marginal(src, f, self.resolution), build_marginal(tgt, g, self.resolution)


UNIT = ((0.0, 1.0),)

PRESETS = {
    "A": InstanceSpec("A", UNIT, UNIT),
    "B": InstanceSpec("B", UNIT, ((0.0, 2.0),)),
    "C": InstanceSpec("C", UNIT * 2, UNIT * 2, resolution=12),
    "D": InstanceSpec("D", UNIT, UNIT, source_density="sine-perturbed",
                      source_params=(("amplitude", 0.3),)),
}


def preset(name: str, resolution: int | None = None) -> InstanceSpec:
    if name not in PRESETS:
        raise ParameterError(f"unknown instance {name!r}; choose from {sorted(PRESETS)}")
    spec = PRESETS[name]
    if resolution is not None:
        spec = InstanceSpec(spec.name, spec.source_box, spec.target_box, spec.source_density,
                            spec.target_density, spec.source_params, spec.target_params,
                            int(resolution))
    return spec
