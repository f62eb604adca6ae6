"""System and coupling configuration records."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

from .errors import InvalidConfigError

COUPLING_KINDS = ("none", "simple", "window")


@dataclass(frozen=True)
class CouplingSpec:
    """How successive lifted graphs along a chain are interconnected.

    ``simple``: a fraction ``a`` of each bit's fragments goes to the previous
    chain position, the rest stays local. ``window``: fragments spread evenly
    over the 2W+1 positions centred on the bit's own position.
    """

    kind: str = "none"
    a: float = 0.0
    W: int = 0
    chain_length: int = 1
    anchored_prefix: int = 0

    def __post_init__(self):
        if self.kind not in COUPLING_KINDS:
            raise InvalidConfigError(f"unknown coupling kind {self.kind!r}")
        if self.chain_length < 1:
            raise InvalidConfigError("chain_length must be >= 1")
        if not 0 <= self.anchored_prefix < self.chain_length or (
            self.kind == "none" and self.anchored_prefix
        ):
            raise InvalidConfigError("anchored_prefix must lie in [0, chain_length) and be 0 when uncoupled")
        if self.kind == "simple" and not 0.0 <= self.a <= 1.0:
            raise InvalidConfigError(f"simple coupling needs 0 <= a <= 1, got {self.a}")
        if self.kind == "window" and self.W < 0:
            raise InvalidConfigError(f"window coupling needs W >= 0, got {self.W}")

    @property
    def span(self) -> int:
        """Number of chain positions one MAC node draws fragments from."""
        if self.kind == "window":
            return 2 * self.W + 1
        if self.kind == "simple":
            return 2
        return 1

    def offsets(self) -> tuple[tuple[int, float], ...]:
        """(position offset, fraction of a bit's fragments) pairs."""
        if self.kind == "window":
            n = 2 * self.W + 1
            return tuple((j, 1.0 / n) for j in range(-self.W, self.W + 1))
        if self.kind == "simple":
            return ((0, 1.0 - self.a), (-1, self.a))
        return ((0, 1.0),)


@dataclass(frozen=True)
class SystemConfig:
    K: int
    N: int
    M: int = 1
    L: int = 1
    noise_var: float = 0.0
    coupling: CouplingSpec = field(default_factory=CouplingSpec)

    def __post_init__(self):
        for name in ("K", "N", "M", "L"):
            if getattr(self, name) < 1:
                raise InvalidConfigError(f"{name} must be >= 1")
        if self.noise_var < 0:
            raise InvalidConfigError("noise_var must be >= 0")

    @property
    def alpha(self) -> float:
        return self.K / self.N

    @property
    def positions(self) -> int:
        return self.coupling.chain_length

    @property
    def n_blocks(self) -> int:
        return self.positions * self.L

    @property
    def n_bits(self) -> int:
        """Bits per user."""
        return self.positions * self.L

    @property
    def finite_load(self) -> float:
        """(KM - 1)/(NM): interference seen by one fragment from all others in its block."""
        return (self.K * self.M - 1) / (self.N * self.M)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["alpha"] = self.alpha
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SystemConfig":
        d = dict(d)
        d.pop("alpha", None)
        coupling = CouplingSpec(**d.pop("coupling", {}))
        return cls(coupling=coupling, **d)
