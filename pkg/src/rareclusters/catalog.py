"""Identifiers for the worked examples."""
from __future__ import annotations

from dataclasses import dataclass

from .dynamics import ALPHA_MIXING_BOUND
from .errors import ConfigError, DomainError

KINDS = ("mma", "doubling13", "doubling_mix", "smith_lsv", "periodic_lsv")


@dataclass(frozen=True)
class ExampleId:
    """One of the five worked examples.

    ``alpha`` is used by the two LSV examples and ``p`` (the period of the
    second maximum) only by ``periodic_lsv``.
    """

    kind: str
    alpha: float | None = None
    p: int | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown example {self.kind!r}; expected one of {KINDS}")
        if self.kind in ("smith_lsv", "periodic_lsv"):
            if self.alpha is None:
                raise ConfigError(f"{self.kind} needs alpha")
            if not 0.0 < self.alpha < ALPHA_MIXING_BOUND:
                raise DomainError(
                    f"alpha must lie in (0, sqrt(5) - 2) = (0, {ALPHA_MIXING_BOUND:.6f})")
            if self.kind == "periodic_lsv":
                if self.p is None or self.p < 2:
                    raise DomainError("periodic_lsv needs period p >= 2")
            elif self.p is not None:
                raise ConfigError("smith_lsv takes no period")
        elif self.alpha is not None or self.p is not None:
            raise ConfigError(f"{self.kind} takes no parameters")

    @property
    def is_lsv(self) -> bool:
        return self.kind in ("smith_lsv", "periodic_lsv")

    @property
    def is_doubling(self) -> bool:
        return self.kind in ("doubling13", "doubling_mix")

    def label(self) -> str:
        if self.kind == "smith_lsv":
            return f"smith_lsv(alpha={self.alpha:g})"
        if self.kind == "periodic_lsv":
            return f"periodic_lsv(alpha={self.alpha:g}, p={self.p})"
        return self.kind

    def key(self) -> str:
        """The form accepted by :meth:`parse`."""
        if self.kind == "smith_lsv":
            return f"smith_lsv:{self.alpha!r}"
        if self.kind == "periodic_lsv":
            return f"periodic_lsv:{self.alpha!r}:{self.p}"
        return self.kind

    def to_dict(self):
        d = {"kind": self.kind}
        if self.alpha is not None:
            d["alpha"] = self.alpha
        if self.p is not None:
            d["p"] = self.p
        return d

    @classmethod
    def from_dict(cls, d):
        if isinstance(d, str):
            return cls.parse(d)
        return cls(d["kind"], d.get("alpha"), d.get("p"))

    @classmethod
    def parse(cls, text: str) -> "ExampleId":
        """Parse ``"doubling13"``, ``"smith_lsv:0.2"`` or ``"periodic_lsv:0.2:2"``."""
        parts = text.strip().split(":")
        kind = parts[0]
        try:
            if kind == "smith_lsv":
                return cls(kind, float(parts[1]) if len(parts) > 1 else 0.2)
            if kind == "periodic_lsv":
                alpha = float(parts[1]) if len(parts) > 1 else 0.2
                p = int(parts[2]) if len(parts) > 2 else 2
                return cls(kind, alpha, p)
        except ValueError as exc:
            raise ConfigError(f"cannot parse example {text!r}") from exc
        if len(parts) > 1:
            raise ConfigError(f"{kind} takes no parameters")
        return cls(kind)


MMA = ExampleId("mma")
DOUBLING13 = ExampleId("doubling13")
DOUBLING_MIX = ExampleId("doubling_mix")


def smith_lsv(alpha: float = 0.2) -> ExampleId:
    return ExampleId("smith_lsv", alpha)


def periodic_lsv(alpha: float = 0.2, p: int = 2) -> ExampleId:
    return ExampleId("periodic_lsv", alpha, p)


def all_examples(alpha: float = 0.2, p: int = 2):
    return [MMA, DOUBLING13, DOUBLING_MIX, smith_lsv(alpha), periodic_lsv(alpha, p)]
