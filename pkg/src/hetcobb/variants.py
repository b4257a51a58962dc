"""Model variants: which inputs are predetermined, which are flexible.

Every variant shares the same identification recipe. Flexible inputs get
their elasticity from an ex-ante cost share, predetermined inputs from the
slope of the net-output regression, and the intercept from a final level
regression. Only the bookkeeping differs, and it lives here.
"""

from __future__ import annotations

from dataclasses import dataclass

__all__ = ["Variant", "VARIANTS", "get_variant"]


@dataclass(frozen=True)
class Variant:
    """Bookkeeping for one model variant.

    Coefficient names double as column suffixes: coefficient ``"m1"`` is
    ``beta_m1`` on a :class:`~hetcobb.technology.CoefficientVector` and its
    cost column is ``cost_m1``.
    """

    name: str
    state: tuple[str, ...]
    flexible: tuple[str, ...]
    # pairs (numerator, denominator) of flexible inputs forming cost ratios
    ratios: tuple[tuple[str, str], ...]
    # observed log-quantity column for each predetermined input
    state_columns: tuple[str, ...]

    @property
    def coefficients(self) -> tuple[str, ...]:
        return self.state + self.flexible + ("0",)

    @property
    def cost_columns(self) -> tuple[str, ...]:
        return tuple(f"cost_{f}" for f in self.flexible)

    @property
    def price_columns(self) -> tuple[str, ...]:
        return ("p_y",) + tuple(f"p_{f}" for f in self.flexible)

    @property
    def ratio_names(self) -> tuple[str, ...]:
        return tuple(f"r_{a}_{b}" for a, b in self.ratios)

    @property
    def required_columns(self) -> tuple[str, ...]:
        return ("output_value",) + self.cost_columns + self.state_columns

    def beta_attr(self, name: str) -> str:
        return f"beta_{name}"


VARIANTS: dict[str, Variant] = {
    "baseline": Variant(
        name="baseline",
        state=("l", "k"),
        flexible=("m1", "m2"),
        ratios=(("m1", "m2"),),
        state_columns=("log_labor", "log_capital"),
    ),
    # skilled labor reuses the ``l`` slot; unskilled labor is ``lu``
    "two_labor": Variant(
        name="two_labor",
        state=("l", "lu", "k"),
        flexible=("m1", "m2"),
        ratios=(("m1", "m2"),),
        state_columns=("log_labor_s", "log_labor_u", "log_capital"),
    ),
    "three_flexible": Variant(
        name="three_flexible",
        state=("l", "k"),
        flexible=("m1", "m2", "m3"),
        ratios=(("m1", "m2"), ("m2", "m3")),
        state_columns=("log_labor", "log_capital"),
    ),
    # labor is chosen flexibly alongside the single material ``m1``
    "single_m_flexible_labor": Variant(
        name="single_m_flexible_labor",
        state=("k",),
        flexible=("l", "m1"),
        ratios=(("l", "m1"),),
        state_columns=("log_capital",),
    ),
}


def get_variant(name: str | Variant) -> Variant:
    if isinstance(name, Variant):
        return name
    try:
        return VARIANTS[name]
    except KeyError:
        from .exceptions import ConfigError

        raise ConfigError(
            f"unknown model variant {name!r}; expected one of {sorted(VARIANTS)}"
        ) from None
