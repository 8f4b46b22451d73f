import csv
import logging
from pathlib import Path
from typing import Union

import numpy as np

from gmfg.exceptions import CatalogError, ConfigError
from gmfg.models import AnalyticGraphon, Graphon, StepGraphon
from .base_repository import BaseRepository

logger = logging.getLogger(__name__)


def constant(c: float = 1.0) -> Graphon:
    c = float(c)
    if c < 0:
        raise CatalogError("constant graphon needs c >= 0", {"c": c})
    return AnalyticGraphon(f"constant:{c:g}", lambda u, v: np.full(np.shape(u), c), e_max=c)


def product() -> Graphon:
    return AnalyticGraphon("product", lambda u, v: u * v, e_max=1.0)


def minmax() -> Graphon:
    return AnalyticGraphon("minmax", lambda u, v: 1.0 - np.abs(u - v), e_max=1.0)


def sbm(k: int = 2, inter: float = 0.0, intra: float = 1.0) -> Graphon:
    """Stochastic-block-model shaped step graphon: ``intra`` on the diagonal blocks, ``inter`` off it."""
    k = int(k)
    if k < 1 or inter < 0 or intra < 0:
        raise CatalogError("sbm graphon needs k >= 1 and nonnegative weights", {"k": k})
    values = np.full((k, k), float(inter))
    np.fill_diagonal(values, float(intra))
    return StepGraphon(values, name=f"sbm:{k}:{inter:g}:{intra:g}")


class GraphonRepository(BaseRepository[Graphon]):
    """Registered analytic graphon families and CSV step graphons.

    Specs are strings ``family[:arg[:arg...]]``, e.g. ``constant:0.5`` or ``sbm:2:0.2:1``.
    """

    def __init__(self):
        super().__init__()
        self.register("constant", constant)
        self.register("product", product)
        self.register("minmax", minmax)
        self.register("sbm", sbm)

    @property
    def kind(self) -> str:
        return "graphon"

    def resolve(self, spec: str) -> Graphon:
        """Build a graphon from a ``family:args`` spec string or a path to a step-graphon CSV."""
        if spec.endswith(".csv"):
            return self.load_step_csv(spec)
        family, *args = spec.split(":")
        try:
            values = [float(a) for a in args]
        except ValueError as e:
            raise CatalogError(f"malformed graphon spec '{spec}'") from e
        return self.get_by_name(family, **self._bind(family, values))

    @staticmethod
    def _bind(family: str, values: list[float]) -> dict:
        names = {"constant": ["c"], "product": [], "minmax": [], "sbm": ["k", "inter", "intra"]}
        expected = names.get(family)
        if expected is None:
            return {}
        if len(values) > len(expected):
            raise CatalogError(
                f"graphon family '{family}' takes at most {len(expected)} arguments",
                {"given": len(values)},
            )
        return dict(zip(expected, values))

    @staticmethod
    def load_step_csv(path: Union[str, Path]) -> StepGraphon:
        """Header row = k, then k rows of k values."""
        path = Path(path)
        try:
            with path.open(newline="") as handle:
                rows = [row for row in csv.reader(handle) if row]
        except OSError as e:
            raise ConfigError(f"cannot read step graphon '{path}': {e}") from e
        try:
            k = int(rows[0][0])
        except (IndexError, ValueError) as e:
            raise ConfigError(f"step graphon '{path}' must start with the block count", line=1) from e
        if len(rows) != k + 1:
            raise ConfigError(f"step graphon '{path}' needs {k} value rows", line=len(rows))
        values = np.empty((k, k))
        for i, row in enumerate(rows[1:]):
            if len(row) != k:
                raise ConfigError(f"step graphon row has {len(row)} values, expected {k}", line=i + 2)
            try:
                values[i] = [float(entry) for entry in row]
            except ValueError as e:
                raise ConfigError(f"non-numeric step graphon entry: {e}", line=i + 2) from e
        logger.info(f"Loaded {k}x{k} step graphon from {path}")
        return StepGraphon(values, name=path.stem)

    @staticmethod
    def save_step_csv(graphon: StepGraphon, path: Union[str, Path]) -> Path:
        path = Path(path)
        with path.open("w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow([graphon.k])
            for row in graphon.values:
                writer.writerow([f"{value:.17g}" for value in row])
        return path
