"""Weighted probabilistic normal-distributions map over a square grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from radar_odom.core import symmetrize
from radar_odom.errors import ConfigError, EmptyMap
from radar_odom.submap import Submap

MIN_EIGENVALUE = 1e-6  # m^2, floor for cells whose points coincide exactly
_KEY_SHIFT = np.int64(1) << 32
_KEY_BIAS = np.int64(1) << 31

LAYER_OFFSETS = ((0.0, 0.0), (0.5, 0.0), (0.0, 0.5), (0.5, 0.5))  # in grid units


@dataclass
class NdtConfig:
    grid_size: float = 3.0
    shift_s: float = 0.0
    min_points_per_cell: int = 3
    cov_condition_cap: float = 1000.0
    # False drops the per-point covariance term (classical NDT)
    probabilistic: bool = True

    def __post_init__(self) -> None:
        if not self.grid_size > 0:
            raise ConfigError("ndt.grid_size must be positive")
        if not 0.0 <= self.shift_s <= 1.0:
            raise ConfigError("ndt.shift_s must lie in [0, 1]")
        if self.min_points_per_cell < 1 or self.cov_condition_cap < 1:
            raise ConfigError("ndt.min_points_per_cell and ndt.cov_condition_cap must be >= 1")


@dataclass
class NdtCell:
    mean: np.ndarray
    cov: np.ndarray
    cov_inverse: np.ndarray
    weight_mass: float
    point_count: int


@dataclass
class NdtLayer:
    """Cells of one grid offset, sorted by integer key for vectorised lookup."""

    offset: np.ndarray
    keys: np.ndarray
    index: np.ndarray  # (K, 2) integer cell coordinates
    means: np.ndarray
    covs: np.ndarray
    cov_inverses: np.ndarray
    weight_mass: np.ndarray
    point_count: np.ndarray

    def __len__(self) -> int:
        return len(self.keys)


def cell_keys(ix: np.ndarray, iy: np.ndarray) -> np.ndarray:
    return ix.astype(np.int64) * _KEY_SHIFT + (iy.astype(np.int64) + _KEY_BIAS)


def decode_keys(keys: np.ndarray) -> np.ndarray:
    iy_biased = np.mod(keys, _KEY_SHIFT)
    return np.stack([(keys - iy_biased) // _KEY_SHIFT, iy_biased - _KEY_BIAS], axis=1)


@dataclass
class NdtMap:
    grid_size: float
    layers: list[NdtLayer]
    source_point_count: int

    def cell_index(self, layer: int, points: np.ndarray) -> np.ndarray:
        return np.floor((np.asarray(points) - self.layers[layer].offset) / self.grid_size).astype(np.int64)

    def lookup(self, layer: int, points: np.ndarray) -> np.ndarray:
        """Row into the layer's cell arrays for each point, -1 where the cell is empty."""
        lay = self.layers[layer]
        ij = self.cell_index(layer, points)
        keys = cell_keys(ij[:, 0], ij[:, 1])
        pos = np.searchsorted(lay.keys, keys)
        pos = np.minimum(pos, max(len(lay.keys) - 1, 0))
        if len(lay.keys) == 0:
            return np.full(len(keys), -1)
        return np.where(lay.keys[pos] == keys, pos, -1)

    def cells(self, layer: int = 0) -> dict[tuple[int, int], NdtCell]:
        lay = self.layers[layer]
        return {
            (int(lay.index[k, 0]), int(lay.index[k, 1])): NdtCell(
                lay.means[k], lay.covs[k], lay.cov_inverses[k], float(lay.weight_mass[k]), int(lay.point_count[k]))
            for k in range(len(lay))
        }

    @property
    def cell_count(self) -> int:
        return sum(len(lay) for lay in self.layers)


def shifted_weight(power, s: float):
    """Power-shifted weight ``max(power - s, 0)``; absent power (None/NaN) weighs 1."""
    if power is None:
        return 1.0
    p = np.asarray(power, dtype=float)
    w = np.where(np.isnan(p), 1.0, np.maximum(p - s, 0.0))
    return float(w) if w.ndim == 0 else w


def submap_weights(submap: Submap, s: float) -> np.ndarray:
    return np.where(submap.has_power, np.maximum(submap.weights - s, 0.0), 1.0)


def regularize(covs: np.ndarray, cap: float) -> tuple[np.ndarray, np.ndarray]:
    """Lift the small eigenvalue to at least ``large / cap``; return (cov, inverse)."""
    lam, vec = np.linalg.eigh(symmetrize(covs))
    large = np.maximum(lam[..., 1], MIN_EIGENVALUE)
    small = np.maximum(lam[..., 0], large / cap)
    lam = np.stack([small, large], axis=-1)
    vt = np.swapaxes(vec, -1, -2)
    cov = (vec * lam[..., None, :]) @ vt
    inv = (vec * (1.0 / lam)[..., None, :]) @ vt
    return symmetrize(cov), symmetrize(inv)


def _build_layer(pos, w, covs, offset, cfg: NdtConfig) -> NdtLayer:
    g = cfg.grid_size
    ij = np.floor((pos - offset) / g).astype(np.int64)
    keys = cell_keys(ij[:, 0], ij[:, 1])
    uniq, inv, counts = np.unique(keys, return_inverse=True, return_counts=True)
    k = len(uniq)
    mass = np.bincount(inv, weights=w, minlength=k)
    mean = np.stack([np.bincount(inv, weights=w * pos[:, 0], minlength=k),
                     np.bincount(inv, weights=w * pos[:, 1], minlength=k)], axis=1) / mass[:, None]
    dev = pos - mean[inv]
    outer = dev[:, :, None] * dev[:, None, :]
    if cfg.probabilistic:
        outer = outer + covs
    scatter = np.zeros((k, 2, 2))
    np.add.at(scatter, inv, w[:, None, None] * outer)
    cov = scatter / mass[:, None, None]

    keep = counts >= cfg.min_points_per_cell
    cov_r, inv_r = regularize(cov[keep], cfg.cov_condition_cap) if keep.any() else (np.zeros((0, 2, 2)),) * 2
    return NdtLayer(np.asarray(offset, dtype=float), uniq[keep], decode_keys(uniq[keep]), mean[keep],
                    cov_r, inv_r, mass[keep], counts[keep])


def build_ndt_map(submap: Submap, cfg: NdtConfig) -> NdtMap:
    """Per-cell weighted mean and covariance on four half-cell-offset grids.

    Cell covariance is ``sum w_i [(x_i - mu)(x_i - mu)^T + C_i] / sum w_i``
    with ``w_i`` the power-shifted weight; points whose weight clamps to zero
    are ignored. Raises :class:`EmptyMap` when no cell has enough points.
    """
    if len(submap) == 0:
        raise EmptyMap("submap is empty")
    w = submap_weights(submap, cfg.shift_s)
    live = w > 0
    pos, w, covs = submap.positions[live], w[live], submap.covs[live]
    if len(pos) == 0:
        raise EmptyMap("every point weight is zero after power shifting")
    layers = [_build_layer(pos, w, covs, np.array(o) * cfg.grid_size, cfg) for o in LAYER_OFFSETS]
    ndt = NdtMap(cfg.grid_size, layers, len(submap))
    if ndt.cell_count == 0:
        raise EmptyMap(f"no cell with >= {cfg.min_points_per_cell} points at grid {cfg.grid_size} m")
    return ndt
