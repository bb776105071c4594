"""Hotspot clustering: DBSCAN over haversine distance, cluster centers, sampling.

The clustering is classic DBSCAN (seed scan in input order, FIFO expansion,
border points claimed by the first core point that reaches them) with eps in
meters. Neighbor queries go through a lat/lon grid index that only pre-filters
candidates; membership is always decided by the exact haversine distance.
"""

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import SamplingExhausted
from .events import AccidentEvent
from .geo import EARTH_RADIUS_M, haversine_m

NOISE = -1
_UNVISITED = -2

# Meters per degree of latitude on the mean sphere.
_M_PER_DEG = math.pi * EARTH_RADIUS_M / 180.0


@dataclass(frozen=True)
class ClusterParams:
    eps_meters: float = 100.0
    min_samples: int = 5

    def __post_init__(self):
        if self.eps_meters <= 0:
            raise ValueError("eps_meters must be positive")
        if self.min_samples < 1:
            raise ValueError("min_samples must be >= 1")


@dataclass(frozen=True)
class HotspotCluster:
    """A hotspot: cluster members plus their unweighted mean location.

    ``radius_m`` is derived metadata (max member distance from the center); a
    hotspot is treated as an area, and this is the radius actually observed.
    """

    cluster_id: int
    member_ids: list[str]
    center_latitude: float
    center_longitude: float
    radius_m: float = 0.0

    @property
    def member_count(self) -> int:
        return len(self.member_ids)


@dataclass(frozen=True)
class BBox:
    min_lat: float
    min_lon: float
    max_lat: float
    max_lon: float

    def __post_init__(self):
        if not (self.min_lat < self.max_lat and self.min_lon < self.max_lon):
            raise ValueError("bbox is degenerate")


class _GridIndex:
    """Uniform lat/lon grid; a 3x3 cell neighborhood covers every eps-ball."""

    def __init__(self, lats: np.ndarray, lons: np.ndarray, eps_m: float):
        self.lats = lats
        self.lons = lons
        self.eps_m = eps_m
        self.cell_lat = eps_m / _M_PER_DEG
        max_abs_lat = float(np.max(np.abs(lats))) if len(lats) else 0.0
        # Longitude degrees shrink with cos(lat); near the poles the grid
        # degenerates, so fall back to scanning everything.
        self.degenerate = max_abs_lat + self.cell_lat >= 85.0
        if self.degenerate:
            return
        min_cos = math.cos(math.radians(max_abs_lat + self.cell_lat))
        self.cell_lon = eps_m / (_M_PER_DEG * min_cos)
        self.cells: dict[tuple[int, int], list[int]] = defaultdict(list)
        for i in range(len(lats)):
            self.cells[self._key(lats[i], lons[i])].append(i)

    def _key(self, lat: float, lon: float) -> tuple[int, int]:
        return (int(math.floor(lat / self.cell_lat)), int(math.floor(lon / self.cell_lon)))

    def neighbors(self, i: int) -> list[int]:
        """Indices within eps of point i (inclusive of i), ascending."""
        if self.degenerate:
            candidates = np.arange(len(self.lats))
        else:
            ki, kj = self._key(self.lats[i], self.lons[i])
            candidates = []
            for di in (-1, 0, 1):
                for dj in (-1, 0, 1):
                    candidates.extend(self.cells.get((ki + di, kj + dj), ()))
            candidates = np.asarray(sorted(candidates), dtype=int)
        dists = haversine_m(self.lats[i], self.lons[i], self.lats[candidates], self.lons[candidates])
        return [int(c) for c in candidates[dists <= self.eps_m]]


def dbscan(events: Sequence[AccidentEvent], params: ClusterParams) -> list[int]:
    """Label each event with a cluster id (>= 0) or NOISE (-1).

    A core point has >= min_samples neighbors within eps_meters, itself
    included; density-reachable points share its cluster. Neighbor lists are
    used in ascending index order, so labeling is deterministic for a given
    input order.
    """
    if not events:
        raise ValueError("events must be non-empty")
    lats = np.array([e.latitude for e in events], dtype=float)
    lons = np.array([e.longitude for e in events], dtype=float)
    index = _GridIndex(lats, lons, params.eps_meters)

    labels = [_UNVISITED] * len(events)
    next_cluster = 0
    for i in range(len(events)):
        if labels[i] != _UNVISITED:
            continue
        neighbors = index.neighbors(i)
        if len(neighbors) < params.min_samples:
            labels[i] = NOISE
            continue
        labels[i] = next_cluster
        queue = list(neighbors)
        qi = 0
        while qi < len(queue):
            j = queue[qi]
            qi += 1
            if labels[j] == NOISE:
                labels[j] = next_cluster  # border point, previously rejected as seed
            if labels[j] != _UNVISITED:
                continue
            labels[j] = next_cluster
            j_neighbors = index.neighbors(j)
            if len(j_neighbors) >= params.min_samples:
                queue.extend(j_neighbors)
        next_cluster += 1
    return labels


def cluster_centers(events: Sequence[AccidentEvent], labels: Sequence[int]) -> list[HotspotCluster]:
    """One HotspotCluster per non-noise label; centers are plain coordinate means."""
    if len(events) != len(labels):
        raise ValueError("labels do not match events")
    members: dict[int, list[AccidentEvent]] = defaultdict(list)
    for event, label in zip(events, labels):
        if label != NOISE:
            members[label].append(event)
    clusters = []
    for cluster_id in sorted(members):
        group = members[cluster_id]
        center_lat = float(np.mean([e.latitude for e in group]))
        center_lon = float(np.mean([e.longitude for e in group]))
        radius = float(
            np.max(haversine_m(center_lat, center_lon, [e.latitude for e in group], [e.longitude for e in group]))
        )
        clusters.append(
            HotspotCluster(
                cluster_id=cluster_id,
                member_ids=[e.event_id for e in group],
                center_latitude=center_lat,
                center_longitude=center_lon,
                radius_m=radius,
            )
        )
    return clusters


def sample_non_hotspots(
    bbox: BBox,
    clusters: Sequence[HotspotCluster],
    n: int,
    min_distance_meters: float,
    rng_seed: int,
    max_attempts: Optional[int] = None,
) -> list[tuple[float, float]]:
    """n points uniform in bbox, each >= min_distance_meters from every center.

    Rejection sampling, deterministic per seed. Raises SamplingExhausted when
    the attempt budget (default 1000 per requested point) runs out, which
    signals a bbox saturated by hotspot exclusion disks.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if n == 0:
        return []
    budget = max_attempts if max_attempts is not None else 1000 * n
    center_lats = np.array([c.center_latitude for c in clusters], dtype=float)
    center_lons = np.array([c.center_longitude for c in clusters], dtype=float)
    rng = np.random.default_rng(rng_seed)

    points: list[tuple[float, float]] = []
    attempts = 0
    while len(points) < n:
        if attempts >= budget:
            raise SamplingExhausted(
                f"placed {len(points)}/{n} points in {attempts} attempts; bbox likely saturated"
            )
        attempts += 1
        lat = float(rng.uniform(bbox.min_lat, bbox.max_lat))
        lon = float(rng.uniform(bbox.min_lon, bbox.max_lon))
        if len(center_lats) and float(np.min(haversine_m(lat, lon, center_lats, center_lons))) < min_distance_meters:
            continue
        points.append((lat, lon))
    return points


def clusters_to_geojson(clusters: Sequence[HotspotCluster]) -> dict:
    """FeatureCollection of Point features (GeoJSON order: [lon, lat])."""
    return {
        "type": "FeatureCollection",
        "features": [
            {
                "type": "Feature",
                "geometry": {"type": "Point", "coordinates": [c.center_longitude, c.center_latitude]},
                "properties": {
                    "cluster_id": c.cluster_id,
                    "member_ids": list(c.member_ids),
                    "member_count": c.member_count,
                    "radius_m": c.radius_m,
                },
            }
            for c in clusters
        ],
    }


def write_geojson(clusters: Sequence[HotspotCluster], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(clusters_to_geojson(clusters), fh, indent=2)


def write_csv(clusters: Sequence[HotspotCluster], path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["cluster_id", "lat", "lon", "count"])
        for c in clusters:
            writer.writerow([c.cluster_id, c.center_latitude, c.center_longitude, c.member_count])
