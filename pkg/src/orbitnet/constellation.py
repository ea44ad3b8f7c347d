"""Scenario construction: Walker-star generation, city/ground-station catalog.

A scenario bundles the satellite element sets with the ground segment
(cities hosting ground stations). Satellites are either generated
parametrically (circular orbits, uniform in-plane spacing, evenly spread
ascending nodes) or ingested from a TLE file.
"""
import math
from dataclasses import dataclass, field
from datetime import timedelta
from pathlib import Path

import yaml

from .astro import (
    CLOCK_EPOCH_UTC,
    EARTH_RADIUS_KM,
    EciPosition,
    GeodeticPoint,
    OrbitalElements,
    ground_position,
    has_line_of_sight,
    mean_motion_for_axis,
    parse_tle,
    separation,
)


class ScenarioError(ValueError):
    """Scenario file or constellation parameters failed validation."""


@dataclass(frozen=True)
class ConstellationParams:
    num_planes: int
    sats_per_plane: int
    inclination: float       # rad
    altitude: float          # km
    phase_factor: int = 0
    raan_spread: float = math.pi   # pi = polar star, 2*pi = delta pattern
    seam_enabled: bool = True

    def __post_init__(self):
        problems = []
        if self.num_planes < 1:
            problems.append(f"num_planes={self.num_planes} (must be >= 1)")
        if self.sats_per_plane < 1:
            problems.append(f"sats_per_plane={self.sats_per_plane} (must be >= 1)")
        if not 0.0 < self.inclination <= math.pi / 2 + 0.2:
            problems.append(f"inclination={self.inclination} rad (must be in (0, ~pi/2])")
        if self.altitude <= 0.0:
            problems.append(f"altitude={self.altitude} km (must be > 0)")
        if self.num_planes >= 1 and not 0 <= self.phase_factor < max(self.num_planes, 1):
            problems.append(
                f"phase_factor={self.phase_factor} (must be in [0, num_planes))")
        if problems:
            raise ScenarioError("invalid constellation parameters: " + "; ".join(problems))


@dataclass(frozen=True)
class City:
    id: str
    name: str
    location: GeodeticPoint
    population: float


@dataclass(frozen=True)
class Scenario:
    satellites: list[OrbitalElements]
    plane_of: dict[str, int]          # satellite id -> plane index
    slot_of: dict[str, int]           # satellite id -> slot index within plane
    num_planes: int
    seam_enabled: bool
    ground_stations: list[tuple[str, GeodeticPoint]]
    cities: list[City]
    city_to_gs: dict[str, str]
    params: ConstellationParams | None = None
    gs_location: dict[str, GeodeticPoint] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(
            self, "gs_location", {gid: loc for gid, loc in self.ground_stations})

    def satellites_in_plane(self, plane: int) -> list[OrbitalElements]:
        return [el for el in self.satellites if self.plane_of[el.satellite_id] == plane]


def _satellite_id(plane: int, slot: int) -> str:
    return f"S{plane:02d}-{slot:02d}"


def generate_walker_star(p: ConstellationParams, epoch: float = 0.0
                         ) -> list[OrbitalElements]:
    """Generate the parametric constellation: circular orbits, one element
    set per (plane, slot).

    Plane a gets RAAN a*(raan_spread/num_planes); slot s in plane a gets
    mean anomaly s*(2*pi/sats_per_plane) plus the inter-plane phase term
    a*phase_factor*(2*pi/(num_planes*sats_per_plane)).
    """
    a_km = EARTH_RADIUS_KM + p.altitude
    n = mean_motion_for_axis(a_km)
    d_raan = p.raan_spread / p.num_planes
    d_slot = 2.0 * math.pi / p.sats_per_plane
    d_phase = 2.0 * math.pi * p.phase_factor / (p.num_planes * p.sats_per_plane)

    elements = []
    for plane in range(p.num_planes):
        for slot in range(p.sats_per_plane):
            elements.append(OrbitalElements(
                satellite_id=_satellite_id(plane, slot),
                epoch=epoch,
                semi_major_axis=a_km,
                eccentricity=0.0,
                inclination=p.inclination,
                raan=plane * d_raan,
                arg_perigee=0.0,
                mean_anomaly_at_epoch=math.fmod(slot * d_slot + plane * d_phase,
                                                2.0 * math.pi),
                mean_motion=n,
            ))
    return elements


IRIDIUM_PARAMS = ConstellationParams(
    num_planes=6,
    sats_per_plane=11,
    inclination=math.radians(86.4),
    altitude=781.0,
    phase_factor=0,
)


_CONSTELLATION_KEYS = {"planes", "sats_per_plane", "inclination_deg", "altitude_km",
                       "phase_factor", "raan_spread_deg", "seam", "epoch", "tle_file"}
_CITY_KEYS = {"id", "name", "latitude_deg", "longitude_deg", "population"}
_GS_KEYS = {"id", "latitude_deg", "longitude_deg"}
_TOP_KEYS = {"constellation", "ground_stations", "cities", "city_to_gs"}


def _reject_unknown(mapping: dict, allowed: set, where: str):
    unknown = sorted(set(mapping) - allowed)
    if unknown:
        raise ScenarioError(f"{where}: unknown keys {unknown}")


def _load_tle_file(path: Path) -> list[OrbitalElements]:
    lines = [ln for ln in path.read_text().splitlines()
             if ln.strip() and not ln.lstrip().startswith("#")]
    elements = []
    i = 0
    while i < len(lines):
        if lines[i].startswith("1 "):
            record = "\n".join(lines[i:i + 2])
            i += 2
        else:
            record = "\n".join(lines[i:i + 3])
            i += 3
        elements.append(parse_tle(record))
    return elements


def _group_tle_planes(elements: list[OrbitalElements]
                      ) -> tuple[dict[str, int], dict[str, int], int]:
    """Assign plane/slot labels to ingested element sets by RAAN clustering."""
    raans = sorted({round(el.raan, 6) for el in elements})
    plane_index = {r: i for i, r in enumerate(raans)}
    plane_of, slot_of = {}, {}
    by_plane: dict[int, list[OrbitalElements]] = {}
    for el in elements:
        p = plane_index[round(el.raan, 6)]
        plane_of[el.satellite_id] = p
        by_plane.setdefault(p, []).append(el)
    for p, group in by_plane.items():
        group.sort(key=lambda el: (el.mean_anomaly_at_epoch, el.satellite_id))
        for s, el in enumerate(group):
            slot_of[el.satellite_id] = s
    return plane_of, slot_of, len(raans)


def load_scenario(path: str | Path) -> Scenario:
    """Load and validate a scenario file (see the repo docs for the format)."""
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ScenarioError(f"{path}: not valid YAML: {exc}") from exc
    return scenario_from_dict(raw, base_dir=path.parent, where=str(path))


def scenario_from_dict(raw, base_dir: Path | None = None,
                       where: str = "scenario") -> Scenario:
    """Validate and build a Scenario from already-parsed mapping data."""
    path = where
    if not isinstance(raw, dict):
        raise ScenarioError(f"{path}: top level must be a mapping")
    _reject_unknown(raw, _TOP_KEYS, str(path))

    con = raw.get("constellation")
    if not isinstance(con, dict):
        raise ScenarioError(f"{path}: missing 'constellation' section")
    _reject_unknown(con, _CONSTELLATION_KEYS, f"{path}: constellation")

    params = None
    if "tle_file" in con:
        tle_path = Path(con["tle_file"])
        if not tle_path.is_absolute():
            tle_path = (base_dir or Path.cwd()) / tle_path
        satellites = _load_tle_file(tle_path)
        plane_of, slot_of, num_planes = _group_tle_planes(satellites)
        seam_enabled = bool(con.get("seam", True))
    else:
        try:
            params = ConstellationParams(
                num_planes=int(con["planes"]),
                sats_per_plane=int(con["sats_per_plane"]),
                inclination=math.radians(float(con["inclination_deg"])),
                altitude=float(con["altitude_km"]),
                phase_factor=int(con.get("phase_factor", 0)),
                raan_spread=math.radians(float(con.get("raan_spread_deg", 180.0))),
                seam_enabled=bool(con.get("seam", True)),
            )
        except KeyError as exc:
            raise ScenarioError(
                f"{path}: constellation: missing required key {exc.args[0]!r}") from None
        satellites = generate_walker_star(params, epoch=float(con.get("epoch", 0.0)))
        plane_of = {el.satellite_id: int(el.satellite_id[1:3]) for el in satellites}
        slot_of = {el.satellite_id: int(el.satellite_id[4:6]) for el in satellites}
        num_planes = params.num_planes
        seam_enabled = params.seam_enabled

    cities_raw = raw.get("cities")
    if not isinstance(cities_raw, list) or len(cities_raw) < 2:
        raise ScenarioError(f"{path}: need at least 2 cities (traffic model requires pairs)")
    cities: list[City] = []
    seen_city_ids: set[str] = set()
    for idx, row in enumerate(cities_raw):
        where = f"{path}: cities[{idx}]"
        if not isinstance(row, dict):
            raise ScenarioError(f"{where}: expected a mapping")
        _reject_unknown(row, _CITY_KEYS, where)
        try:
            city = City(
                id=str(row["id"]),
                name=str(row.get("name", row["id"])),
                location=GeodeticPoint(
                    latitude=math.radians(float(row["latitude_deg"])),
                    longitude=math.radians(float(row["longitude_deg"])),
                ),
                population=float(row["population"]),
            )
        except KeyError as exc:
            raise ScenarioError(f"{where}: missing required key {exc.args[0]!r}") from None
        if city.population <= 0:
            raise ScenarioError(f"{where}: population must be > 0, got {city.population}")
        if city.id in seen_city_ids:
            raise ScenarioError(f"{where}: duplicate city id {city.id!r}")
        seen_city_ids.add(city.id)
        cities.append(city)

    gs_raw = raw.get("ground_stations")
    ground_stations: list[tuple[str, GeodeticPoint]] = []
    if gs_raw is None:
        # Default: each city hosts its own co-located ground station.
        for city in cities:
            ground_stations.append((f"gs-{city.id}", city.location))
        city_to_gs = {city.id: f"gs-{city.id}" for city in cities}
    else:
        if not isinstance(gs_raw, list) or not gs_raw:
            raise ScenarioError(f"{path}: ground_stations must be a non-empty list")
        seen_gs: set[str] = set()
        for idx, row in enumerate(gs_raw):
            where = f"{path}: ground_stations[{idx}]"
            if not isinstance(row, dict):
                raise ScenarioError(f"{where}: expected a mapping")
            _reject_unknown(row, _GS_KEYS, where)
            try:
                gid = str(row["id"])
                loc = GeodeticPoint(
                    latitude=math.radians(float(row["latitude_deg"])),
                    longitude=math.radians(float(row["longitude_deg"])),
                )
            except KeyError as exc:
                raise ScenarioError(
                    f"{where}: missing required key {exc.args[0]!r}") from None
            if gid in seen_gs:
                raise ScenarioError(f"{where}: duplicate ground station id {gid!r}")
            seen_gs.add(gid)
            ground_stations.append((gid, loc))
        mapping = raw.get("city_to_gs")
        if mapping is None:
            raise ScenarioError(
                f"{path}: city_to_gs is required when ground_stations are explicit")
        city_to_gs = {str(k): str(v) for k, v in mapping.items()}
        for city in cities:
            if city.id not in city_to_gs:
                raise ScenarioError(f"{path}: city {city.id!r} has no ground station mapping")
            if city_to_gs[city.id] not in seen_gs:
                raise ScenarioError(
                    f"{path}: city {city.id!r} maps to unknown ground station "
                    f"{city_to_gs[city.id]!r}")
    if "city_to_gs" in raw and gs_raw is None:
        raise ScenarioError(f"{path}: city_to_gs given without ground_stations")

    return Scenario(
        satellites=satellites,
        plane_of=plane_of,
        slot_of=slot_of,
        num_planes=num_planes,
        seam_enabled=seam_enabled,
        ground_stations=ground_stations,
        cities=cities,
        city_to_gs=city_to_gs,
        params=params,
    )


def nearest_satellite(gs: GeodeticPoint,
                      positions: list[tuple[str, EciPosition]],
                      t: float) -> str:
    """Closest satellite with line of sight to the ground point.

    Ties break toward the lowest satellite id. Raises LookupError when no
    satellite is above the horizon (the caller logs it and leaves the
    ground station without a GSL for the snapshot).
    """
    if not positions:
        raise ValueError("positions must be non-empty")
    here = ground_position(gs, t)
    best_id, best_dist = None, math.inf
    for sat_id, pos in sorted(positions):
        if not has_line_of_sight(here, pos):
            continue
        d = separation(here, pos)
        if d < best_dist:
            best_id, best_dist = sat_id, d
    if best_id is None:
        raise LookupError("no visible satellite")
    return best_id


# --- TLE emission (round-trips through astro.parse_tle) ------------------

def _with_checksum(line68: str) -> str:
    s = 0
    for c in line68:
        if c.isdigit():
            s += int(c)
        elif c == "-":
            s += 1
    return line68 + str(s % 10)


def format_tle(el: OrbitalElements, catalog_number: int) -> str:
    """Render an element set as a named 3-line TLE record."""
    moment = CLOCK_EPOCH_UTC + timedelta(seconds=el.epoch)
    year = moment.year % 100
    doy = (moment - moment.replace(month=1, day=1)).total_seconds() / 86400.0 + 1.0
    mm_rev_day = el.mean_motion * 86400.0 / (2.0 * math.pi)
    ecc7 = f"{el.eccentricity:.7f}"[2:9]

    line1 = (f"1 {catalog_number:05d}U 00000A   {year:02d}{doy:012.8f} "
             f" .00000000  00000-0  00000-0 0  999")
    line2 = (f"2 {catalog_number:05d} {math.degrees(el.inclination):8.4f} "
             f"{math.degrees(el.raan):8.4f} {ecc7} "
             f"{math.degrees(el.arg_perigee):8.4f} "
             f"{math.degrees(el.mean_anomaly_at_epoch):8.4f} "
             f"{mm_rev_day:11.8f}   10")
    assert len(line1) == 68 and len(line2) == 68, (len(line1), len(line2))
    return "\n".join([el.satellite_id, _with_checksum(line1), _with_checksum(line2)])


def write_tle_file(elements: list[OrbitalElements], path: str | Path):
    records = [format_tle(el, 10000 + i) for i, el in enumerate(elements)]
    Path(path).write_text("\n".join(records) + "\n")
