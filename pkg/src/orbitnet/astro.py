"""Orbital mechanics substrate: element sets, two-body propagation, geometry.

Positions are Earth-centered inertial (ECI), kilometers. The simulation
clock is absolute seconds with t=0 defined as the instant the ECI and
Earth-fixed frames coincide (TLE epochs are mapped onto this clock with
t=0 at 2000-01-01T00:00:00 UTC). Propagation is pure two-body Keplerian:
no J2, no drag. That keeps the motion exactly periodic and testable,
which matters more here than perturbation fidelity, since the topology
logic only consumes relative geometry over sub-hour windows.
"""
import math
from dataclasses import dataclass
from datetime import datetime, timedelta

EARTH_RADIUS_KM = 6378.137
EARTH_MU = 398600.4418          # km^3/s^2
EARTH_ROTATION_RATE = 7.2921159e-5  # rad/s
SPEED_OF_LIGHT_KM_S = 299792.458

# Epoch of the simulation clock: ECI and ECEF agree at t=0.
CLOCK_EPOCH_UTC = datetime(2000, 1, 1)

_KEPLER_TOL = 1e-10
_KEPLER_MAX_ITER = 50


class TleParseError(ValueError):
    """A TLE record failed structural or numeric validation."""


@dataclass(frozen=True)
class OrbitalElements:
    """Keplerian state of one satellite anchored at an epoch."""
    satellite_id: str
    epoch: float                 # s on the simulation clock
    semi_major_axis: float       # km
    eccentricity: float
    inclination: float           # rad
    raan: float                  # rad
    arg_perigee: float           # rad
    mean_anomaly_at_epoch: float  # rad
    mean_motion: float           # rad/s

    def __post_init__(self):
        if self.semi_major_axis <= EARTH_RADIUS_KM:
            raise ValueError(
                f"{self.satellite_id}: semi-major axis {self.semi_major_axis} km "
                f"must exceed the Earth radius {EARTH_RADIUS_KM} km")
        if not 0.0 <= self.eccentricity < 1.0:
            raise ValueError(
                f"{self.satellite_id}: eccentricity {self.eccentricity} outside [0, 1)")
        if self.mean_motion <= 0.0:
            raise ValueError(f"{self.satellite_id}: mean motion must be positive")

    @property
    def period(self) -> float:
        """Orbital period in seconds."""
        return 2.0 * math.pi / self.mean_motion


@dataclass(frozen=True)
class EciPosition:
    """Point in the Earth-centered inertial frame at time t."""
    x: float
    y: float
    z: float
    t: float

    @property
    def radius(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y + self.z * self.z)


@dataclass(frozen=True)
class GeodeticPoint:
    """Spherical-Earth surface point (altitude 0 for ground stations)."""
    latitude: float   # rad
    longitude: float  # rad
    altitude: float = 0.0  # km

    def __post_init__(self):
        if abs(self.latitude) > math.pi / 2 + 1e-12:
            raise ValueError(f"latitude {self.latitude} rad outside [-pi/2, pi/2]")
        if not -math.pi <= self.longitude < math.pi + 1e-12:
            raise ValueError(f"longitude {self.longitude} rad outside [-pi, pi)")


def mean_motion_for_axis(semi_major_axis: float) -> float:
    """Mean motion (rad/s) from the semi-major axis via Kepler's third law."""
    return math.sqrt(EARTH_MU / semi_major_axis ** 3)


def _tle_checksum(line: str) -> int:
    s = 0
    for c in line[:68]:
        if c.isdigit():
            s += int(c)
        elif c == "-":
            s += 1
    return s % 10


def _tle_field(line: str, lineno: int, start: int, end: int, kind, name: str):
    """Slice columns [start, end) (0-based) and convert, with located errors."""
    raw = line[start:end]
    try:
        return kind(raw)
    except ValueError:
        raise TleParseError(
            f"line {lineno} columns {start + 1}-{end}: "
            f"cannot parse {name} from {raw!r}") from None


def _tle_epoch_to_seconds(epoch_year: int, epoch_day: float) -> float:
    year = epoch_year + (2000 if epoch_year < 57 else 1900)
    moment = datetime(year, 1, 1) + timedelta(days=epoch_day - 1.0)
    return (moment - CLOCK_EPOCH_UTC).total_seconds()


def parse_tle(text: str) -> OrbitalElements:
    """Decode one TLE record (2 lines, or 3 with a leading name line).

    Mean motion is converted from rev/day to rad/s and the semi-major
    axis is derived from it via Kepler's third law. Eccentricity uses the
    implied-decimal convention of the format.
    """
    lines = [ln.rstrip("\r\n") for ln in text.splitlines() if ln.strip()]
    if len(lines) == 3:
        name, line1, line2 = lines[0].strip(), lines[1], lines[2]
    elif len(lines) == 2:
        name, (line1, line2) = "", lines
    else:
        raise TleParseError(f"expected 2 or 3 lines, got {len(lines)}")

    for lineno, line in ((1, line1), (2, line2)):
        if len(line) != 69:
            raise TleParseError(
                f"line {lineno} has length {len(line)}, expected 69 columns")
        if line[0] != str(lineno):
            raise TleParseError(
                f"line {lineno} column 1: expected {lineno!r}, found {line[0]!r}")
        if not line[68].isdigit() or _tle_checksum(line) != int(line[68]):
            raise TleParseError(
                f"line {lineno} column 69: checksum mismatch "
                f"(computed {_tle_checksum(line)}, stored {line[68]!r})")

    catalog = line1[2:7].strip()
    epoch_year = _tle_field(line1, 1, 18, 20, int, "epoch year")
    epoch_day = _tle_field(line1, 1, 20, 32, float, "epoch day")

    incl_deg = _tle_field(line2, 2, 8, 16, float, "inclination")
    raan_deg = _tle_field(line2, 2, 17, 25, float, "RAAN")
    ecc = _tle_field(line2, 2, 26, 33, lambda s: float("0." + s.strip()),
                     "eccentricity")
    argp_deg = _tle_field(line2, 2, 34, 42, float, "argument of perigee")
    ma_deg = _tle_field(line2, 2, 43, 51, float, "mean anomaly")
    mm_rev_day = _tle_field(line2, 2, 52, 63, float, "mean motion")
    if mm_rev_day <= 0:
        raise TleParseError(
            f"line 2 columns 53-63: mean motion {mm_rev_day} rev/day must be positive")

    mean_motion = mm_rev_day * 2.0 * math.pi / 86400.0
    semi_major_axis = (EARTH_MU / mean_motion ** 2) ** (1.0 / 3.0)

    return OrbitalElements(
        satellite_id=name or catalog,
        epoch=_tle_epoch_to_seconds(epoch_year, epoch_day),
        semi_major_axis=semi_major_axis,
        eccentricity=ecc,
        inclination=math.radians(incl_deg),
        raan=math.radians(raan_deg),
        arg_perigee=math.radians(argp_deg),
        mean_anomaly_at_epoch=math.radians(ma_deg),
        mean_motion=mean_motion,
    )


def solve_kepler(mean_anomaly: float, eccentricity: float) -> float:
    """Eccentric anomaly from Kepler's equation, Newton iteration."""
    M = math.fmod(mean_anomaly, 2.0 * math.pi)
    if M < 0.0:
        M += 2.0 * math.pi
    E = M if eccentricity < 0.8 else math.pi
    for _ in range(_KEPLER_MAX_ITER):
        delta = (E - eccentricity * math.sin(E) - M) / (1.0 - eccentricity * math.cos(E))
        E -= delta
        if abs(delta) < _KEPLER_TOL:
            return E
    raise ArithmeticError(
        f"Kepler solve did not converge (M={M}, e={eccentricity})")


def propagate(el: OrbitalElements, t: float) -> EciPosition:
    """Two-body ECI position of the satellite at absolute time t."""
    M = el.mean_anomaly_at_epoch + el.mean_motion * (t - el.epoch)
    E = solve_kepler(M, el.eccentricity)
    e = el.eccentricity
    # True anomaly and radius from the eccentric anomaly.
    nu = math.atan2(math.sqrt(1.0 - e * e) * math.sin(E), math.cos(E) - e)
    r = el.semi_major_axis * (1.0 - e * math.cos(E))

    u = el.arg_perigee + nu  # argument of latitude
    cos_u, sin_u = math.cos(u), math.sin(u)
    cos_raan, sin_raan = math.cos(el.raan), math.sin(el.raan)
    cos_i, sin_i = math.cos(el.inclination), math.sin(el.inclination)

    return EciPosition(
        x=r * (cos_raan * cos_u - sin_raan * sin_u * cos_i),
        y=r * (sin_raan * cos_u + cos_raan * sin_u * cos_i),
        z=r * (sin_u * sin_i),
        t=t,
    )


def ground_position(p: GeodeticPoint, t: float) -> EciPosition:
    """ECI position of a ground point, rotated with the Earth since t=0."""
    radius = EARTH_RADIUS_KM + p.altitude
    lon = p.longitude + EARTH_ROTATION_RATE * t
    cos_lat = math.cos(p.latitude)
    return EciPosition(
        x=radius * cos_lat * math.cos(lon),
        y=radius * cos_lat * math.sin(lon),
        z=radius * math.sin(p.latitude),
        t=t,
    )


def separation(a: EciPosition, b: EciPosition) -> float:
    """Euclidean distance in km between two simultaneous positions."""
    if a.t != b.t:
        raise ValueError(f"positions not simultaneous: {a.t} != {b.t}")
    dx, dy, dz = a.x - b.x, a.y - b.y, a.z - b.z
    return math.sqrt(dx * dx + dy * dy + dz * dz)


def has_line_of_sight(a: EciPosition, b: EciPosition,
                      atmosphere_margin: float = 0.0) -> bool:
    """True when the segment a-b clears the occluding Earth sphere.

    The test is the clamped projection of the origin onto the closed
    segment: visible iff that minimum distance is at least
    EARTH_RADIUS_KM + atmosphere_margin. A 1e-9 km slack keeps
    ground-station endpoints (which sit exactly on the sphere) visible
    whenever the other endpoint is above their horizon.
    """
    if a.t != b.t:
        raise ValueError(f"positions not simultaneous: {a.t} != {b.t}")
    occlusion = EARTH_RADIUS_KM + atmosphere_margin
    dx, dy, dz = b.x - a.x, b.y - a.y, b.z - a.z
    seg2 = dx * dx + dy * dy + dz * dz
    if seg2 == 0.0:
        return a.radius >= occlusion - 1e-9
    # Minimize |a + s*(b-a)| over s in [0, 1].
    s = -(a.x * dx + a.y * dy + a.z * dz) / seg2
    s = min(1.0, max(0.0, s))
    cx, cy, cz = a.x + s * dx, a.y + s * dy, a.z + s * dz
    return math.sqrt(cx * cx + cy * cy + cz * cz) >= occlusion - 1e-9
