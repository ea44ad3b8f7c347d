"""Gravity-model traffic matrices and the deterministic packet arrival law.

The matrix is the outer product of an ingress and an egress probability
vector, scaled to the configured total volume. Self-traffic is removed
and the remaining mass renormalized so the off-diagonal sum equals the
total volume exactly.

The exponential strategy rescales populations to [0, 1] before
exponentiation: raw populations overflow e**x at city scale, and the
rescaling preserves the intended ordering (larger gaps, exponentially
larger shares).
"""
import numpy as np

LINEAR = "linear"
EXPONENTIAL = "exponential"
STRATEGIES = (LINEAR, EXPONENTIAL)


class TrafficError(ValueError):
    pass


class TrafficMatrix:
    """City-to-city offered rates in bit/s, zero diagonal."""

    def __init__(self, cities: list[str], rates: np.ndarray, total_volume: float):
        self.cities = list(cities)
        self.rates = rates
        self.total_volume = total_volume
        self.index = {c: i for i, c in enumerate(self.cities)}

    def rate(self, i: int, j: int) -> float:
        return float(self.rates[i, j])


def gravity_vector(populations: list[float], strategy: str = LINEAR) -> np.ndarray:
    """Probability share per city from its population."""
    if len(populations) < 2:
        raise TrafficError(f"need at least 2 cities, got {len(populations)}")
    pop = np.asarray(populations, dtype=float)
    if np.any(pop <= 0):
        raise TrafficError("populations must be positive")
    if strategy == LINEAR:
        vec = pop / pop.sum()
    elif strategy == EXPONENTIAL:
        scaled = pop / pop.max()
        e = np.exp(scaled)
        vec = e / e.sum()
    else:
        raise TrafficError(f"unknown strategy {strategy!r}; choose from {STRATEGIES}")
    return vec


def traffic_matrix(p_in: np.ndarray, p_out: np.ndarray,
                   total_volume: float, cities: list[str] | None = None
                   ) -> TrafficMatrix:
    """Outer-product matrix scaled to total_volume, diagonal removed."""
    p_in = np.asarray(p_in, dtype=float)
    p_out = np.asarray(p_out, dtype=float)
    if p_in.shape != p_out.shape or p_in.ndim != 1:
        raise TrafficError(
            f"vector shape mismatch: {p_in.shape} vs {p_out.shape}")
    for name, v in (("p_in", p_in), ("p_out", p_out)):
        if abs(v.sum() - 1.0) > 1e-9:
            raise TrafficError(f"{name} sums to {v.sum()}, not 1")
    if total_volume <= 0:
        raise TrafficError(f"total_volume must be positive, got {total_volume}")

    rates = np.outer(p_in, p_out) * total_volume
    np.fill_diagonal(rates, 0.0)
    mass = rates.sum()
    if mass <= 0:
        raise TrafficError("all traffic fell on the diagonal")
    rates *= total_volume / mass
    k = len(p_in)
    return TrafficMatrix(cities=cities or [str(i) for i in range(k)],
                         rates=rates, total_volume=total_volume)


def interarrival(m: TrafficMatrix, i: int, j: int, packet_size: float
                 ) -> float | None:
    """Seconds between packets for pair (i, j); None when the pair is idle."""
    if i == j:
        raise TrafficError("no self-traffic pairs")
    r = m.rate(i, j)
    if r <= 0.0:
        return None
    return packet_size / r


def launch_phase(i: int, j: int, k: int, period: float) -> float:
    """First-launch offset for pair (i, j), staggering pairs to avoid
    synchronized bursts."""
    return (i * k + j) / (k * k) * period
