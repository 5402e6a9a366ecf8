import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional


@dataclass(frozen=True)
class LinkProfile:
    """Latency model for one hop between a node and the broker.

    jitter is lognormal with the given median and sigma; sigma == 0 disables
    jitter entirely.
    """
    name: str
    base_latency_us: int
    jitter_median_us: float = 0.0
    jitter_sigma: float = 0.0
    per_byte_us: float = 0.0
    loss_rate: float = 0.0
    description: str = ""

    def __post_init__(self):
        if min(self.base_latency_us, self.jitter_median_us, self.jitter_sigma, self.per_byte_us) < 0:
            raise ValueError(f"link profile {self.name!r}: values must be non-negative")
        if not 0.0 <= self.loss_rate <= 1.0:
            raise ValueError(f"link profile {self.name!r}: loss_rate must be in [0, 1]")

    @property
    def has_jitter(self) -> bool:
        return self.jitter_sigma > 0 and self.jitter_median_us > 0

    def expected_latency_us(self, payload_len: int) -> float:
        jitter = self.jitter_median_us * math.exp(self.jitter_sigma ** 2 / 2) if self.has_jitter else 0.0
        return self.base_latency_us + jitter + self.per_byte_us * payload_len


@dataclass(frozen=True)
class ReconnectProfile:
    """Client-side reconnect delay, normally distributed"""
    mean_us: int = 9_300
    sigma_us: int = 1_900


@dataclass(frozen=True)
class PartitionEvent:
    link: str
    start_us: int
    duration_us: int
    network_recovery_us: int = 0
    bridge_setup_us: int = 0

    def __post_init__(self):
        if self.duration_us <= 0:
            raise ValueError("partition duration must be > 0")
        if min(self.start_us, self.network_recovery_us, self.bridge_setup_us) < 0:
            raise ValueError("partition times must be non-negative")

    @property
    def link_down_until_us(self) -> int:
        return self.start_us + self.duration_us + self.network_recovery_us + self.bridge_setup_us


@dataclass
class BlackoutInterval:
    link: str
    start_us: int
    link_up_us: int
    end_us: Optional[int] = None
    reconnect_us: Optional[int] = None

    @property
    def duration_us(self) -> Optional[int]:
        return None if self.end_us is None else self.end_us - self.start_us


@dataclass(order=True)
class SimEvent:
    fire_at_us: int
    seq: int
    kind: str = field(compare=False)
    details: Dict[str, Any] = field(default_factory=dict, compare=False)
    action: Optional[Callable[[], None]] = field(default=None, compare=False, repr=False)
