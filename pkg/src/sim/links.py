"""Link latency models, partitions and reconnect sampling."""
import json
import logging
import math
import random
from typing import Dict, List, Optional

from config import Config
from models.netsim_models import BlackoutInterval, LinkProfile, PartitionEvent, ReconnectProfile

logger = logging.getLogger(__name__)


class PartitionOverlap(ValueError):
    pass


def load_link_profiles(file_path: Optional[str] = None) -> Dict[str, LinkProfile]:
    """Load the named link profiles shipped with the repo"""
    with open(file_path or Config.PROFILES_FILE_PATH, 'r') as file:
        raw = json.load(file)
    return {name: LinkProfile(name=name, **fields) for name, fields in raw.items()}


def sample_latency(profile: LinkProfile, payload_len: int, rng: random.Random) -> int:
    """One-hop latency in whole microseconds, always >= 1"""
    jitter = 0.0
    if profile.has_jitter:
        jitter = rng.lognormvariate(math.log(profile.jitter_median_us), profile.jitter_sigma)
    duration = profile.base_latency_us + jitter + profile.per_byte_us * payload_len
    return max(1, round(duration))


def sample_reconnect(profile: ReconnectProfile, rng: random.Random) -> int:
    if profile.sigma_us <= 0:
        return max(1, profile.mean_us)
    return max(1, round(rng.gauss(profile.mean_us, profile.sigma_us)))


class Network:
    """Per-link latency sampling and partition bookkeeping.

    A message is judged at departure: if its link is down when it leaves,
    it is dropped; a delivery already in flight when a partition starts
    still arrives.
    """

    def __init__(self, profiles: Dict[str, LinkProfile], reconnect: ReconnectProfile,
                 rng: random.Random):
        self.profiles = profiles
        self.reconnect = reconnect
        self.rng = rng
        self.partitions: Dict[str, List[PartitionEvent]] = {}
        self.blackouts: List[BlackoutInterval] = []

    def is_down(self, link: Optional[str], t_us: int) -> bool:
        if link is None:
            return False
        return any(p.start_us <= t_us < p.link_down_until_us for p in self.partitions.get(link, []))

    def stable_at(self, link: Optional[str], t_us: int, window_us: int) -> int:
        """Earliest time >= t_us at which the link has been up for window_us"""
        if link is None or window_us <= 0:
            return t_us
        for p in self.partitions.get(link, []):
            if p.start_us <= t_us < p.link_down_until_us + window_us:
                return p.link_down_until_us + window_us
        return t_us

    def hop(self, link: Optional[str], payload_len: int) -> Optional[int]:
        """Latency for one hop, or None if the message is lost. Co-located nodes have no hop."""
        if link is None:
            return 0
        profile = self.profiles[link]
        if profile.loss_rate > 0 and self.rng.random() < profile.loss_rate:
            return None
        return sample_latency(profile, payload_len, self.rng)

    def sample_reconnect_delay(self) -> int:
        return sample_reconnect(self.reconnect, self.rng)

    def add_partition(self, partition: PartitionEvent) -> BlackoutInterval:
        if partition.link not in self.profiles:
            raise KeyError(f"unknown link {partition.link!r}")
        for existing in self.partitions.get(partition.link, []):
            if partition.start_us < existing.link_down_until_us and existing.start_us < partition.link_down_until_us:
                raise PartitionOverlap(f"partition on {partition.link!r} overlaps one starting at {existing.start_us}us")
        self.partitions.setdefault(partition.link, []).append(partition)
        interval = BlackoutInterval(link=partition.link, start_us=partition.start_us,
                                    link_up_us=partition.link_down_until_us)
        self.blackouts.append(interval)
        logger.info("partition on %s from %dus, link back at %dus",
                    partition.link, partition.start_us, partition.link_down_until_us)
        return interval


def apply_partition(world, partition: PartitionEvent) -> BlackoutInterval:
    """Schedule a partition on a link.

    Sessions on the link are parked at partition start; at link-up they begin
    reconnecting and the blackout closes when the last of them is restored.
    """
    interval = world.network.add_partition(partition)
    world.sim.schedule(partition.start_us, "partition_start",
                       lambda: world.on_link_down(partition.link),
                       link=partition.link, duration_us=partition.duration_us)
    world.sim.schedule(partition.link_down_until_us, "link_up",
                       lambda: world.on_link_up(partition.link, interval),
                       link=partition.link)
    return interval
