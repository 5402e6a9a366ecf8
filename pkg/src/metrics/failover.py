from dataclasses import dataclass
from typing import Optional

from models.netsim_models import BlackoutInterval, PartitionEvent


@dataclass(frozen=True)
class FailoverDecomposition:
    """Phases of one blackout, in microseconds; total is end-to-end and equals their sum"""
    partition_us: int
    network_recovery_us: int
    bridge_setup_us: int
    reconnect_us: int
    total_blackout_us: int
    unaudited_actuations: int = 0

    @property
    def phases_sum_us(self) -> int:
        return self.partition_us + self.network_recovery_us + self.bridge_setup_us + self.reconnect_us

    @property
    def additive(self) -> bool:
        return self.phases_sum_us == self.total_blackout_us

    def to_dict(self) -> dict:
        return {
            "partition_s": self.partition_us / 1_000_000,
            "network_recovery_s": self.network_recovery_us / 1_000_000,
            "bridge_setup_s": self.bridge_setup_us / 1_000_000,
            "reconnect_ms": self.reconnect_us / 1_000,
            "total_blackout_s": self.total_blackout_us / 1_000_000,
            "total_blackout_us": self.total_blackout_us,
            "unaudited_actuations": self.unaudited_actuations,
        }


def decompose(partition: PartitionEvent, interval: BlackoutInterval,
              unaudited_actuations: int = 0) -> Optional[FailoverDecomposition]:
    """None while the blackout is still open"""
    if interval.end_us is None:
        return None
    return FailoverDecomposition(
        partition_us=partition.duration_us,
        network_recovery_us=partition.network_recovery_us,
        bridge_setup_us=partition.bridge_setup_us,
        reconnect_us=interval.reconnect_us or 0,
        total_blackout_us=interval.duration_us,
        unaudited_actuations=unaudited_actuations,
    )


def world_failovers(world):
    """One decomposition per closed blackout, in start order"""
    unaudited = world.unaudited_actuations()
    decompositions = []
    for interval in sorted(world.blackouts, key=lambda i: (i.start_us, i.link)):
        partition = next(p for p in world.network.partitions[interval.link] if p.start_us == interval.start_us)
        decomposition = decompose(partition, interval, unaudited)
        if decomposition is not None:
            decompositions.append(decomposition)
    return decompositions
