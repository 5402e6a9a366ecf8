"""Summary statistics over integer microsecond samples."""
import statistics
from dataclasses import dataclass
from typing import Iterable, List, Sequence

PERCENTILE_METHOD = "nearest-rank"


class EmptySamples(ValueError):
    pass


@dataclass(frozen=True)
class SummaryStats:
    n: int
    mean: float
    median: int
    p95: int
    p99: int
    stddev: float
    min: int
    max: int

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mean_us": round(self.mean, 3),
            "median_us": self.median,
            "p95_us": self.p95,
            "p99_us": self.p99,
            "stddev_us": round(self.stddev, 3),
            "min_us": self.min,
            "max_us": self.max,
        }


def nearest_rank(sorted_samples: Sequence[int], pct: int) -> int:
    """Order statistic at rank ceil(pct * n / 100), 1-based"""
    n = len(sorted_samples)
    rank = max(1, -(-(pct * n) // 100))
    return sorted_samples[rank - 1]


def summarize(samples: Iterable[int]) -> SummaryStats:
    ordered: List[int] = sorted(samples)
    if not ordered:
        raise EmptySamples("cannot summarize an empty sample list")
    return SummaryStats(
        n=len(ordered),
        # statistics.mean/pstdev are exact over ints until the final rounding
        mean=float(statistics.mean(ordered)),
        median=nearest_rank(ordered, 50),
        p95=nearest_rank(ordered, 95),
        p99=nearest_rank(ordered, 99),
        stddev=float(statistics.pstdev(ordered)),
        min=ordered[0],
        max=ordered[-1],
    )
