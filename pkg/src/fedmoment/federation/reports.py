"""
CSV forms of round reports and the group-count tradeoff.

rounds.csv columns: round, simulated_time, R(1,0.3), R(1,0.5), R(1,0.7),
a_0 .. a_{C-1}. Reals are written with 6 decimals, so equal seeds give
byte-identical files.
"""

from __future__ import annotations

import csv
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import TextIO

from fedmoment.federation import RoundReport, SchedulingError, make_groups, simulate_time
from fedmoment.metrics import REPORT_THRESHOLDS


@dataclass(frozen=True)
class TradeoffRow:
    num_groups: int
    rounds_needed: int
    total_time: float
    ratio: float


def _fixed(value: float) -> str:
    return f'{value:.6f}'


def rounds_header(num_clients: int) -> list[str]:
    return (
        ['round', 'simulated_time']
        + [f'R(1,{m})' for m in REPORT_THRESHOLDS]
        + [f'a_{k}' for k in range(num_clients)]
    )


def write_rounds_csv(reports: Sequence[RoundReport], num_clients: int, stream: TextIO) -> None:
    """Clients absent from a round are written with attention 0."""
    writer = csv.writer(stream, lineterminator='\n')
    writer.writerow(rounds_header(num_clients))
    for report in reports:
        row = [str(report.round_index), _fixed(report.simulated_time)]
        row.extend(_fixed(report.global_metrics[m]) for m in REPORT_THRESHOLDS)
        row.extend(_fixed(report.attention(k)) for k in range(num_clients))
        writer.writerow(row)


def tradeoff_rows(
    C: int,
    u: float,
    rounds_needed: Mapping[int, int],
    seed: int = 0,
) -> list[TradeoffRow]:
    """
    Total simulated time to convergence per group count, relative to the
    fully parallel G = C case.
    """
    if C not in rounds_needed:
        raise SchedulingError(f'The tradeoff needs the fully parallel case G={C}')
    totals = {
        G: rounds * simulate_time(make_groups(C, G, seed), u)
        for G, rounds in rounds_needed.items()
    }
    reference = totals[C]
    return [
        TradeoffRow(G, rounds_needed[G], totals[G], totals[G] / reference)
        for G in sorted(totals)
    ]


def write_tradeoff_csv(rows: Sequence[TradeoffRow], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator='\n')
    writer.writerow(['G', 'rounds_needed', 'total_time', 'ratio'])
    for row in rows:
        writer.writerow([row.num_groups, row.rounds_needed, _fixed(row.total_time), f'{row.ratio:.2f}'])
