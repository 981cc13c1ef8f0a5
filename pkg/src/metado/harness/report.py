"""Result rows and per-instance rank tables."""
from __future__ import annotations

import csv
from collections import defaultdict
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from scipy.stats import rankdata


@dataclass
class ResultRow:
    instance_id: str
    algorithm: str
    run: int
    seed: int
    e_off: float
    e_rand: float
    rp: float
    rank: float = 0.0


ROW_FIELDS = [f.name for f in fields(ResultRow)]


class MissingCell(ValueError):
    pass


@dataclass
class RankTable:
    algorithms: list[str]
    instances: list[str]
    mean: dict[tuple[str, str], float]
    std: dict[tuple[str, str], float]
    rank: dict[tuple[str, str], float]
    average_rank: dict[str, float]

    def rows(self) -> list[dict]:
        out = []
        for inst in self.instances:
            row = {"instance_id": inst}
            for a in self.algorithms:
                row[f"{a}.mean"] = self.mean[inst, a]
                row[f"{a}.std"] = self.std[inst, a]
                row[f"{a}.rank"] = self.rank[inst, a]
            out.append(row)
        out.append({"instance_id": "average_rank", **{f"{a}.rank": self.average_rank[a] for a in self.algorithms}})
        return out

    def format(self) -> str:
        w = max(12, *(len(a) for a in self.algorithms))
        lines = ["instance".ljust(10) + "".join(a.rjust(w + 2) for a in self.algorithms)]
        for inst in self.instances:
            cells = "".join(f"{self.mean[inst, a]:.3e}({self.rank[inst, a]:g})".rjust(w + 2)
                            for a in self.algorithms)
            lines.append(inst.ljust(10) + cells)
        lines.append("avg rank".ljust(10) + "".join(f"{self.average_rank[a]:.4f}".rjust(w + 2)
                                                     for a in self.algorithms))
        return "\n".join(lines)


def rank_report(rows: list[ResultRow]) -> RankTable:
    """Mean/std of RP per cell, min-method ranks per instance, average rank per algorithm."""
    if not rows:
        raise MissingCell("no result rows")
    cells: dict[tuple[str, str], list[float]] = defaultdict(list)
    for r in rows:
        cells[r.instance_id, r.algorithm].append(r.rp)
    algorithms = sorted({a for _, a in cells})
    instances = sorted({i for i, _ in cells})
    missing = [(i, a) for i in instances for a in algorithms if (i, a) not in cells]
    if missing:
        raise MissingCell(f"no runs for {missing[:5]}")
    mean = {k: float(np.mean(v)) for k, v in cells.items()}
    std = {k: float(np.std(v)) for k, v in cells.items()}
    rank = {}
    for inst in instances:
        ranks = rankdata([mean[inst, a] for a in algorithms], method="min")
        rank.update({(inst, a): float(r) for a, r in zip(algorithms, ranks)})
    avg = {a: float(np.mean([rank[i, a] for i in instances])) for a in algorithms}
    return RankTable(algorithms, instances, mean, std, rank, avg)


def assign_ranks(rows: list[ResultRow]) -> list[ResultRow]:
    table = rank_report(rows)
    for r in rows:
        r.rank = table.rank[r.instance_id, r.algorithm]
    return rows


def write_rows(path, rows: list[ResultRow]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=ROW_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow(asdict(r))


def read_rows(path) -> list[ResultRow]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        if rd.fieldnames is None or set(ROW_FIELDS) - set(rd.fieldnames):
            raise ValueError(f"{path}: not a result-row CSV")
        return [ResultRow(r["instance_id"], r["algorithm"], int(r["run"]), int(r["seed"]), float(r["e_off"]),
                          float(r["e_rand"]), float(r["rp"]), float(r["rank"])) for r in rd]


def write_table(path, table: RankTable) -> None:
    rows = table.rows()
    names = ["instance_id"] + [f"{a}.{k}" for a in table.algorithms for k in ("mean", "std", "rank")]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=names, restval="")
        w.writeheader()
        w.writerows(rows)


def write_curve(path, curve: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["epoch", "instance_id", "return", "e_off"])
        w.writeheader()
        w.writerows(curve)


def read_csvs(paths) -> list[ResultRow]:
    rows = []
    for p in paths:
        rows.extend(read_rows(Path(p)))
    return rows
