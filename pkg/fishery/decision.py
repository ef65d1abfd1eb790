import logging
from dataclasses import asdict, dataclass
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .errors import ValidationError
from .utils import Block, block_label

logger = logging.getLogger(__name__)


class ProtocolMode(str, Enum):
    WITH_REDISTRIBUTION = "with_redistribution"
    WITHOUT_REDISTRIBUTION = "without_redistribution"


def evaluate_merge(mode: ProtocolMode, merged_obj: float, obj_m: float, obj_n: float,
                   member_shares: Optional[Sequence[float]] = None) -> bool:
    """
    Merge condition for coalitions m and n.

    With redistribution the merged optimum must cover both standalone optima;
    without it, each side's own catch inside the merged coalition must cover
    its standalone optimum.
    """
    mode = ProtocolMode(mode)
    if mode == ProtocolMode.WITH_REDISTRIBUTION:
        return merged_obj >= obj_m + obj_n
    if member_shares is None or len(member_shares) != 2:
        raise ValidationError("member shares of both sides are required without redistribution")
    share_m, share_n = member_shares
    return share_m >= obj_m and share_n >= obj_n


def evaluate_split(mode: ProtocolMode, merged_obj: float, obj_m: float, obj_n: float,
                   member_shares: Optional[Sequence[float]] = None) -> bool:
    """Split condition: the exact complement of the merge condition"""
    return not evaluate_merge(mode, merged_obj, obj_m, obj_n, member_shares)


def merge_ratios(obj_m: float, obj_n: float, size_m: int = 1, size_n: int = 1) -> Tuple[float, float]:
    """Attribution ratios (r_m, r_n) recorded when m and n merge"""
    total = obj_m + obj_n
    if total > 0 and obj_m >= 0 and obj_n >= 0:
        r_m = obj_m / total
    else:
        # no predicted catch on either side: fall back to head count
        r_m = size_m / (size_m + size_n)
    return r_m, 1.0 - r_m


@dataclass(frozen=True)
class DecisionRecord:
    epoch: int
    day: int
    kind: str
    structure: str
    candidate: str
    part_m: str
    part_n: str
    merged_obj: float
    obj_m: float
    obj_n: float
    share_m: float
    share_n: float
    margin: float
    accepted: bool
    note: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


class DecisionLog:
    """Append-only record of every merge/split candidate that was evaluated"""

    def __init__(self):
        self._records: List[DecisionRecord] = []

    def append(self, record: DecisionRecord) -> None:
        self._records.append(record)

    def extend(self, records: Sequence[DecisionRecord]) -> None:
        self._records.extend(records)

    @property
    def records(self) -> Tuple[DecisionRecord, ...]:
        return tuple(self._records)

    def accepted(self) -> List[DecisionRecord]:
        return [r for r in self._records if r.accepted]

    def to_rows(self) -> List[Dict[str, Any]]:
        return [r.to_dict() for r in self._records]

    def __len__(self) -> int:
        return len(self._records)


class DecisionEngine:
    """
    Applies the merge/split conditions of one protocol mode
    and logs every evaluation
    """

    def __init__(self, mode: ProtocolMode, log: Optional[DecisionLog] = None):
        self.mode = ProtocolMode(mode)
        self.log = log if log is not None else DecisionLog()

    def margin(self, merged_obj: float, obj_m: float, obj_n: float,
               shares: Tuple[float, float]) -> float:
        """Slack of the merge condition; non-negative means merge"""
        if self.mode == ProtocolMode.WITH_REDISTRIBUTION:
            return merged_obj - (obj_m + obj_n)
        return min(shares[0] - obj_m, shares[1] - obj_n)

    def merge_decision(self, *, epoch: int, day: int, structure: str, part_m: Block, part_n: Block,
                       merged_obj: float, obj_m: float, obj_n: float,
                       shares: Tuple[float, float]) -> DecisionRecord:
        accepted = evaluate_merge(self.mode, merged_obj, obj_m, obj_n, shares)
        return self._build_record("merge", epoch, day, structure, part_m, part_n,
                                  merged_obj, obj_m, obj_n, shares, accepted)

    def split_decision(self, *, epoch: int, day: int, structure: str, part_m: Block, part_n: Block,
                       merged_obj: float, obj_m: float, obj_n: float,
                       shares: Tuple[float, float], note: str = "") -> DecisionRecord:
        accepted = evaluate_split(self.mode, merged_obj, obj_m, obj_n, shares)
        return self._build_record("split", epoch, day, structure, part_m, part_n,
                                  merged_obj, obj_m, obj_n, shares, accepted, note)

    def cluster_record(self, *, epoch: int, day: int, before: str, after: str,
                       previous: float, value: float) -> DecisionRecord:
        """Clustering step: accepted only when the predicted catch rises"""
        nan = float("nan")
        record = DecisionRecord(
            epoch=epoch, day=day, kind="cluster", structure=before, candidate=after,
            part_m="", part_n="", merged_obj=float(value), obj_m=float(previous), obj_n=nan,
            share_m=nan, share_n=nan, margin=float(value - previous),
            accepted=bool(value > previous),
        )
        logger.debug("Epoch %d: cluster %s -> %s (margin %.3f)", epoch, before, after, record.margin)
        return record

    def failure(self, *, kind: str, epoch: int, day: int, structure: str,
                part_m: Block, part_n: Block, reason: str) -> DecisionRecord:
        """A candidate whose solve failed counts as rejected"""
        nan = float("nan")
        record = DecisionRecord(
            epoch=epoch, day=day, kind=kind, structure=structure,
            candidate=block_label(tuple(sorted(part_m + part_n))),
            part_m=block_label(part_m), part_n=block_label(part_n),
            merged_obj=nan, obj_m=nan, obj_n=nan, share_m=nan, share_n=nan,
            margin=nan, accepted=False, note=f"solver failure: {reason}",
        )
        logger.warning("Epoch %d: %s candidate %s rejected after solver failure: %s",
                       epoch, kind, record.candidate, reason)
        self.log.append(record)
        return record

    def _build_record(self, kind: str, epoch: int, day: int, structure: str,
                      part_m: Block, part_n: Block, merged_obj: float, obj_m: float,
                      obj_n: float, shares: Tuple[float, float], accepted: bool,
                      note: str = "") -> DecisionRecord:
        record = DecisionRecord(
            epoch=epoch,
            day=day,
            kind=kind,
            structure=structure,
            candidate=block_label(tuple(sorted(part_m + part_n))),
            part_m=block_label(part_m),
            part_n=block_label(part_n),
            merged_obj=float(merged_obj),
            obj_m=float(obj_m),
            obj_n=float(obj_n),
            share_m=float(shares[0]),
            share_n=float(shares[1]),
            margin=float(self.margin(merged_obj, obj_m, obj_n, shares)),
            accepted=bool(accepted),
            note=note,
        )
        self.log.append(record)
        if accepted:
            logger.info("Epoch %d: %s %s + %s accepted (margin %.3f)",
                        epoch, kind, record.part_m, record.part_n, record.margin)
        else:
            logger.debug("Epoch %d: %s %s + %s rejected (margin %.3f)",
                         epoch, kind, record.part_m, record.part_n, record.margin)
        return record
