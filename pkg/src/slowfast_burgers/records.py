"""Run records: a versioned, self-describing text format plus CSV summaries.

A record file is byte-deterministic given the plan and seed (no timestamps,
canonical JSON, repr-round-trip floats), which is what makes repeated runs
comparable bit for bit.  Each output directory keeps an append-only ledger
of the records written into it.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

__all__ = [
    "StatRow", "FitRow", "RunRecord", "persist", "load", "write_csv",
    "plan_hash", "RecordParseError", "RecordVersionError",
    "CSV_COLUMNS", "LEDGER_NAME",
]

FORMAT_VERSION = 1
HEADER = f"slowfast-burgers run record v{FORMAT_VERSION}"
CSV_COLUMNS = ("epsilon", "delta", "statistic", "mean", "stderr", "n")
LEDGER_NAME = "runs.ledger"


class RecordParseError(ValueError):
    """Malformed record file; the message names the offending byte offset."""


class RecordVersionError(ValueError):
    """Record written by an incompatible format version."""


@dataclass(frozen=True)
class StatRow:
    epsilon: float
    delta: float
    statistic: str
    mean: float
    stderr: float
    n: int


@dataclass(frozen=True)
class FitRow:
    name: str
    estimate: float
    ci_low: float
    ci_high: float


@dataclass
class RunRecord:
    protocol: str
    plan: dict
    environment: dict
    stats: list = field(default_factory=list)     # [StatRow]
    fits: list = field(default_factory=list)      # [FitRow]
    flags: list = field(default_factory=list)     # [str] assertion failures
    notes: list = field(default_factory=list)     # [str] informational

    @property
    def plan_hash(self):
        return plan_hash(self.plan)

    def stat(self, statistic, epsilon=None):
        """Rows for one statistic, optionally filtered by epsilon."""
        rows = [r for r in self.stats if r.statistic == statistic]
        if epsilon is not None:
            rows = [r for r in rows if r.epsilon == epsilon]
        return rows

    def fit(self, name):
        for f in self.fits:
            if f.name == name:
                return f
        raise KeyError(name)

    @property
    def ok(self):
        return not self.flags


def _canon(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def plan_hash(plan):
    return hashlib.sha256(_canon(plan).encode()).hexdigest()[:16]


def dumps(record):
    lines = [HEADER,
             "[protocol]", record.protocol,
             "[plan]", _canon(record.plan),
             "[environment]", _canon(record.environment),
             "[stats]", "\t".join(CSV_COLUMNS)]
    for r in record.stats:
        lines.append("\t".join([repr(r.epsilon), repr(r.delta), r.statistic,
                                repr(r.mean), repr(r.stderr), str(r.n)]))
    lines.append("[fits]")
    for f in record.fits:
        lines.append("\t".join([f.name, repr(f.estimate),
                                repr(f.ci_low), repr(f.ci_high)]))
    lines.append("[flags]")
    lines.append(_canon(record.flags))
    lines.append("[notes]")
    lines.append(_canon(record.notes))
    lines.append("[end]")
    return "\n".join(lines) + "\n"


class _LineReader:
    """Line iterator tracking the byte offset of the current line."""

    def __init__(self, data):
        self.data = data
        self.pos = 0
        self.line_start = 0

    def next_line(self):
        if self.pos >= len(self.data):
            return None
        self.line_start = self.pos
        end = self.data.find(b"\n", self.pos)
        if end < 0:
            end = len(self.data)
        raw = self.data[self.pos:end]
        self.pos = end + 1
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise RecordParseError(
                f"undecodable bytes at byte {self.line_start + exc.start}") from exc

    def fail(self, message):
        raise RecordParseError(f"{message} at byte {self.line_start}")


def loads(text_or_bytes):
    data = text_or_bytes.encode() if isinstance(text_or_bytes, str) else text_or_bytes
    rd = _LineReader(data)
    first = rd.next_line()
    if first is None:
        raise RecordParseError("empty record at byte 0")
    if first != HEADER:
        if first.startswith("slowfast-burgers run record"):
            raise RecordVersionError(
                f"record version {first.rsplit(' ', 1)[-1]!r} needs migration; "
                f"this build reads v{FORMAT_VERSION}")
        rd.fail(f"bad header {first!r}")

    def expect(tag):
        line = rd.next_line()
        if line != tag:
            rd.fail(f"expected {tag!r}, found {line!r}")

    def json_line(tag):
        expect(tag)
        line = rd.next_line()
        if line is None:
            rd.fail(f"missing body for {tag}")
        try:
            return json.loads(line)
        except json.JSONDecodeError:
            rd.fail(f"invalid JSON in {tag}")

    expect("[protocol]")
    protocol = rd.next_line()
    if protocol is None:
        rd.fail("missing protocol name")
    plan = json_line("[plan]")
    environment = json_line("[environment]")

    expect("[stats]")
    head = rd.next_line()
    if head != "\t".join(CSV_COLUMNS):
        rd.fail("unexpected stats columns")
    stats = []
    while True:
        line = rd.next_line()
        if line is None:
            rd.fail("record truncated inside [stats]")
        if line == "[fits]":
            break
        parts = line.split("\t")
        if len(parts) != 6:
            rd.fail(f"stats row needs 6 fields, found {len(parts)}")
        try:
            stats.append(StatRow(float(parts[0]), float(parts[1]), parts[2],
                                 float(parts[3]), float(parts[4]), int(parts[5])))
        except ValueError:
            rd.fail("unparsable stats row")

    fits = []
    while True:
        line = rd.next_line()
        if line is None:
            rd.fail("record truncated inside [fits]")
        if line == "[flags]":
            break
        parts = line.split("\t")
        if len(parts) != 4:
            rd.fail(f"fit row needs 4 fields, found {len(parts)}")
        try:
            fits.append(FitRow(parts[0], float(parts[1]),
                               float(parts[2]), float(parts[3])))
        except ValueError:
            rd.fail("unparsable fit row")

    line = rd.next_line()
    if line is None:
        rd.fail("record truncated before flags body")
    try:
        flags = json.loads(line)
    except json.JSONDecodeError:
        rd.fail("invalid JSON in [flags]")
    notes = json_line("[notes]")
    expect("[end]")
    return RunRecord(protocol=protocol, plan=plan, environment=environment,
                     stats=stats, fits=fits, flags=flags, notes=notes)


def persist(record, path, csv=True, ledger=True):
    """Write a record (and its CSV summary), appending the directory ledger."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(dumps(record).encode())
    if csv:
        write_csv(record, path.with_suffix(".csv"))
    if ledger:
        with open(path.parent / LEDGER_NAME, "a") as fh:
            fh.write(f"{record.plan_hash}\t{record.protocol}\t{path.name}\n")
    return path


def load(path):
    return loads(Path(path).read_bytes())


def write_csv(record, path):
    """Summary table with the documented column schema."""
    lines = [",".join(CSV_COLUMNS)]
    for r in record.stats:
        lines.append(",".join([repr(r.epsilon), repr(r.delta), r.statistic,
                               repr(r.mean), repr(r.stderr), str(r.n)]))
    Path(path).write_text("\n".join(lines) + "\n")
