"""Pesticide toxicity records: class mapping, normalization, name resolution."""

from __future__ import annotations

import csv
import enum
import io
import logging
import os
import tempfile
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable
from urllib.parse import quote

from .smiles import SmilesError, tokenize

log = logging.getLogger(__name__)

LIVESTOCK_MAX = 1000
AQUA_MAX = 16

DATASET_COLUMNS = ("name", "livestock_class", "aqua_class", "latitude", "longitude", "smiles")
REQUIRED_COLUMNS = DATASET_COLUMNS[:5]
LABEL_COLUMNS = ("livestock_raw", "aqua_raw", "livestock_norm", "aqua_norm")


class SchemaError(ValueError):
    pass


class ResolutionError(LookupError):
    def __init__(self, missing: Iterable[str], detail: str = ""):
        self.missing = list(missing)
        msg = "unresolved component(s): " + ", ".join(self.missing)
        super().__init__(msg + (f" ({detail})" if detail else ""))


class NetworkError(ResolutionError):
    def __init__(self, name: str, attempts: int, cause: Exception):
        self.attempts = attempts
        super().__init__([name], f"network failure after {attempts} attempts: {cause}")


class LivestockClass(enum.Enum):
    IA = "Ia"
    IB = "Ib"
    II = "II"
    III = "III"
    IV = "IV"
    UNCLASSIFIED = "Unclassified"

    @classmethod
    def parse(cls, text: str) -> "LivestockClass":
        key = text.strip().lower().removeprefix("class").strip()
        if key in ("", "-", "unclassified"):
            return cls.UNCLASSIFIED
        for member in cls:
            if member.value.lower() == key:
                return member
        raise ValueError(f"unknown livestock class {text!r}")


class AquaClass(enum.Enum):
    I = "I"  # noqa: E741
    II = "II"
    IIS = "IIs"
    III = "III"
    EXEMPT = "Exempt"

    @classmethod
    def parse(cls, text: str) -> "AquaClass":
        key = text.strip().lower().removeprefix("class").strip()
        key = key.replace(" ", "").replace("_", "")
        for member in cls:
            if member.value.lower() == key:
                return member
        raise ValueError(f"unknown aqua class {text!r}")


# Ia/Ib are not in the published mapping list; they share the top value.
_LIVESTOCK_SCALE = {
    LivestockClass.IA: 1000,
    LivestockClass.IB: 1000,
    LivestockClass.II: 1000,
    LivestockClass.III: 100,
    LivestockClass.IV: 10,
    LivestockClass.UNCLASSIFIED: 0,
}
_AQUA_SCALE = {
    AquaClass.I: 16,
    AquaClass.II: 4,
    AquaClass.IIS: 4,
    AquaClass.III: 1,
    AquaClass.EXEMPT: 0,
}


def map_livestock_class(c: LivestockClass) -> int:
    return _LIVESTOCK_SCALE[c]


def map_aqua_class(c: AquaClass) -> int:
    return _AQUA_SCALE[c]


def normalize(value: float, min_value: float, max_value: float) -> float:
    """Min-max scale ``value`` into [0, 1]."""
    if max_value <= min_value:
        raise ValueError(f"degenerate range [{min_value}, {max_value}]")
    if not min_value <= value <= max_value:
        raise ValueError(f"{value} outside [{min_value}, {max_value}]")
    return (value - min_value) / (max_value - min_value)


@dataclass(frozen=True)
class PesticideRecord:
    name: str
    livestock_class: LivestockClass
    aqua_class: AquaClass
    latitude: float | None = None
    longitude: float | None = None
    smiles: str | None = None

    def __post_init__(self):
        if not self.name.strip():
            raise ValueError("record name must be non-empty")
        if self.latitude is not None and not -90 <= self.latitude <= 90:
            raise ValueError(f"latitude {self.latitude} outside [-90, 90]")
        if self.longitude is not None and not -180 <= self.longitude <= 180:
            raise ValueError(f"longitude {self.longitude} outside [-180, 180]")

    @property
    def components(self) -> list[str]:
        return [part.strip() for part in self.name.split("+") if part.strip()]


@dataclass(frozen=True)
class ToxicityLabel:
    livestock_raw: int
    aqua_raw: int
    livestock_norm: float
    aqua_norm: float


def label_record(r: PesticideRecord) -> ToxicityLabel:
    lraw = map_livestock_class(r.livestock_class)
    araw = map_aqua_class(r.aqua_class)
    return ToxicityLabel(lraw, araw, normalize(lraw, 0, LIVESTOCK_MAX), normalize(araw, 0, AQUA_MAX))


@dataclass(frozen=True)
class DoseInputs:
    substance_mass_mg: float
    body_weight_kg: float = 1.0
    solution_volume_l: float = 1.0

    def __post_init__(self):
        for name in ("substance_mass_mg", "body_weight_kg", "solution_volume_l"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive, got {getattr(self, name)}")


def ld50(inputs: DoseInputs) -> float:
    """Lethal dose in mg per kg body weight."""
    return inputs.substance_mass_mg / inputs.body_weight_kg


def lc50(inputs: DoseInputs) -> float:
    """Lethal concentration in mg per litre."""
    return inputs.substance_mass_mg / inputs.solution_volume_l


# --------------------------------------------------------------------------
# Name -> SMILES resolution


def atomic_write_bytes(path: str | Path, data: bytes) -> None:
    """Write to a sibling temp file, then rename over ``path``."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def atomic_write_text(path: str | Path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


class SmilesCache:
    """Two-column ``name<TAB>smiles`` store; writes are serialized and atomic."""

    def __init__(self, path: str | Path | None = None, entries: dict[str, str] | None = None):
        self.path = Path(path) if path else None
        self._entries: dict[str, str] = dict(entries or {})
        self._lock = threading.Lock()
        if self.path and self.path.exists():
            for line in self.path.read_text(encoding="utf-8").splitlines():
                if line.strip():
                    name, smi = line.split("\t", 1)
                    self._entries.setdefault(name, smi.strip())

    def get(self, name: str) -> str | None:
        return self._entries.get(name)

    def put(self, name: str, smiles: str) -> None:
        with self._lock:
            self._entries[name] = smiles
            if self.path:
                body = "".join(f"{k}\t{v}\n" for k, v in sorted(self._entries.items()))
                atomic_write_text(self.path, body)

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)


PUBCHEM_BASE = "https://pubchem.ncbi.nlm.nih.gov"


@dataclass
class PubChemClient:
    """name -> canonical SMILES over PUG REST, with retries and backoff."""

    base_url: str = PUBCHEM_BASE
    retries: int = 3
    timeout: float = 10.0
    backoff: float = 0.5
    session: object = None
    sleep: Callable[[float], None] = field(default=time.sleep, repr=False)

    def url_for(self, name: str) -> str:
        return f"{self.base_url}/rest/pug/compound/name/{quote(name, safe='')}/property/CanonicalSMILES/TXT"

    def fetch(self, name: str) -> str | None:
        import requests

        session = self.session or requests.Session()
        last: Exception | None = None
        for attempt in range(1, self.retries + 1):
            try:
                resp = session.get(self.url_for(name), timeout=self.timeout)
                if resp.status_code == 404:
                    return None
                resp.raise_for_status()
                lines = [ln.strip() for ln in resp.text.splitlines() if ln.strip()]
                return lines[0] if lines else None
            except requests.RequestException as exc:
                last = exc
                log.warning("pubchem lookup %r failed (attempt %d): %s", name, attempt, exc)
                if attempt < self.retries:
                    self.sleep(self.backoff * 2 ** (attempt - 1))
        raise NetworkError(name, self.retries, last)


def resolve_smiles(
    name: str,
    cache: SmilesCache,
    network: str = "offline",
    client: PubChemClient | None = None,
) -> str:
    """Resolve a (possibly '+'-joined mixture) name to SMILES, components joined by '.'."""
    parts = [p.strip() for p in name.split("+") if p.strip()]
    if not parts:
        raise ValueError("name must be non-empty")
    found: dict[str, str] = {}
    missing = []
    for part in parts:
        hit = cache.get(part)
        if hit is None and network == "online":
            client = client or PubChemClient()
            hit = client.fetch(part)
            if hit is not None:
                try:
                    tokenize(hit)
                except SmilesError as exc:
                    raise ResolutionError([part], f"service returned untokenizable SMILES: {exc}")
                cache.put(part, hit)
        if hit is None:
            missing.append(part)
        else:
            found[part] = hit
    if missing:
        raise ResolutionError(missing)
    return ".".join(found[p] for p in parts)


# --------------------------------------------------------------------------
# Dataset files


@dataclass
class IngestResult:
    records: list[PesticideRecord]
    rows: list[int]
    rejects: list[tuple[int, str]]

    def rejects_report(self) -> str:
        return "".join(f"{row}\t{reason}\n" for row, reason in self.rejects)


def _opt_float(text: str | None) -> float | None:
    text = (text or "").strip()
    return float(text) if text else None


def ingest(path_or_text: str | Path | io.TextIOBase) -> IngestResult:
    """Read a dataset file.  Row numbers count the header as row 1."""
    if isinstance(path_or_text, (str, Path)):
        with open(path_or_text, newline="", encoding="utf-8") as fh:
            return ingest(io.StringIO(fh.read()))
    reader = csv.DictReader(path_or_text)
    header = [h.strip() for h in (reader.fieldnames or [])]
    for col in REQUIRED_COLUMNS:
        if col not in header:
            raise SchemaError(f"missing column {col!r} (row 1, header)")
    reader.fieldnames = header
    out = IngestResult([], [], [])
    for rowno, row in enumerate(reader, start=2):
        if None in row:
            raise SchemaError(f"row {rowno} has more fields than the header")
        try:
            rec = PesticideRecord(
                name=(row["name"] or "").strip(),
                livestock_class=LivestockClass.parse(row["livestock_class"] or ""),
                aqua_class=AquaClass.parse(row["aqua_class"] or ""),
                latitude=_opt_float(row["latitude"]),
                longitude=_opt_float(row["longitude"]),
                smiles=(row.get("smiles") or "").strip() or None,
            )
        except ValueError as exc:
            out.rejects.append((rowno, str(exc)))
            continue
        out.records.append(rec)
        out.rows.append(rowno)
    return out


def _fmt(x: float | None) -> str:
    return "" if x is None else repr(x)


def emit(records: Iterable[PesticideRecord], labels: Iterable[ToxicityLabel] | None = None) -> str:
    """Serialize records (and optionally their labels) in the dataset schema."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    records = list(records)
    labels = list(labels) if labels is not None else None
    w.writerow(DATASET_COLUMNS + (LABEL_COLUMNS if labels is not None else ()))
    for i, r in enumerate(records):
        row = [r.name, r.livestock_class.value, r.aqua_class.value,
               _fmt(r.latitude), _fmt(r.longitude), r.smiles or ""]
        if labels is not None:
            lab = labels[i]
            row += [lab.livestock_raw, lab.aqua_raw, repr(lab.livestock_norm), repr(lab.aqua_norm)]
        w.writerow(row)
    return buf.getvalue()


def read_labeled(path: str | Path) -> list[tuple[PesticideRecord, ToxicityLabel]]:
    """Read a file written by ``emit(records, labels)``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in DATASET_COLUMNS + LABEL_COLUMNS if c not in (reader.fieldnames or [])]
        if missing:
            raise SchemaError(f"labeled file lacks column(s) {', '.join(missing)}")
        out = []
        for rowno, row in enumerate(reader, start=2):
            try:
                rec = PesticideRecord(
                    row["name"], LivestockClass.parse(row["livestock_class"]),
                    AquaClass.parse(row["aqua_class"]), _opt_float(row["latitude"]),
                    _opt_float(row["longitude"]), row["smiles"] or None,
                )
                lab = ToxicityLabel(int(row["livestock_raw"]), int(row["aqua_raw"]),
                                    float(row["livestock_norm"]), float(row["aqua_norm"]))
            except (ValueError, TypeError) as exc:
                raise SchemaError(f"row {rowno}: {exc}") from exc
            if not (0 <= lab.livestock_norm <= 1 and 0 <= lab.aqua_norm <= 1):
                raise SchemaError(f"row {rowno}: labels outside [0, 1]")
            out.append((rec, lab))
    return out
