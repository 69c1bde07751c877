"""OpenAerialMap catalog search, quality admission, and asset download.

Admission applies two strict gates: ground sampling distance strictly below
the threshold AND coverage strictly above the minimum area. Entries exactly
at a threshold are rejected. Catalog responses are parsed permissively
(unknown fields ignored) while required fields are validated strictly.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path

import requests

from wastemap.errors import (
    CatalogParseError,
    ConfigError,
    IngestError,
    IntegrityError,
    NotFoundError,
)
from wastemap.geo import geodesic_area_km2

DEFAULT_BASE_URL = "https://api.openaerialmap.org"
PAGE_SIZE = 100


@dataclass(frozen=True)
class AdmissionPolicy:
    """Quality gates: GSD strictly below max, coverage strictly above min."""

    max_gsd_m: float = 0.06
    min_area_km2: float = 1.0

    def __post_init__(self):
        if self.max_gsd_m <= 0 or self.min_area_km2 <= 0:
            raise ConfigError("admission thresholds must be strictly positive")


@dataclass(frozen=True)
class CatalogEntry:
    oam_id: str
    title: str
    gsd_m: float
    area_km2: float
    acquisition_date: str
    provider: str
    download_url: str
    footprint: tuple = ()
    area_source: str = "catalog"  # "catalog" or "computed"

    def to_sidecar(self) -> dict:
        return {
            "oam_id": self.oam_id,
            "title": self.title,
            "gsd_m": self.gsd_m,
            "area_km2": self.area_km2,
            "acquisition_date": self.acquisition_date,
            "provider": self.provider,
            "download_url": self.download_url,
            "area_source": self.area_source,
        }


def admit(entry: CatalogEntry, policy: AdmissionPolicy | None = None) -> tuple[bool, list[str]]:
    """True iff both gates pass; the reason list names every failed gate."""
    policy = policy or AdmissionPolicy()
    reasons = []
    if not entry.gsd_m < policy.max_gsd_m:
        reasons.append(
            f"gsd {entry.gsd_m} m not strictly below {policy.max_gsd_m} m"
        )
    if not entry.area_km2 > policy.min_area_km2:
        reasons.append(
            f"coverage {entry.area_km2} km2 not strictly above {policy.min_area_km2} km2"
        )
    return (not reasons, reasons)


def _require(doc: dict, *names):
    for name in names:
        if name in doc and doc[name] not in (None, ""):
            return doc[name]
    raise CatalogParseError(f"catalog entry missing required field {names[0]!r}")


def _footprint_ring(geom) -> tuple:
    if not geom:
        return ()
    if isinstance(geom, dict):
        gtype = geom.get("type")
        coords = geom.get("coordinates")
        if gtype == "Polygon" and coords:
            return tuple(tuple(pt[:2]) for pt in coords[0])
        if gtype == "MultiPolygon" and coords:
            return tuple(tuple(pt[:2]) for pt in coords[0][0])
    return ()


def parse_entry(doc: dict) -> CatalogEntry:
    """Map one catalog document onto CatalogEntry, strict on required fields."""
    oam_id = str(_require(doc, "_id", "oam_id", "id"))
    try:
        gsd = float(_require(doc, "gsd", "gsd_m"))
    except (TypeError, ValueError) as exc:
        raise CatalogParseError(f"entry {oam_id}: unparseable field 'gsd'") from exc
    if gsd <= 0:
        raise CatalogParseError(f"entry {oam_id}: field 'gsd' must be positive, got {gsd}")

    footprint = _footprint_ring(doc.get("geojson") or doc.get("footprint"))
    props = doc.get("properties") or {}
    area_source = "catalog"
    if "area_km2" in doc:
        area = float(doc["area_km2"])
    elif "area" in doc and doc["area"] is not None:
        # OAM convention: square meters
        area = float(doc["area"]) / 1e6
    elif footprint:
        area = geodesic_area_km2(footprint)
        area_source = "computed"
    else:
        raise CatalogParseError(f"entry {oam_id}: no area field and no footprint polygon")
    if area < 0:
        raise CatalogParseError(f"entry {oam_id}: negative area {area}")

    date = str(_require(doc, "acquisition_end", "acquisition_start", "acquisition_date"))
    url = str(_require(doc, "uuid", "download_url"))
    return CatalogEntry(
        oam_id=oam_id,
        title=str(doc.get("title", "")),
        gsd_m=gsd,
        area_km2=area,
        acquisition_date=date,
        provider=str(doc.get("provider", props.get("provider", ""))),
        download_url=url,
        footprint=footprint,
        area_source=area_source,
    )


class CatalogClient:
    """Thin HTTP client for the catalog metadata endpoint."""

    def __init__(
        self,
        base_url: str = DEFAULT_BASE_URL,
        session: requests.Session | None = None,
        retries: int = 3,
        backoff_s: float = 0.5,
        timeout_s: float = 30.0,
    ):
        self.base_url = base_url.rstrip("/")
        self.session = session or requests.Session()
        self.retries = retries
        self.backoff_s = backoff_s
        self.timeout_s = timeout_s

    def get_absolute(self, url: str, params: dict | None = None, stream: bool = False):
        last = None
        for attempt in range(self.retries):
            try:
                resp = self.session.get(url, params=params, timeout=self.timeout_s, stream=stream)
            except requests.RequestException as exc:
                last = exc
                time.sleep(self.backoff_s * (attempt + 1))
                continue
            if resp.status_code == 404:
                raise NotFoundError(f"{url} -> 404")
            if resp.status_code >= 500:
                last = IngestError(f"{url} -> {resp.status_code}")
                time.sleep(self.backoff_s * (attempt + 1))
                continue
            if resp.status_code != 200:
                raise IngestError(f"{url} -> {resp.status_code}")
            return resp
        raise IngestError(f"GET {url} failed after {self.retries} attempts: {last}")

    def _get(self, path: str, params: dict | None = None, stream: bool = False):
        return self.get_absolute(f"{self.base_url}{path}", params=params, stream=stream)

    def search(self, bbox: tuple[float, float, float, float]) -> list[dict]:
        """All catalog documents intersecting a (w, s, e, n) rectangle, paged."""
        w, s, e, n = bbox
        if not (w < e and s < n and -180 <= w <= 180 and -90 <= s <= 90):
            raise ConfigError(f"invalid bbox {bbox} (need w<e, s<n, lon/lat order)")
        docs: list[dict] = []
        page = 1
        while True:
            resp = self._get(
                "/meta",
                params={
                    "bbox": f"{w},{s},{e},{n}",
                    "limit": PAGE_SIZE,
                    "page": page,
                },
            )
            try:
                payload = resp.json()
            except ValueError as exc:
                raise CatalogParseError(f"catalog response is not JSON: {exc}") from exc
            results = payload.get("results")
            if results is None:
                raise CatalogParseError("catalog response missing field 'results'")
            docs.extend(results)
            if len(results) < PAGE_SIZE:
                return docs
            page += 1

    def get_by_id(self, oam_id: str) -> dict:
        resp = self._get(f"/meta/{oam_id}")
        try:
            payload = resp.json()
        except ValueError as exc:
            raise CatalogParseError(f"catalog response is not JSON: {exc}") from exc
        doc = payload.get("results", payload)
        if isinstance(doc, list):
            if not doc:
                raise NotFoundError(f"catalog id {oam_id} not found")
            doc = doc[0]
        return doc


def search_catalog(
    bbox: tuple[float, float, float, float],
    policy: AdmissionPolicy | None = None,
    client: CatalogClient | None = None,
) -> list[CatalogEntry]:
    """Admitted catalog entries for a bbox, newest acquisition first."""
    policy = policy or AdmissionPolicy()
    client = client or CatalogClient()
    entries = [parse_entry(doc) for doc in client.search(bbox)]
    admitted = [e for e in entries if admit(e, policy)[0]]
    return sorted(admitted, key=lambda e: e.acquisition_date, reverse=True)


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def sidecar_path(dest: Path, oam_id: str) -> Path:
    return dest / f"{oam_id}.json"


def asset_path(dest: Path, oam_id: str) -> Path:
    return dest / f"{oam_id}.tif"


def fetch_entry(
    oam_id: str,
    dest: str | Path,
    client: CatalogClient | None = None,
    expected_sha256: str | None = None,
) -> tuple[str, CatalogEntry]:
    """Download one asset with checksum-verified idempotency.

    A second fetch of the same id with an intact local file performs no
    network transfer. The asset streams to a temp file and is renamed into
    place only after the checksum is recorded, so partial downloads never
    masquerade as complete assets.
    """
    client = client or CatalogClient()
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    target = asset_path(dest, oam_id)
    sidecar = sidecar_path(dest, oam_id)

    if target.is_file() and sidecar.is_file():
        with open(sidecar) as f:
            meta = json.load(f)
        recorded = meta.get("sha256")
        if recorded and _sha256(target) == recorded:
            entry = CatalogEntry(
                **{k: meta[k] for k in (
                    "oam_id", "title", "gsd_m", "area_km2",
                    "acquisition_date", "provider", "download_url", "area_source",
                )}
            )
            return str(target), entry

    entry = parse_entry(client.get_by_id(oam_id))
    resp = client.get_absolute(entry.download_url, stream=True)

    digest = hashlib.sha256()
    fd, tmp_name = tempfile.mkstemp(dir=dest, suffix=".part")
    try:
        with os.fdopen(fd, "wb") as tmp:
            for chunk in resp.iter_content(chunk_size=1 << 20):
                tmp.write(chunk)
                digest.update(chunk)
        checksum = digest.hexdigest()
        if expected_sha256 and checksum != expected_sha256:
            raise IntegrityError(
                f"{oam_id}: checksum mismatch (expected {expected_sha256}, got {checksum})"
            )
        os.replace(tmp_name, target)
    finally:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)

    doc = entry.to_sidecar()
    doc["sha256"] = checksum
    tmp_sidecar = sidecar.with_suffix(".json.part")
    with open(tmp_sidecar, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")
    os.replace(tmp_sidecar, sidecar)
    return str(target), entry
