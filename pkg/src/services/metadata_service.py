import json
import os
import re
from pathlib import Path
from typing import Any, Dict, List, Optional, Protocol

import requests
from bs4 import BeautifulSoup
from loguru import logger
from rapidfuzz import fuzz

from src.core.cache import load_cache, save_cache
from src.core.errors import TransportError
from src.core.models import MetadataSnapshot, VenueType
from src.core.text import normalize_title

# ---------------------------------------------------------
# CLIENT INTERFACE
# ---------------------------------------------------------


class MetadataClient(Protocol):
    """
    What CSAC and the Evidence Committee need from a citation index.
    Calls are blocking; the pipeline runs them through gateway.run_blocking.
    """

    client_id: str

    def query_by_doi(self, doi: str) -> Optional[MetadataSnapshot]: ...

    def query_by_metadata(self, title: str, authors: List[str], year: Optional[int]) -> List[MetadataSnapshot]: ...

    def fetch_full_text(self, snapshot: MetadataSnapshot) -> Optional[str]: ...

    def citing_works(self, snapshot: MetadataSnapshot) -> List[MetadataSnapshot]: ...


def normalize_doi(doi: Optional[str]) -> Optional[str]:
    if not doi:
        return None
    d = doi.strip().lower()
    d = re.sub(r"^(https?://(dx\.)?doi\.org/|doi:\s*)", "", d)
    return d or None


# ---------------------------------------------------------
# FIXTURE CLIENT
# ---------------------------------------------------------

SNAPSHOT_FIELDS = set(MetadataSnapshot.model_fields)


class FixtureMetadataClient:
    """
    Offline citation index backed by a fixture directory:

      records.json   list of records (MetadataSnapshot fields plus
                     "full_text" / "full_text_file" and "cites": [record ids])
      queries.json   optional {normalized title query: [record ids]}

    Metadata search without an explicit query entry falls back to fuzzy title
    matching over all records; CSAC decides equivalence afterwards.
    """

    client_id = "fixture"

    def __init__(
        self,
        fixtures_dir: Optional[str] = None,
        records: Optional[List[Dict[str, Any]]] = None,
        queries: Optional[Dict[str, List[str]]] = None,
        simulate_transport_error: bool = False,
        search_cutoff: float = 60.0,
    ):
        self.base = Path(fixtures_dir) if fixtures_dir else None
        self.records: Dict[str, Dict[str, Any]] = {}
        self.queries: Dict[str, List[str]] = {}
        self.simulate_transport_error = simulate_transport_error
        self.search_cutoff = search_cutoff

        if self.base is not None:
            rec_path = self.base / "records.json"
            if rec_path.exists():
                for rec in json.loads(rec_path.read_text(encoding="utf-8")):
                    self._add(rec)
            q_path = self.base / "queries.json"
            if q_path.exists():
                self.queries.update(json.loads(q_path.read_text(encoding="utf-8")))
        for rec in records or []:
            self._add(rec)
        for q, ids in (queries or {}).items():
            self.queries[normalize_title(q)] = list(ids)

    def _add(self, rec: Dict[str, Any]):
        rec = dict(rec)
        rec.setdefault("record_id", rec.get("doi") or normalize_title(rec.get("title", "")))
        rec.setdefault("source_of_record", self.client_id)
        self.records[rec["record_id"]] = rec

    def _check(self, what: str):
        if self.simulate_transport_error:
            raise TransportError(self.client_id, f"simulated transport failure during {what}")

    def _snapshot(self, rec: Dict[str, Any]) -> MetadataSnapshot:
        data = {k: v for k, v in rec.items() if k in SNAPSHOT_FIELDS}
        if self._full_text(rec) is not None and not data.get("full_text_ref"):
            data["full_text_ref"] = rec["record_id"]
        return MetadataSnapshot(**data)

    def _full_text(self, rec: Dict[str, Any]) -> Optional[str]:
        if rec.get("full_text"):
            return rec["full_text"]
        name = rec.get("full_text_file")
        if name and self.base is not None and (self.base / name).exists():
            return (self.base / name).read_text(encoding="utf-8")
        return None

    def query_by_doi(self, doi: str) -> Optional[MetadataSnapshot]:
        self._check("doi lookup")
        want = normalize_doi(doi)
        for rec in self.records.values():
            if want and normalize_doi(rec.get("doi")) == want:
                return self._snapshot(rec)
        return None

    def query_by_metadata(self, title: str, authors: List[str], year: Optional[int]) -> List[MetadataSnapshot]:
        self._check("metadata search")
        query = normalize_title(title)
        if not query:
            return []
        if query in self.queries:
            return [self._snapshot(self.records[i]) for i in self.queries[query] if i in self.records]

        scored = []
        for rec in self.records.values():
            score = fuzz.ratio(query, normalize_title(rec.get("title", "")))
            if score >= self.search_cutoff:
                scored.append((score, rec["record_id"]))
        scored.sort(key=lambda x: (-x[0], x[1]))
        return [self._snapshot(self.records[rid]) for _, rid in scored[:5]]

    def fetch_full_text(self, snapshot: MetadataSnapshot) -> Optional[str]:
        self._check("full-text fetch")
        rec = self.records.get(snapshot.record_id or "")
        if rec is None or not rec.get("open_access", False):
            return None
        return self._full_text(rec)

    def citing_works(self, snapshot: MetadataSnapshot) -> List[MetadataSnapshot]:
        self._check("citing-works lookup")
        target = snapshot.record_id
        target_doi = normalize_doi(snapshot.doi)
        out = []
        for rec in self.records.values():
            cites = rec.get("cites") or []
            if target in cites or (target_doi and target_doi in {normalize_doi(c) for c in cites}):
                out.append(self._snapshot(rec))
        return out


# ---------------------------------------------------------
# OPENALEX CLIENT (live; never used by tests)
# ---------------------------------------------------------

OPENALEX_API_BASE = "https://api.openalex.org"

HEADERS = {
    "Accept": "application/json",
    "User-Agent": "citeguard (citation verification)",
}

if os.getenv("BIBAGENT_CONTACT_EMAIL"):
    HEADERS["User-Agent"] += f" mailto:{os.getenv('BIBAGENT_CONTACT_EMAIL')}"


def _abstract_from_index(index: Optional[Dict[str, List[int]]]) -> Optional[str]:
    if not index:
        return None
    positions = [(p, w) for w, ps in index.items() for p in ps]
    return " ".join(w for _, w in sorted(positions))


def _venue_type(source_type: Optional[str]) -> Optional[VenueType]:
    return {
        "journal": VenueType.JOURNAL,
        "conference": VenueType.CONFERENCE,
        "repository": VenueType.PREPRINT,
    }.get(source_type or "")


class OpenAlexClient:
    client_id = "openalex"

    def __init__(self, cache_root: Optional[str] = None, timeout: float = 30.0):
        self.cache_root = cache_root
        self.timeout = timeout

    def _get(self, path: str, params: Optional[Dict[str, Any]] = None, cache_key: Optional[str] = None) -> Any:
        if cache_key:
            cached = load_cache(cache_key, "openalex", root=self.cache_root)
            if cached is not None:
                return cached
        url = f"{OPENALEX_API_BASE}{path}"
        try:
            resp = requests.get(url, headers=HEADERS, params=params, timeout=self.timeout)
        except requests.RequestException as e:
            raise TransportError(self.client_id, str(e)) from e
        if resp.status_code == 404:
            return None
        if not resp.ok:
            raise TransportError(self.client_id, f"OpenAlex API Error {resp.status_code}: {resp.text[:200]}")
        data = resp.json()
        if cache_key:
            save_cache(cache_key, "openalex", data, root=self.cache_root)
        return data

    def _snapshot(self, work: Dict[str, Any]) -> Optional[MetadataSnapshot]:
        if not work:
            return None
        source = ((work.get("primary_location") or {}).get("source")) or {}
        oa = work.get("open_access") or {}
        best = work.get("best_oa_location") or {}
        topic = (work.get("primary_topic") or {}).get("field") or {}
        try:
            return MetadataSnapshot(
                title=work.get("title") or work.get("display_name"),
                authors=[
                    (a.get("author") or {}).get("display_name", "")
                    for a in work.get("authorships") or []
                ],
                abstract=_abstract_from_index(work.get("abstract_inverted_index")),
                venue=source.get("display_name") or "",
                year=work.get("publication_year"),
                doi=normalize_doi(work.get("doi")),
                source_of_record=self.client_id,
                record_id=(work.get("id") or "").rsplit("/", 1)[-1] or None,
                open_access=bool(oa.get("is_oa")),
                full_text_ref=best.get("landing_page_url") or best.get("pdf_url"),
                article_type=work.get("type"),
                is_retracted=bool(work.get("is_retracted")),
                venue_type=_venue_type(source.get("type")),
                citation_count=int(work.get("cited_by_count") or 0),
                field_id=topic.get("display_name"),
            )
        except ValueError as e:
            logger.warning("skipping malformed OpenAlex work {}: {}", work.get("id"), e)
            return None

    def query_by_doi(self, doi: str) -> Optional[MetadataSnapshot]:
        d = normalize_doi(doi)
        if not d:
            return None
        return self._snapshot(self._get(f"/works/doi:{d}", cache_key=f"doi_{re.sub(r'[^a-z0-9]', '_', d)}"))

    def query_by_metadata(self, title: str, authors: List[str], year: Optional[int]) -> List[MetadataSnapshot]:
        params: Dict[str, Any] = {"search": title, "per-page": 5}
        if year:
            params["filter"] = f"publication_year:{year - 1}-{year + 1}"
        data = self._get("/works", params=params) or {}
        return [s for s in (self._snapshot(w) for w in data.get("results", [])) if s is not None]

    def fetch_full_text(self, snapshot: MetadataSnapshot) -> Optional[str]:
        # Only HTML landing pages are read; PDF rasterisation happens outside this tool.
        url = snapshot.full_text_ref
        if not (snapshot.open_access and url) or url.lower().endswith(".pdf"):
            return None
        try:
            resp = requests.get(url, headers={"User-Agent": HEADERS["User-Agent"]}, timeout=self.timeout)
        except requests.RequestException as e:
            raise TransportError(self.client_id, str(e)) from e
        if not resp.ok or "html" not in resp.headers.get("Content-Type", ""):
            return None
        soup = BeautifulSoup(resp.text, "html.parser")
        body = soup.find("article") or soup.body
        return body.get_text("\n\n", strip=True) if body else None

    def citing_works(self, snapshot: MetadataSnapshot) -> List[MetadataSnapshot]:
        if not snapshot.record_id:
            return []
        data = self._get(
            "/works",
            params={"filter": f"cites:{snapshot.record_id},is_oa:true", "per-page": 50},
            cache_key=f"citing_{snapshot.record_id}",
        ) or {}
        return [s for s in (self._snapshot(w) for w in data.get("results", [])) if s is not None]
