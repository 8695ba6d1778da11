import asyncio
import re
from pathlib import Path
from typing import List

from loguru import logger

from src.core.errors import ContractViolation
from src.core.gateway import CompletionRequest, DecodingConfig, ModelGateway
from src.core.models import PageTranscript
from src.core.prompts import load_prompt

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".tif", ".tiff", ".webp", ".gif", ".bmp"}

_FENCE = re.compile(r"^\s*```[\w-]*\s*\n(.*?)\n?```\s*$", re.S)


def clean_transcript(reply: str) -> str:
    text = (reply or "").strip()
    m = _FENCE.match(text)
    if m:
        text = m.group(1).strip()
    if text.lower() in ("null", "none", ""):
        return ""
    return text


def list_page_images(directory: str) -> List[str]:
    """Page images of one document, in filename order."""
    base = Path(directory)
    return [str(p) for p in sorted(base.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES]


def load_transcripts(directory: str) -> List[PageTranscript]:
    """Pre-made per-page Markdown files (seeded variants like page.s1.md are skipped)."""
    files = [p for p in sorted(Path(directory).glob("*.md")) if not re.search(r"\.s\d+$", p.stem)]
    return [
        PageTranscript(page_index=i, markdown=clean_transcript(p.read_text(encoding="utf-8")))
        for i, p in enumerate(files, start=1)
    ]


async def transcribe_page(image: str, page_index: int, gateway: ModelGateway, seed: int = 0) -> PageTranscript:
    prompt = load_prompt("transcribe_page")
    system, user = prompt.render(page_index=page_index)
    req = CompletionRequest(
        system_text=system,
        user_text=user,
        image_parts=[image],
        decoding=DecodingConfig(temperature=0.0, seed=seed),
        call_tag="dpcm/transcribe",
        context={"page": image},
    )
    [(reply, _)] = await gateway.complete(req)
    markdown = clean_transcript(reply)
    if not markdown:
        logger.bind(stage="dpcm").info("page {} has no readable text", page_index)
    return PageTranscript(page_index=page_index, markdown=markdown)


async def transcribe_pages(pages: List[str], gateway: ModelGateway, seed: int = 0) -> List[PageTranscript]:
    if not pages:
        raise ContractViolation("transcribe_pages needs at least one page")
    return list(await asyncio.gather(
        *(transcribe_page(image, i, gateway, seed) for i, image in enumerate(pages, start=1))
    ))
