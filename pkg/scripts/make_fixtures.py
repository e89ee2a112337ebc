#!/usr/bin/env python3
"""Build the fixture corpus from the hand-authored sources.

Reads fixtures/sources/*.txt (pages separated by %%PAGE%% lines, paragraphs by
blank lines, %%TABLE%% paragraphs holding " | "-separated rows), then writes:

  fixtures/documents/<name>.pdf          deterministic minimal PDFs
  fixtures/layouts/<sha256>.layout.json  layout files keyed by document hash

and merges the mechanical metadata (sha256, page/paragraph counts, rendered
text length) into fixtures/manifest.json. The rendered-text length is computed
here with a standalone re-implementation of the rendering rules, on purpose:
it serves as an oracle independent of the package.

Deliberately imports nothing from the package. Outputs are committed; rerun
only when a source changes.
"""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
SOURCES = ROOT / "fixtures" / "sources"
DOCUMENTS = ROOT / "fixtures" / "documents"
LAYOUTS = ROOT / "fixtures" / "layouts"
MANIFEST = ROOT / "fixtures" / "manifest.json"

PRODUCED_AT = "2025-03-01T00:00:00.000000+00:00"


def parse_source(text: str):
    pages = []
    for page_text in text.split("%%PAGE%%"):
        page_text = page_text.strip("\n")
        paragraphs = []
        tables = []
        for block in page_text.split("\n\n"):
            block = block.strip("\n")
            if not block.strip():
                continue
            lines = block.split("\n")
            if lines[0].strip() == "%%TABLE%%":
                rows = [[cell.strip() for cell in line.split("|")] for line in lines[1:]]
                tables.append(rows)
            else:
                paragraphs.append(lines)
        pages.append({"paragraphs": paragraphs, "tables": tables})
    return pages


def build_layout(pages) -> dict:
    layout_pages = []
    tables = []
    for i, page in enumerate(pages):
        layout_pages.append({
            "number": i + 1,
            "paragraphs": [
                {"lines": [{"words": [{"text": w} for w in line.split()]} for line in para]}
                for para in page["paragraphs"]
            ],
        })
        for rows in page["tables"]:
            tables.append({"page": i + 1, "rows": rows})
    return {
        "provider": "fixture",
        "produced_at": PRODUCED_AT,
        "pages": layout_pages,
        "tables": tables,
    }


def rendered_text(pages) -> str:
    """Standalone implementation of the reading-order rendering rules."""
    blocks = []
    for page in pages:
        for para in page["paragraphs"]:
            blocks.append("\n".join(" ".join(line.split()) for line in para))
        for rows in page["tables"]:
            blocks.append("\n".join(" | ".join(row) for row in rows))
    return "\n\n".join(blocks)


def _pdf_escape(s: str) -> str:
    return s.replace("\\", r"\\").replace("(", r"\(").replace(")", r"\)")


def build_pdf(pages) -> bytes:
    """Minimal valid PDF with fixed bytes: no ids, no dates, fixed producer."""
    page_lines = []
    for page in pages:
        lines = []
        for para in page["paragraphs"]:
            lines.extend(" ".join(line.split()) for line in para)
            lines.append("")
        for rows in page["tables"]:
            lines.extend(" | ".join(row) for row in rows)
            lines.append("")
        page_lines.append(lines)

    objects: list[bytes] = []
    n_pages = len(page_lines)
    kids = " ".join(f"{4 + 2 * i} 0 R" for i in range(n_pages))
    objects.append(b"<< /Type /Catalog /Pages 2 0 R >>")
    objects.append(f"<< /Type /Pages /Kids [{kids}] /Count {n_pages} >>".encode())
    objects.append(b"<< /Type /Font /Subtype /Type1 /BaseFont /Helvetica >>")
    for lines in page_lines:
        content = "BT /F1 9 Tf 40 800 Td 11 TL\n"
        for line in lines:
            content += f"({_pdf_escape(line)}) Tj T*\n"
        content += "ET"
        stream = content.encode("latin-1", errors="replace")
        page_obj = (
            f"<< /Type /Page /Parent 2 0 R /MediaBox [0 0 595 842] "
            f"/Resources << /Font << /F1 3 0 R >> >> /Contents {len(objects) + 2} 0 R >>"
        ).encode()
        objects.append(page_obj)
        objects.append(b"<< /Length " + str(len(stream)).encode() + b" >>\nstream\n"
                       + stream + b"\nendstream")

    out = bytearray(b"%PDF-1.4\n")
    offsets = [0]
    for i, body in enumerate(objects, start=1):
        offsets.append(len(out))
        out += f"{i} 0 obj\n".encode() + body + b"\nendobj\n"
    xref_at = len(out)
    out += f"xref\n0 {len(objects) + 1}\n".encode()
    out += b"0000000000 65535 f \n"
    for off in offsets[1:]:
        out += f"{off:010d} 00000 n \n".encode()
    out += (f"trailer\n<< /Size {len(objects) + 1} /Root 1 0 R >>\n"
            f"startxref\n{xref_at}\n%%EOF\n").encode()
    return bytes(out)


def main() -> int:
    DOCUMENTS.mkdir(parents=True, exist_ok=True)
    LAYOUTS.mkdir(parents=True, exist_ok=True)
    manifest = json.loads(MANIFEST.read_text()) if MANIFEST.is_file() else {"papers": {}}

    for source in sorted(SOURCES.glob("*.txt")):
        name = source.stem
        pages = parse_source(source.read_text(encoding="utf-8"))
        layout = build_layout(pages)
        pdf = build_pdf(pages)
        digest = hashlib.sha256(pdf).hexdigest()

        (DOCUMENTS / f"{name}.pdf").write_bytes(pdf)
        for stale in LAYOUTS.glob("*.layout.json"):
            if json.loads(stale.read_text()).get("_source") == name:
                stale.unlink()
        layout["_source"] = name
        (LAYOUTS / f"{digest}.layout.json").write_text(
            json.dumps(layout, ensure_ascii=False, indent=1) + "\n", encoding="utf-8"
        )

        text = rendered_text(pages)
        entry = manifest["papers"].setdefault(name, {})
        entry["file"] = f"documents/{name}.pdf"
        entry["sha256"] = digest
        entry["pages"] = len(pages)
        entry["paragraphs"] = sum(len(p["paragraphs"]) for p in pages)
        entry["text_chars"] = len(text)
        print(f"{name}: sha256={digest} pages={entry['pages']} "
              f"paragraphs={entry['paragraphs']} text_chars={entry['text_chars']}")

    MANIFEST.write_text(json.dumps(manifest, ensure_ascii=False, indent=2) + "\n",
                        encoding="utf-8")
    return 0


if __name__ == "__main__":
    sys.exit(main())
