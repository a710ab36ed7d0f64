"""Regenerates the demo experiment inputs in this directory.

reviews.jsonl    raw review dump in the Amazon JSON-lines layout
demo.emb         16-d synthetic embeddings in the binary interchange format
"""
import json
import random
import struct
from pathlib import Path

HERE = Path(__file__).resolve().parent
DIM = 16

DETAIL = ("the battery lasts about a week and the screen is bright. "
          "I compared it with my previous one because the price was similar. "
          "material quality is better than expected and the size fits well. ")
OPINION = ["great", "good", "love it", "works", "bad", "terrible", "nice", "poor quality", "perfect"]
FILLER = ["ok", "fine", "it is what it is", "meh", "arrived", "thanks"]


def review_text(rng, quality):
    parts = [rng.choice(OPINION)]
    for _ in range(int(1 + quality * 6)):
        parts.append(DETAIL if rng.random() < quality else rng.choice(FILLER))
    return " ".join(parts)


def main():
    rng = random.Random(20240611)
    lines = []
    quality = {}
    for p in range(40):
        asin = f"B{p:04d}"
        for _ in range(rng.randint(5, 11)):
            q = rng.random()
            total = rng.randint(11, 60)
            helpful = sum(rng.random() < 0.1 + 0.8 * q for _ in range(total))
            rec = {
                "reviewerID": f"R{len(lines):05d}",
                "asin": asin,
                "reviewText": review_text(rng, q),
                "overall": float(rng.randint(1, 5)),
                "helpful": [helpful, total],
            }
            lines.append(json.dumps(rec))
            quality[len(lines)] = q
    # A few rows the filters must drop.
    lines.append(json.dumps({"asin": "B0000", "reviewText": "short", "overall": 3.0, "helpful": [1, 4]}))
    lines.append(json.dumps({"asin": "B0001", "reviewText": "!!! 123", "overall": 5.0, "helpful": [9, 20]}))
    lines.append(json.dumps({"asin": "B0002", "reviewText": "no stars", "helpful": [9, 20]}))
    lines.append("{not json")
    (HERE / "reviews.jsonl").write_text("\n".join(lines) + "\n")

    direction = [rng.gauss(0, 1) for _ in range(DIM)]
    meta = b"synthetic demo embeddings"
    out = bytearray(b"HRKEMBED")
    out += struct.pack("<BBH", 1, 0, 0)
    out += struct.pack("<I", DIM)
    out += struct.pack("<Q", len(quality))
    out += struct.pack("<I", len(meta)) + meta
    for rid, q in quality.items():
        idb = str(rid).encode()
        out += struct.pack("<I", len(idb)) + idb
        vec = [q * d * 0.5 + rng.gauss(0, 0.3) for d in direction]
        out += struct.pack(f"<{DIM}f", *vec)
    (HERE / "demo.emb").write_bytes(bytes(out))


if __name__ == "__main__":
    main()
