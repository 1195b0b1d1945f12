"""On-disk dataset format.

Each split directory holds ``manifest.tsv`` (``relative-path<TAB>transcript``,
UTF-8) and ``img/*.pgm`` (binary P5, maxval 255).  The dataset root also keeps
``genconfig.txt`` with the key=value settings that produced it.
"""
from __future__ import annotations

from pathlib import Path
from typing import Dict, List, Sequence, Tuple

import numpy as np

from ..errors import MalformedManifest, MalformedPGM
from .render import LineImage

SPLITS = ("train", "valid")


def encode_pgm(pixels: np.ndarray) -> bytes:
    pixels = np.asarray(pixels, dtype=np.uint8)
    H, W = pixels.shape
    return f"P5\n{W} {H}\n255\n".encode("ascii") + pixels.tobytes()


def decode_pgm(blob: bytes, source: str = "<bytes>") -> np.ndarray:
    tokens: List[int] = []
    pos = 0
    # header: magic, width, height, maxval, each separated by whitespace/comments
    while len(tokens) < 4:
        while pos < len(blob) and blob[pos : pos + 1].isspace():
            pos += 1
        if pos < len(blob) and blob[pos : pos + 1] == b"#":
            while pos < len(blob) and blob[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(blob) and not blob[pos : pos + 1].isspace() and blob[pos : pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise MalformedPGM(f"{source}: header truncated at byte {pos}")
        word = blob[start:pos]
        if not tokens:
            if word != b"P5":
                raise MalformedPGM(f"{source}: expected magic P5 at byte 0, found {word[:8]!r}")
            tokens.append(5)
            continue
        try:
            tokens.append(int(word))
        except ValueError:
            raise MalformedPGM(f"{source}: non-numeric header field {word[:16]!r} at byte {start}") from None
    if pos >= len(blob) or not blob[pos : pos + 1].isspace():
        raise MalformedPGM(f"{source}: missing whitespace after maxval at byte {pos}")
    pos += 1
    _, W, H, maxval = tokens
    if maxval != 255:
        raise MalformedPGM(f"{source}: maxval {maxval} unsupported (only 255)")
    if W < 1 or H < 1:
        raise MalformedPGM(f"{source}: empty image {W}x{H}")
    data = blob[pos:]
    if len(data) != W * H:
        raise MalformedPGM(f"{source}: expected {W * H} pixel bytes after byte {pos}, found {len(data)}")
    return np.frombuffer(data, dtype=np.uint8).reshape(H, W).copy()


def write_pgm(path, pixels):
    Path(path).write_bytes(encode_pgm(pixels))


def read_pgm(path) -> np.ndarray:
    path = Path(path)
    return decode_pgm(path.read_bytes(), str(path))


def read_manifest(path) -> List[Tuple[str, str]]:
    path = Path(path)
    rows = []
    seen = set()
    text = path.read_bytes().decode("utf-8")
    for lineno, line in enumerate(text.split("\n"), start=1):
        if line == "":
            continue
        if "\t" not in line:
            raise MalformedManifest(f"{path}:{lineno}: missing TAB in row {line[:40]!r}")
        rel, transcript = line.split("\t", 1)
        if not rel:
            raise MalformedManifest(f"{path}:{lineno}: empty image path")
        if rel in seen:
            raise MalformedManifest(f"{path}:{lineno}: duplicate path {rel!r}")
        seen.add(rel)
        rows.append((rel, transcript))
    return rows


def write_manifest(path, rows: Sequence[Tuple[str, str]]):
    lines = []
    for rel, transcript in rows:
        if "\t" in transcript or "\n" in transcript:
            raise ValueError(f"transcript {transcript!r} contains a TAB or newline")
        lines.append(f"{rel}\t{transcript}\n")
    Path(path).write_bytes("".join(lines).encode("utf-8"))


def save_split(directory, lines: Sequence[LineImage]) -> Path:
    directory = Path(directory)
    (directory / "img").mkdir(parents=True, exist_ok=True)
    rows = []
    for i, line in enumerate(lines):
        rel = f"img/{i:06d}.pgm"
        write_pgm(directory / rel, line.pixels)
        rows.append((rel, line.transcript))
    write_manifest(directory / "manifest.tsv", rows)
    return directory


def load_split(directory) -> List[LineImage]:
    directory = Path(directory)
    manifest = directory / "manifest.tsv"
    if not manifest.is_file():
        raise FileNotFoundError(f"no manifest at {manifest}")
    out = []
    for rel, transcript in read_manifest(manifest):
        img = directory / rel
        if not img.is_file():
            raise MalformedManifest(f"{manifest}: referenced image {rel!r} does not exist")
        out.append(LineImage(read_pgm(img), transcript))
    return out


def write_keyvalue(path, items: Dict[str, object]):
    Path(path).write_text("".join(f"{k}={v}\n" for k, v in items.items()), encoding="utf-8")


def read_keyvalue(path) -> Dict[str, str]:
    items = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {raw!r}")
        k, v = line.split("=", 1)
        items[k.strip()] = v.strip()
    return items
