"""Readers and writers for the on-disk interchange formats.

Images travel as PNG or binary PPM (P6); dense flows use the flat binary
"VFLW" layout (magic, u32 width, u32 height, then width*height little-endian
records of f32 u2, f32 v2, u8 valid); detections and ground truth are JSON
lines. 8-bit image sources are divided by 255 on read.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Union

import numpy as np
from PIL import Image as PILImage

from .core import Box, Detection, FlowField, Image, VerikitError

PathLike = Union[str, Path]

FLOW_MAGIC = b"VFLW"
_FLOW_RECORD = np.dtype([("u", "<f4"), ("v", "<f4"), ("valid", "u1")])


class FlowFormatError(VerikitError):
    """Malformed flow file; carries the offending path and byte offset."""

    def __init__(self, path: PathLike, offset: int, detail: str):
        self.path = str(path)
        self.offset = offset
        super().__init__(f"{path}: byte {offset}: {detail}")


def read_image(path: PathLike) -> Image:
    """Read a PNG or binary PPM (P6) image into [0, 1] intensities."""
    path = Path(path)
    if path.suffix.lower() == ".ppm":
        return _read_ppm(path)
    with PILImage.open(path) as img:
        if img.mode not in ("L", "RGB"):
            img = img.convert("RGB")
        arr = np.asarray(img, dtype=np.uint8)
    return Image.from_array(arr)


def write_image(path: PathLike, image: Image) -> None:
    """Write PNG or binary PPM depending on the file extension."""
    path = Path(path)
    arr = np.floor(image.data * 255.0 + 0.5).astype(np.uint8)
    if path.suffix.lower() == ".ppm":
        _write_ppm(path, arr)
        return
    if arr.shape[2] == 1:
        pil = PILImage.fromarray(arr[:, :, 0], mode="L")
    else:
        pil = PILImage.fromarray(arr, mode="RGB")
    pil.save(path)


def _read_ppm(path: Path) -> Image:
    data = path.read_bytes()
    pos = 0

    def token() -> bytes:
        nonlocal pos
        while pos < len(data):
            if data[pos : pos + 1].isspace():
                pos += 1
            elif data[pos : pos + 1] == b"#":
                while pos < len(data) and data[pos : pos + 1] != b"\n":
                    pos += 1
            else:
                break
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        return data[start:pos]

    if token() != b"P6":
        raise VerikitError(f"{path}: not a binary PPM (P6) file")
    width, height, maxval = int(token()), int(token()), int(token())
    if maxval != 255:
        raise VerikitError(f"{path}: only 8-bit PPM supported")
    pos += 1  # single whitespace after maxval
    raw = np.frombuffer(data, dtype=np.uint8, count=width * height * 3, offset=pos)
    return Image.from_array(raw.reshape(height, width, 3))


def _write_ppm(path: Path, arr: np.ndarray) -> None:
    if arr.shape[2] == 1:  # P6 is RGB-only; replicate gray
        arr = np.repeat(arr, 3, axis=2)
    header = f"P6\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode("ascii")
    path.write_bytes(header + arr.tobytes())


def write_flow(path: PathLike, flow: FlowField) -> None:
    """Serialize a flow field to the VFLW binary layout."""
    rec = np.empty(flow.height * flow.width, dtype=_FLOW_RECORD)
    rec["u"] = flow.targets[:, :, 0].reshape(-1)
    rec["v"] = flow.targets[:, :, 1].reshape(-1)
    rec["valid"] = flow.valid.reshape(-1).astype(np.uint8)
    header = FLOW_MAGIC + np.array([flow.width, flow.height], dtype="<u4").tobytes()
    Path(path).write_bytes(header + rec.tobytes())


def read_flow(path: PathLike) -> FlowField:
    """Parse a VFLW file, reporting the byte offset of any corruption."""
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != FLOW_MAGIC:
        raise FlowFormatError(path, 0, "bad magic, expected b'VFLW'")
    if len(data) < 12:
        raise FlowFormatError(path, 4, "truncated header")
    width, height = np.frombuffer(data, dtype="<u4", count=2, offset=4)
    width, height = int(width), int(height)
    if width == 0 or height == 0:
        raise FlowFormatError(path, 4, f"bad dimensions {width}x{height}")
    expected = 12 + width * height * _FLOW_RECORD.itemsize
    if len(data) != expected:
        raise FlowFormatError(
            path, min(len(data), expected), f"expected {expected} bytes, got {len(data)}"
        )
    rec = np.frombuffer(data, dtype=_FLOW_RECORD, count=width * height, offset=12)
    bad = np.nonzero(rec["valid"] > 1)[0]
    if len(bad):
        offset = 12 + int(bad[0]) * _FLOW_RECORD.itemsize + 8
        raise FlowFormatError(path, offset, f"validity byte is {rec['valid'][bad[0]]}")
    targets = np.stack([rec["u"], rec["v"]], axis=1).astype(np.float64)
    valid = rec["valid"].astype(bool).reshape(height, width)
    targets = targets.reshape(height, width, 2)
    # Invalid entries may carry anything on disk; normalize them to zero.
    targets = np.where(valid[:, :, None], targets, 0.0)
    return FlowField(targets, valid)


def detection_to_record(det: Detection) -> dict:
    return {
        "detection_id": det.detection_id,
        "class_id": det.class_id,
        "box": det.box.as_list(),
        "confidence": det.confidence,
    }


def detection_from_record(rec: dict) -> Detection:
    return Detection(
        detection_id=int(rec["detection_id"]),
        class_id=int(rec["class_id"]),
        box=Box(*[float(v) for v in rec["box"]]),
        confidence=float(rec["confidence"]),
    )


def write_detections_jsonl(path: PathLike, detections: list[Detection]) -> None:
    with open(path, "w") as f:
        for det in detections:
            f.write(json.dumps(detection_to_record(det), sort_keys=True) + "\n")


def read_detections_jsonl(path: PathLike) -> list[Detection]:
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(detection_from_record(json.loads(line)))
    return out


def write_ground_truth_jsonl(path: PathLike, entries: list[tuple[Box, int]]) -> None:
    with open(path, "w") as f:
        for box, class_id in entries:
            rec = {"class_id": class_id, "box": box.as_list()}
            f.write(json.dumps(rec, sort_keys=True) + "\n")


def read_ground_truth_jsonl(path: PathLike) -> list[tuple[Box, int]]:
    out = []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if line:
                rec = json.loads(line)
                out.append((Box(*[float(v) for v in rec["box"]]), int(rec["class_id"])))
    return out
