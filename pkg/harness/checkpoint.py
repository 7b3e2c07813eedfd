"""
Binary checkpoint of a generalist run.

Layout (little-endian):
    b"GNCK" | u8 version
    repeated sections: u16 name length | name | u8 kind | u64 payload length | payload
        kind 0: UTF-8 JSON, kind 1: raw float64 array
    u32 CRC32 of every preceding byte
"""

import json
import logging
import os
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from numeric.errors import CorruptionError, FormatError, VersionError

log = logging.getLogger(__name__)

MAGIC = b"GNCK"
VERSION = 1
KIND_JSON = 0
KIND_F64 = 1
SECTION_HEAD = struct.Struct("<H")
SECTION_BODY = struct.Struct("<BQ")
TRAILER = struct.Struct("<I")


@dataclass
class Checkpoint:
    config: dict
    snapshot: dict

    @property
    def epoch(self):
        return int(self.snapshot["epoch"])


def _section(name, kind, payload):
    raw_name = name.encode("utf-8")
    return SECTION_HEAD.pack(len(raw_name)) + raw_name + SECTION_BODY.pack(kind, len(payload)) + payload


def _json_section(name, obj):
    return _section(name, KIND_JSON, json.dumps(obj, sort_keys=True).encode("utf-8"))


def _array_section(name, arr):
    return _section(name, KIND_F64, np.ascontiguousarray(arr, dtype="<f8").tobytes())


def encode_checkpoint(checkpoint):
    snap = checkpoint.snapshot
    meta = {
        "epoch": int(snap["epoch"]),
        "history": snap["history"],
        "learners": [
            {
                "optimizer": {"step": lrn["optimizer"]["step"], "layout_id": lrn["optimizer"]["layout_id"],
                              "slots": sorted(lrn["optimizer"]["slots"])},
                "has_wa": lrn["wa_buffer"] is not None,
                "rng": lrn["rng"],
            }
            for lrn in snap["learners"]
        ],
    }
    parts = [MAGIC, bytes([VERSION]), _json_section("config", checkpoint.config), _json_section("meta", meta),
             _array_section("theta_g", snap["theta_g"]), _array_section("theta_prev", snap["theta_prev"])]
    for i, lrn in enumerate(snap["learners"]):
        parts.append(_array_section(f"learner{i}.params", lrn["params"]))
        for name in sorted(lrn["optimizer"]["slots"]):
            parts.append(_array_section(f"learner{i}.slot.{name}", lrn["optimizer"]["slots"][name]))
        if lrn["wa_buffer"] is not None:
            parts.append(_array_section(f"learner{i}.wa", lrn["wa_buffer"]))
    body = b"".join(parts)
    return body + TRAILER.pack(zlib.crc32(body) & 0xFFFFFFFF)


def _read_sections(raw, start, end):
    sections = {}
    pos = start
    while pos < end:
        if pos + SECTION_HEAD.size > end:
            raise CorruptionError(f"truncated section header at byte {pos}")
        (name_len,) = SECTION_HEAD.unpack_from(raw, pos)
        pos += SECTION_HEAD.size
        if pos + name_len + SECTION_BODY.size > end:
            raise CorruptionError(f"truncated section name at byte {pos}")
        name = raw[pos:pos + name_len].decode("utf-8")
        pos += name_len
        kind, length = SECTION_BODY.unpack_from(raw, pos)
        pos += SECTION_BODY.size
        if pos + length > end:
            raise CorruptionError(f"section {name} runs past the end of the file")
        payload = raw[pos:pos + length]
        pos += length
        if kind == KIND_JSON:
            sections[name] = json.loads(payload.decode("utf-8"))
        elif kind == KIND_F64:
            sections[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64)
        else:
            raise FormatError(f"unknown section kind {kind} in {name}", offset=pos - length - SECTION_BODY.size)
    return sections


def decode_checkpoint(raw):
    head = len(MAGIC) + 1
    if raw[:len(MAGIC)] != MAGIC[:len(raw)]:
        raise FormatError("not a checkpoint file (bad magic)", offset=0)
    if len(raw) < head + TRAILER.size:
        raise CorruptionError(f"checkpoint truncated to {len(raw)} bytes")
    if raw[len(MAGIC)] != VERSION:
        raise VersionError(f"checkpoint version {raw[len(MAGIC)]} is not supported (expected {VERSION})")
    body_end = len(raw) - TRAILER.size
    (stored,) = TRAILER.unpack_from(raw, body_end)
    if zlib.crc32(raw[:body_end]) & 0xFFFFFFFF != stored:
        raise CorruptionError("checkpoint checksum mismatch (truncated or damaged)")

    sections = _read_sections(raw, head, body_end)
    meta = sections["meta"]
    learners = []
    for i, saved in enumerate(meta["learners"]):
        learners.append({
            "params": sections[f"learner{i}.params"],
            "optimizer": {
                "step": saved["optimizer"]["step"],
                "layout_id": saved["optimizer"]["layout_id"],
                "slots": {name: sections[f"learner{i}.slot.{name}"] for name in saved["optimizer"]["slots"]},
            },
            "wa_buffer": sections[f"learner{i}.wa"] if saved["has_wa"] else None,
            "rng": saved["rng"],
        })
    snapshot = {
        "epoch": meta["epoch"],
        "theta_g": sections["theta_g"],
        "theta_prev": sections["theta_prev"],
        "history": meta["history"],
        "learners": learners,
    }
    return Checkpoint(config=sections["config"], snapshot=snapshot)


def save_checkpoint(path, checkpoint):
    """Write a checkpoint atomically (temp file, then rename)."""
    raw = encode_checkpoint(checkpoint)
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as f:
        f.write(raw)
    os.replace(tmp, path)
    log.info("saved checkpoint at epoch %d to %s (%d bytes)", checkpoint.epoch, path, len(raw))


def load_checkpoint(path):
    with open(path, "rb") as f:
        raw = f.read()
    checkpoint = decode_checkpoint(raw)
    log.info("loaded checkpoint at epoch %d from %s", checkpoint.epoch, path)
    return checkpoint
