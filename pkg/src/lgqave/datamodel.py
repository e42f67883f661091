"""Interchange formats: LGQE1 tensor files, grounding records, NDJSON manifests.

This is the contract between the pipeline and any upstream extractor. All
tensor payloads are little-endian float32 and round-trip bit-exactly; all
metadata is line-oriented JSON so datasets stay diffable. Paths inside a
manifest (and inside grounding sidecars) are relative to the manifest's
directory.
"""

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError
from .tensor import Tensor

MAGIC = b"LGQE1"
DTYPE_F32 = 0x01
MAX_RANK = 8
M_MAX = 10

QA_MODES = ("multi_choice", "open_ended")

MANIFEST_KEYS = {
    "video_id",
    "question_file",
    "answers_file",
    "label",
    "qa_mode",
    "category",
    "frames",
}
FRAME_KEYS = {"t", "embeddings_file", "grounding_file"}
GROUNDING_KEYS = {"boxes", "roi_file", "spatial_file", "frame_feature_file"}
GROUNDING_OPTIONAL = {"n_tokens"}


def write_tensor(path, t):
    """Serialize a Tensor/ndarray as an LGQE1 file."""
    data = t.data if isinstance(t, Tensor) else np.asarray(t)
    data = np.ascontiguousarray(data, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([DTYPE_F32]))
        fh.write(struct.pack("<I", data.ndim))
        for dim in data.shape:
            fh.write(struct.pack("<I", dim))
        fh.write(data.tobytes())


def read_tensor(path):
    """Parse an LGQE1 file; malformed input raises FormatError at the bad offset."""
    blob = Path(path).read_bytes()
    if len(blob) < 5:
        raise FormatError(f"{path}: truncated magic", offset=len(blob))
    if blob[:5] != MAGIC:
        raise FormatError(f"{path}: bad magic {blob[:5]!r}", offset=0)
    if len(blob) < 6:
        raise FormatError(f"{path}: missing dtype byte", offset=5)
    if blob[5] != DTYPE_F32:
        raise FormatError(f"{path}: unsupported dtype 0x{blob[5]:02x}", offset=5)
    if len(blob) < 10:
        raise FormatError(f"{path}: truncated rank field", offset=len(blob))
    (rank,) = struct.unpack_from("<I", blob, 6)
    if rank > MAX_RANK:
        raise FormatError(f"{path}: implausible rank {rank}", offset=6)
    head = 10 + 4 * rank
    if len(blob) < head:
        raise FormatError(f"{path}: truncated dims", offset=len(blob))
    dims = struct.unpack_from(f"<{rank}I", blob, 10) if rank else ()
    count = int(np.prod(dims, dtype=np.int64)) if rank else 1
    expected = head + 4 * count
    if len(blob) < expected:
        raise FormatError(
            f"{path}: truncated payload, expected {expected} bytes", offset=len(blob)
        )
    if len(blob) > expected:
        raise FormatError(f"{path}: {len(blob) - expected} trailing bytes", offset=expected)
    payload = np.frombuffer(blob, dtype="<f4", count=count, offset=head)
    return Tensor(payload.reshape(dims).copy())


@dataclass
class FrameRecord:
    """Per-frame patch embeddings plus the grounding payload."""

    frame_index: int
    patch_embeddings: np.ndarray
    boxes: list
    roi_features: np.ndarray
    spatial_features: np.ndarray
    frame_feature: np.ndarray
    n_tokens: int = -1

    def __post_init__(self):
        if self.n_tokens < 0:
            self.n_tokens = self.patch_embeddings.shape[0]

    @property
    def m(self):
        return len(self.boxes)

    def validate(self, context=""):
        pre = f"{context}frame {self.frame_index}: "
        if self.patch_embeddings.ndim != 2 or self.patch_embeddings.shape[0] < 1:
            raise DataError(pre + f"patch embeddings must be [N>=1 x C], got {self.patch_embeddings.shape}")
        n, c = self.patch_embeddings.shape
        if not 1 <= self.n_tokens <= n:
            raise DataError(pre + f"n_tokens {self.n_tokens} outside [1, {n}]")
        m = len(self.boxes)
        if m > M_MAX:
            raise DataError(pre + f"m exceeds {M_MAX} (got {m} boxes)")
        if self.roi_features.shape != (m, c):
            raise DataError(pre + f"roi features {self.roi_features.shape} vs ({m}, {c})")
        if self.spatial_features.shape != (m, 4):
            raise DataError(pre + f"spatial features {self.spatial_features.shape} vs ({m}, 4)")
        if self.frame_feature.shape != (c,):
            raise DataError(pre + f"frame feature {self.frame_feature.shape} vs ({c},)")
        for b in self.boxes:
            if len(b) != 4:
                raise DataError(pre + f"box {b} must have 4 coordinates")
            x1, y1, x2, y2 = (float(v) for v in b)
            if not (0.0 <= x1 < x2 <= 1.0 and 0.0 <= y1 < y2 <= 1.0):
                raise DataError(pre + f"box {b} not a normalized x1<x2, y1<y2 quadruple")
        for name, arr in (
            ("patch embeddings", self.patch_embeddings),
            ("roi features", self.roi_features),
            ("spatial features", self.spatial_features),
            ("frame feature", self.frame_feature),
        ):
            if not np.all(np.isfinite(arr)):
                raise DataError(pre + f"non-finite values in {name}")


@dataclass
class Episode:
    """One (video, question, answer bank, label) training unit."""

    video_id: str
    frames: list
    question_tokens: np.ndarray
    answer_bank: np.ndarray
    qa_mode: str
    label: int
    category: str = ""

    @property
    def n_frames(self):
        return len(self.frames)

    def validate(self):
        pre = f"episode {self.video_id}: "
        if self.n_frames < 1:
            raise DataError(pre + "needs at least one frame")
        if self.question_tokens.ndim != 2 or self.question_tokens.shape[0] < 1:
            raise DataError(pre + f"question tokens must be [M>=1 x C_text], got {self.question_tokens.shape}")
        if self.answer_bank.ndim != 2 or self.answer_bank.shape[0] < 1:
            raise DataError(pre + f"answer bank must be [|A|>=1 x C_text], got {self.answer_bank.shape}")
        if self.question_tokens.shape[1] != self.answer_bank.shape[1]:
            raise DataError(pre + "question and answer widths differ")
        if self.qa_mode not in QA_MODES:
            raise DataError(pre + f"unknown qa_mode {self.qa_mode!r}")
        if not isinstance(self.label, int) or isinstance(self.label, bool):
            raise DataError(pre + "label must be an integer")
        if not 0 <= self.label < self.answer_bank.shape[0]:
            raise DataError(pre + f"label {self.label} outside [0, {self.answer_bank.shape[0]})")
        widths = {f.patch_embeddings.shape[1] for f in self.frames}
        if len(widths) != 1:
            raise DataError(pre + f"inconsistent visual widths {sorted(widths)}")
        for name, arr in (("question", self.question_tokens), ("answers", self.answer_bank)):
            if not np.all(np.isfinite(arr)):
                raise DataError(pre + f"non-finite values in {name}")
        for f in self.frames:
            f.validate(context=pre)


def pad_grounding(rec, m_max=M_MAX):
    """Zero-pad grounding arrays to m_max rows; returns (record, node mask)."""
    m = rec.m
    if m > m_max:
        raise DataError(f"frame {rec.frame_index}: m={m} exceeds pad width {m_max}")
    c = rec.patch_embeddings.shape[1]
    roi = np.zeros((m_max, c), dtype=np.float32)
    roi[:m] = rec.roi_features
    spatial = np.zeros((m_max, 4), dtype=np.float32)
    spatial[:m] = rec.spatial_features
    mask = np.zeros(m_max, dtype=bool)
    mask[:m] = True
    padded = FrameRecord(
        frame_index=rec.frame_index,
        patch_embeddings=rec.patch_embeddings,
        boxes=list(rec.boxes),
        roi_features=roi,
        spatial_features=spatial,
        frame_feature=rec.frame_feature,
        n_tokens=rec.n_tokens,
    )
    return padded, mask


def _require_str(entry, key, context):
    v = entry[key]
    if not isinstance(v, str) or not v:
        raise DataError(f"{context}: field {key!r} must be a nonempty string")
    return v


def validate_manifest_entry(entry):
    """Structural validation of one NDJSON manifest object."""
    if not isinstance(entry, dict):
        raise DataError("manifest entry must be a JSON object")
    vid = entry.get("video_id")
    context = f"manifest entry {vid!r}"
    keys = set(entry)
    if keys != MANIFEST_KEYS:
        missing = MANIFEST_KEYS - keys
        extra = keys - MANIFEST_KEYS
        raise DataError(f"{context}: bad keys (missing {sorted(missing)}, extra {sorted(extra)})")
    _require_str(entry, "video_id", context)
    _require_str(entry, "question_file", context)
    _require_str(entry, "answers_file", context)
    if not isinstance(entry["category"], str):
        raise DataError(f"{context}: category must be a string")
    if not isinstance(entry["label"], int) or isinstance(entry["label"], bool):
        raise DataError(f"{context}: label must be an integer")
    if entry["label"] < 0:
        raise DataError(f"{context}: label must be nonnegative")
    if entry["qa_mode"] not in QA_MODES:
        raise DataError(f"{context}: qa_mode must be one of {QA_MODES}")
    frames = entry["frames"]
    if not isinstance(frames, list) or not frames:
        raise DataError(f"{context}: frames must be a nonempty list")
    last_t = -1
    for fr in frames:
        if not isinstance(fr, dict) or set(fr) != FRAME_KEYS:
            raise DataError(f"{context}: frame entry keys must be {sorted(FRAME_KEYS)}")
        t = fr["t"]
        if not isinstance(t, int) or isinstance(t, bool) or t < 0:
            raise DataError(f"{context}: frame index {t!r} must be a nonnegative integer")
        if t <= last_t:
            raise DataError(f"{context}: frame indices must be strictly increasing")
        last_t = t
        _require_str(fr, "embeddings_file", context)
        _require_str(fr, "grounding_file", context)
    return entry


def _load_grounding(path, base):
    try:
        g = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"grounding file {path}: {exc}") from exc
    keys = set(g)
    if not GROUNDING_KEYS <= keys or not keys <= (GROUNDING_KEYS | GROUNDING_OPTIONAL):
        raise DataError(f"grounding file {path}: bad keys {sorted(keys)}")
    boxes = g["boxes"]
    if not isinstance(boxes, list):
        raise DataError(f"grounding file {path}: boxes must be a list")
    roi = read_tensor(base / g["roi_file"]).data
    spatial = read_tensor(base / g["spatial_file"]).data
    frame_feature = read_tensor(base / g["frame_feature_file"]).data
    return boxes, roi, spatial, frame_feature, g.get("n_tokens", -1)


def load_episode(entry, base_dir):
    """Materialize and fully validate one Episode from a manifest entry."""
    validate_manifest_entry(entry)
    base = Path(base_dir)
    vid = entry["video_id"]
    try:
        question = read_tensor(base / entry["question_file"]).data
        answers = read_tensor(base / entry["answers_file"]).data
        frames = []
        for fr in entry["frames"]:
            emb = read_tensor(base / fr["embeddings_file"]).data
            boxes, roi, spatial, ff, n_tokens = _load_grounding(base / fr["grounding_file"], base)
            frames.append(
                FrameRecord(
                    frame_index=fr["t"],
                    patch_embeddings=emb,
                    boxes=[tuple(b) for b in boxes],
                    roi_features=roi,
                    spatial_features=spatial,
                    frame_feature=ff,
                    n_tokens=n_tokens,
                )
            )
    except (OSError, FormatError) as exc:
        raise DataError(f"episode {vid}: {exc}") from exc
    ep = Episode(
        video_id=vid,
        frames=frames,
        question_tokens=question,
        answer_bank=answers,
        qa_mode=entry["qa_mode"],
        label=entry["label"],
        category=entry["category"],
    )
    ep.validate()
    return ep


def load_manifest(path):
    """Read an NDJSON manifest; every entry is structurally validated."""
    entries = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON ({exc})") from exc
            entries.append(validate_manifest_entry(obj))
    return entries


def write_manifest(path, entries):
    with open(path, "w") as fh:
        for e in entries:
            fh.write(json.dumps(e) + "\n")


def save_episode(episode, base_dir):
    """Write all episode payloads under base_dir/<video_id>/, return the manifest entry."""
    base = Path(base_dir)
    vid = episode.video_id
    epdir = base / vid
    epdir.mkdir(parents=True, exist_ok=True)
    write_tensor(epdir / "question.lgqe", episode.question_tokens)
    write_tensor(epdir / "answers.lgqe", episode.answer_bank)
    frames = []
    for rec in episode.frames:
        t = rec.frame_index
        emb_rel = f"{vid}/frame_{t:04d}_emb.lgqe"
        roi_rel = f"{vid}/frame_{t:04d}_roi.lgqe"
        spa_rel = f"{vid}/frame_{t:04d}_spatial.lgqe"
        ff_rel = f"{vid}/frame_{t:04d}_feat.lgqe"
        gnd_rel = f"{vid}/frame_{t:04d}_grounding.json"
        write_tensor(base / emb_rel, rec.patch_embeddings)
        write_tensor(base / roi_rel, rec.roi_features)
        write_tensor(base / spa_rel, rec.spatial_features)
        write_tensor(base / ff_rel, rec.frame_feature)
        grounding = {
            "boxes": [[float(v) for v in b] for b in rec.boxes],
            "roi_file": roi_rel,
            "spatial_file": spa_rel,
            "frame_feature_file": ff_rel,
        }
        if rec.n_tokens != rec.patch_embeddings.shape[0]:
            grounding["n_tokens"] = int(rec.n_tokens)
        (base / gnd_rel).write_text(json.dumps(grounding) + "\n")
        frames.append({"t": t, "embeddings_file": emb_rel, "grounding_file": gnd_rel})
    return {
        "video_id": vid,
        "question_file": f"{vid}/question.lgqe",
        "answers_file": f"{vid}/answers.lgqe",
        "label": int(episode.label),
        "qa_mode": episode.qa_mode,
        "category": episode.category,
        "frames": frames,
    }
