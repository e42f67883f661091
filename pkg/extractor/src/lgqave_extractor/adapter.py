"""Extraction jobs: video + question/answers -> interchange files on disk."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import formats
from .encoders import make_text_encoder, make_vision_encoder
from .frames import load_frames, sample_slots
from .grounding import MAX_BOXES, make_grounding, roi_feature


@dataclass
class ExtractionJob:
    video: str
    question: str
    answers: list
    out_dir: str
    video_id: str = ""
    label: int = 0
    category: str = ""
    qa_mode: str = "multi_choice"
    vision_encoder: str = "stub"
    text_encoder: str = "stub"
    grounding: str = "saliency"
    target_frames: int = 32
    clips: int = 8

    def __post_init__(self):
        if not self.video_id:
            self.video_id = Path(self.video).stem or "video"
        if len(self.answers) < 2:
            raise ValueError("need at least 2 answer options")
        if not 0 <= self.label < len(self.answers):
            raise ValueError(f"label {self.label} outside the answer bank")


def extract_frame_embeddings(job, frames, slots, vision, base):
    """One [N_TOKENS x C] tensor file per sampled slot; returns per-slot info."""
    vid = job.video_id
    (base / vid).mkdir(parents=True, exist_ok=True)
    cache = {}
    infos = []
    for slot, fidx in enumerate(slots):
        if fidx not in cache:
            emb, n_tokens = vision.encode(frames[fidx])
            cache[fidx] = (emb.astype(np.float32), n_tokens)
        emb, n_tokens = cache[fidx]
        rel = f"{vid}/frame_{slot:04d}_emb.lgqe"
        formats.write_tensor(base / rel, emb)
        infos.append({"slot": slot, "frame": fidx, "file": rel, "emb": emb, "n_tokens": n_tokens})
    return infos


def extract_text_embeddings(job, text_enc, base):
    vid = job.video_id
    q = text_enc.encode_tokens(job.question).astype(np.float32)
    bank = np.stack([text_enc.encode_pooled(a) for a in job.answers]).astype(np.float32)
    q_rel, a_rel = f"{vid}/question.lgqe", f"{vid}/answers.lgqe"
    formats.write_tensor(base / q_rel, q)
    formats.write_tensor(base / a_rel, bank)
    return q_rel, a_rel


def ground_objects(job, infos, vision, grounder, base):
    """Grounding JSON (+ roi/spatial/frame-feature tensors) per sampled frame."""
    vid = job.video_id
    centers = vision.patch_centers()
    frame_entries = []
    for info in infos:
        slot, emb, n_tokens = info["slot"], info["emb"], info["n_tokens"]
        boxes = grounder.ground(emb, centers, n_tokens, job.question)[:MAX_BOXES]
        rois = (
            np.stack([roi_feature(emb, centers, b, n_tokens) for b in boxes])
            if boxes
            else np.zeros((0, emb.shape[1]), dtype=np.float32)
        )
        spatial = np.asarray(boxes, dtype=np.float32).reshape(len(boxes), 4)
        frame_feature = emb[:n_tokens].mean(axis=0)
        roi_rel = f"{vid}/frame_{slot:04d}_roi.lgqe"
        spa_rel = f"{vid}/frame_{slot:04d}_spatial.lgqe"
        ff_rel = f"{vid}/frame_{slot:04d}_feat.lgqe"
        gnd_rel = f"{vid}/frame_{slot:04d}_grounding.json"
        formats.write_tensor(base / roi_rel, rois)
        formats.write_tensor(base / spa_rel, spatial)
        formats.write_tensor(base / ff_rel, frame_feature)
        formats.write_grounding(
            base / gnd_rel,
            boxes,
            roi_rel,
            spa_rel,
            ff_rel,
            n_tokens=n_tokens if n_tokens != emb.shape[0] else None,
        )
        frame_entries.append(
            {"t": slot, "embeddings_file": info["file"], "grounding_file": gnd_rel}
        )
    return frame_entries


def run_job(job):
    """Full extraction; returns the manifest entry (also appended on disk)."""
    base = Path(job.out_dir)
    base.mkdir(parents=True, exist_ok=True)
    vision = make_vision_encoder(job.vision_encoder)
    text_enc = make_text_encoder(job.text_encoder)
    grounder = make_grounding(job.grounding)
    frames = load_frames(job.video)
    slots = sample_slots(len(frames), job.target_frames, job.clips,
                         job.target_frames // job.clips)
    infos = extract_frame_embeddings(job, frames, slots, vision, base)
    q_rel, a_rel = extract_text_embeddings(job, text_enc, base)
    frame_entries = ground_objects(job, infos, vision, grounder, base)
    entry = formats.manifest_entry(
        job.video_id, q_rel, a_rel, job.label, job.qa_mode, job.category, frame_entries
    )
    formats.append_manifest(base / "extracted.ndjson", entry)
    return entry
