"""Writers for the interchange formats consumed by the main pipeline.

Implemented independently against the documented interface (LGQE1 tensor
files, grounding JSON, NDJSON manifest) rather than importing the pipeline
package, so the formats stay an honest cross-implementation contract.
"""

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"LGQE1"
DTYPE_F32 = 0x01


def write_tensor(path, array):
    data = np.ascontiguousarray(array, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(bytes([DTYPE_F32]))
        fh.write(struct.pack("<I", data.ndim))
        for dim in data.shape:
            fh.write(struct.pack("<I", dim))
        fh.write(data.tobytes())


def write_grounding(path, boxes, roi_file, spatial_file, frame_feature_file, n_tokens=None):
    payload = {
        "boxes": [[float(v) for v in b] for b in boxes],
        "roi_file": roi_file,
        "spatial_file": spatial_file,
        "frame_feature_file": frame_feature_file,
    }
    if n_tokens is not None:
        payload["n_tokens"] = int(n_tokens)
    Path(path).write_text(json.dumps(payload) + "\n")


def manifest_entry(video_id, question_file, answers_file, label, qa_mode, category, frames):
    return {
        "video_id": video_id,
        "question_file": question_file,
        "answers_file": answers_file,
        "label": int(label),
        "qa_mode": qa_mode,
        "category": category,
        "frames": frames,
    }


def append_manifest(path, entry):
    with open(path, "a") as fh:
        fh.write(json.dumps(entry) + "\n")
