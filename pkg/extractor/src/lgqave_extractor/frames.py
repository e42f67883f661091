"""Frame acquisition: image directories or video files, then clip sampling."""

from pathlib import Path

import numpy as np
from PIL import Image

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp"}


def load_frames(source):
    """RGB uint8 frames from a directory of images or a video file.

    Video decoding needs opencv; a directory of numbered images works
    everywhere and is the recommended offline path.
    """
    src = Path(source)
    if src.is_dir():
        paths = sorted(p for p in src.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
        if not paths:
            raise FileNotFoundError(f"no image frames in {src}")
        return [np.asarray(Image.open(p).convert("RGB")) for p in paths]
    if not src.exists():
        raise FileNotFoundError(src)
    try:
        import cv2
    except ImportError as exc:
        raise RuntimeError(
            f"decoding video file {src} requires opencv-python; "
            "pass a directory of frames instead"
        ) from exc
    cap = cv2.VideoCapture(str(src))
    frames = []
    while True:
        ok, frame = cap.read()
        if not ok:
            break
        frames.append(frame[:, :, ::-1].copy())  # BGR -> RGB
    cap.release()
    if not frames:
        raise RuntimeError(f"could not decode any frames from {src}")
    return frames


def sample_slots(n_frames, target=32, clips=8, per_clip=4):
    """Uniformly strided sampling into the fixed 8x4 clip layout."""
    assert clips * per_clip == target
    if n_frames >= target:
        return [i * n_frames // target for i in range(target)]
    return list(range(n_frames)) + [n_frames - 1] * (target - n_frames)
