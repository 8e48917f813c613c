import numpy as np

TRAIN, VAL, TEST = "train", "val", "test"


def assign_splits(total_frames: int):
    """Every 16th frame (index 0 mod 16) validates, the ones half-way between (8 mod 16) test."""
    if total_frames < 32:
        raise ValueError(f"need at least 32 frames for a test split, got {total_frames}")
    tags = []
    for i in range(total_frames):
        r = i % 16
        tags.append(VAL if r == 0 else TEST if r == 8 else TRAIN)
    return tags


def split_indices(tags, which):
    return np.array([i for i, t in enumerate(tags) if t == which], dtype=np.int64)


def nearest_index(t: int, candidates) -> int:
    """Closest candidate frame to ``t``; ties go to the earlier frame."""
    c = np.asarray(candidates)
    if c.size == 0:
        raise ValueError("no candidate frames")
    return int(c[np.argmin(np.abs(c - t))])
