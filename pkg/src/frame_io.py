"""Reading and writing frames, odometry and trajectories"""
import ctypes
import logging
import os

import cv2
import numpy as np
import pandas as pd

try:
    from .config import SLOG_MAGIC, CSV_FLOAT_FORMAT, TRAJECTORY_COLUMNS
    from .errors import FormatError, InvalidLabel
    from .geom import Pose
    from .semantics import LabelImage, LogitsImage
except ImportError:
    from config import SLOG_MAGIC, CSV_FLOAT_FORMAT, TRAJECTORY_COLUMNS
    from errors import FormatError, InvalidLabel
    from geom import Pose
    from semantics import LabelImage, LogitsImage


# .slog header, followed by H*W*N little-endian float32 logits in row-major order
class SlogHeader(ctypes.LittleEndianStructure):
    _pack_ = 1
    _fields_ = [
        ("magic", ctypes.c_char * 4),
        ("width", ctypes.c_uint32),
        ("height", ctypes.c_uint32),
        ("num_classes", ctypes.c_uint32),
    ]


def write_logits(img, path):
    header = SlogHeader(SLOG_MAGIC, img.width, img.height, img.num_classes)
    with open(path, "wb") as fh:
        fh.write(bytes(header))
        fh.write(np.ascontiguousarray(img.logits, dtype="<f4").tobytes())


def read_logits(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    size = ctypes.sizeof(SlogHeader)
    if len(raw) < size:
        raise FormatError(f"{path}: file too short for a logits header")
    header = SlogHeader.from_buffer_copy(raw[:size])
    if header.magic != SLOG_MAGIC:
        raise FormatError(f"{path}: bad magic {header.magic!r}")
    count = header.width * header.height * header.num_classes
    if len(raw) - size != 4 * count:
        raise FormatError(
            f"{path}: expected {4 * count} bytes of logits for "
            f"{header.width}x{header.height}x{header.num_classes}, found {len(raw) - size}"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=size, count=count)
    return LogitsImage(data.reshape(header.height, header.width, header.num_classes).astype(float))


def write_labels(img, path):
    labels = img.labels
    if labels.size and (labels.min() < 0 or labels.max() > 255):
        raise InvalidLabel(f"PGM labels must be in 0..255, found {labels.min()}..{labels.max()}")
    if not cv2.imwrite(str(path), labels.astype(np.uint8)):
        raise FormatError(f"Could not write label image {path}")


def read_labels(path):
    labels = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if labels is None:
        raise FormatError(f"Could not read label image {path}")
    if labels.ndim != 2:
        raise FormatError(f"{path}: expected a single-channel label image, got shape {labels.shape}")
    return LabelImage(labels.astype(np.int64))


def read_frame(path):
    """LabelImage for .pgm/.png files, LogitsImage for .slog files"""
    ext = os.path.splitext(str(path))[1].lower()
    if ext == ".slog":
        return read_logits(path)
    if ext in (".pgm", ".png"):
        return read_labels(path)
    raise FormatError(f"Unsupported frame format '{ext}' for {path}")


def list_frames(directory):
    """Frame files in a directory, sorted by name"""
    if not os.path.isdir(directory):
        raise FormatError(f"Frame directory {directory} does not exist")
    names = sorted(
        n for n in os.listdir(directory)
        if os.path.splitext(n)[1].lower() in (".pgm", ".png", ".slog")
    )
    return [os.path.join(directory, n) for n in names]


def poses_to_frame(ids, poses):
    rows = []
    for frame_id, pose in zip(ids, poses):
        q = pose.quaternion()
        rows.append([int(frame_id), *pose.translation.tolist(), *q.tolist()])
    return pd.DataFrame(rows, columns=TRAJECTORY_COLUMNS)


def write_trajectory(path, ids, poses):
    """One row per frame: frame_id, translation, unit quaternion (x, y, z, w)"""
    poses_to_frame(ids, poses).to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
    logging.info(f"Wrote {len(poses)} poses to {path}")


def read_trajectory(path):
    """Returns (frame_ids, poses); rows keep their file order"""
    try:
        df = pd.read_csv(path, skipinitialspace=True)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise FormatError(f"Could not read trajectory {path}: {e}")
    missing = [c for c in TRAJECTORY_COLUMNS if c not in df.columns]
    if missing:
        raise FormatError(f"{path}: missing columns {missing}")
    values = df[TRAJECTORY_COLUMNS[1:]].to_numpy(dtype=float)
    if not np.all(np.isfinite(values)):
        raise FormatError(f"{path}: non-finite values")
    ids = df["frame_id"].astype(int).tolist()
    if len(set(ids)) != len(ids):
        raise FormatError(f"{path}: duplicate frame ids")
    poses = []
    for row, frame_id in zip(values, ids):
        try:
            poses.append(Pose.from_quaternion(row[:3], row[3:]))
        except ValueError as e:
            raise FormatError(f"{path}: frame {frame_id}: {e}")
    return ids, poses


# Odometry rows hold the relative motion from the previous frame to this one;
# the first row is the identity.
write_odometry = write_trajectory
read_odometry = read_trajectory
