"""Writer for the APEF feature container.

Layout (little-endian): magic "APEF", version u32, kind u8, 3 reserved
bytes, num_frames u32, dim u32, then num_frames*dim float32 row-major.
"""

import os
import struct
import tempfile
from pathlib import Path

import numpy as np

MAGIC = b"APEF"
VERSION = 1
KIND_EXTERNAL = 2


def write_external(path, values) -> None:
    """Atomically write a T x 768 float32 matrix as kind "external"."""
    values = np.ascontiguousarray(values, dtype="<f4")
    n, d = values.shape
    hdr = MAGIC + struct.pack("<IB3xII", VERSION, KIND_EXTERNAL, n, d)
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(hdr + values.tobytes())
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
