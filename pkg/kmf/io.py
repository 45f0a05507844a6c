"""
CSV emission and snapshot files
"""

import io
import json
import logging
import re
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import pandas as pd

from kmf.dynamics import ParticleState

logger = logging.getLogger('kmf.io')

FLOAT_FORMAT = '%.12g'
PathLike = Union[str, Path]

_HEADER = re.compile(r'#\s*t=(?P<t>[^,]+),\s*N=(?P<N>\d+),\s*seed=(?P<seed>-?\d+)')


def _timestamp_line() -> str:
    return f"# generated {datetime.now(timezone.utc).isoformat(timespec='seconds')}\n"


def frame_to_csv_text(frame: pd.DataFrame) -> str:
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, float_format=FLOAT_FORMAT, lineterminator='\n')
    return buffer.getvalue()


def write_csv(frame: pd.DataFrame, path: PathLike, timestamp: bool = False) -> Path:
    """Write a frame as UTF-8 CSV with LF endings and a fixed float format"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    text = frame_to_csv_text(frame)
    if timestamp:
        text = _timestamp_line() + text
    with open(path, 'w', encoding='utf-8', newline='\n') as handle:
        handle.write(text)
    logger.debug("Wrote %s (%d rows)", path, len(frame))
    return path


def read_csv(path: PathLike) -> pd.DataFrame:
    return pd.read_csv(path, comment='#')


def write_snapshot(state: ParticleState, path: PathLike, seed: int, replica: int = 0,
                   timestamp: bool = False) -> Path:
    """One row per particle: x_0..x_{d-1}, v_0..v_{d-1}"""
    d = state.dim
    columns = [f'x_{k}' for k in range(d)] + [f'v_{k}' for k in range(d)]
    frame = pd.DataFrame(np.hstack([state.X[replica], state.V[replica]]), columns=columns)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = f"# t={state.t!r}, N={state.N}, seed={int(seed)}\n"
    text = header + frame_to_csv_text(frame)
    if timestamp:
        text = _timestamp_line() + text
    with open(path, 'w', encoding='utf-8', newline='\n') as handle:
        handle.write(text)
    return path


def read_snapshot(path: PathLike) -> Tuple[ParticleState, Dict[str, Any]]:
    """Inverse of write_snapshot; returns the state and its header fields"""
    meta: Dict[str, Any] = {}
    with open(path, 'r', encoding='utf-8') as handle:
        for line in handle:
            if not line.startswith('#'):
                break
            match = _HEADER.match(line.strip())
            if match:
                meta = {'t': float(match['t']), 'N': int(match['N']), 'seed': int(match['seed'])}
    frame = read_csv(path)
    x_cols = [c for c in frame.columns if c.startswith('x_')]
    v_cols = [c for c in frame.columns if c.startswith('v_')]
    if not x_cols or len(x_cols) != len(v_cols):
        raise ValueError(f"{path} is not a snapshot file (columns {list(frame.columns)})")
    state = ParticleState(meta.get('t', 0.0), frame[x_cols].to_numpy(), frame[v_cols].to_numpy())
    return state, meta


def write_json(data: Dict[str, Any], path: PathLike) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='\n') as handle:
        json.dump(data, handle, indent=2, sort_keys=True)
        handle.write('\n')
    return path


def output_path(output_dir: PathLike, name: str, suffix: str, ext: str = 'csv') -> Path:
    return Path(output_dir) / f"{name}_{suffix}.{ext}"


def verdict_frame(rows) -> pd.DataFrame:
    return pd.DataFrame(rows, columns=['experiment', 'theory_value', 'measured', 'threshold', 'pass'])


def optional_float(value: Optional[float]) -> float:
    return float('nan') if value is None else float(value)
