from advnav.core.types import AgentState, Dataset, EpisodeRecord, SceneContext, Trajectory, Window
from advnav.core.metrics import ade, fde, split_dataset
from advnav.core.windows import iter_windows, make_context
from advnav.core.io import DatasetFormatError, atomic_write, read_dataset, write_dataset
from advnav.core.ethucy import TrajectoryParseError, ingest, parse_trajectory_file

__all__ = [
    "AgentState", "Dataset", "EpisodeRecord", "SceneContext", "Trajectory", "Window",
    "ade", "fde", "split_dataset", "iter_windows", "make_context",
    "DatasetFormatError", "atomic_write", "read_dataset", "write_dataset",
    "TrajectoryParseError", "ingest", "parse_trajectory_file",
]
