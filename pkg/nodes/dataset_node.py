import logging
from typing import Any, Dict, Tuple

from utils.common import artifact_header
from utils.data_loader import load_run_inputs, output_path
from utils.maze import generate_dataset, median_step_gap
from utils.planning import seeded
from utils.report_writer import emit_dataset

logger = logging.getLogger(__name__)

DATA_CATEGORY = "BarrierDiffuser/Data"


class GenerateDatasetNode:
    """Shortest-path demonstrations through the configured maze, written as a flat table."""

    @classmethod
    def INPUT_TYPES(cls) -> Dict[str, Any]:
        return {"required": {"config": ("DICT", {"tooltip": "Loaded run configuration"})}}

    RETURN_TYPES = ("STRING", "INT", "FLOAT")
    RETURN_NAMES = ("dataset_path", "n_traj", "median_step_gap")
    FUNCTION = "process"
    CATEGORY = DATA_CATEGORY

    def process(self, config: Dict[str, Any]) -> Tuple[str, int, float]:
        maze, _ = load_run_inputs(config)
        section = config["dataset"]
        dataset, stats = generate_dataset(
            maze,
            int(section["n_traj"]),
            int(section["horizon"]),
            seeded(config),
            jitter=float(section["jitter"]),
        )
        header = artifact_header(config, config["seed"])
        path = emit_dataset(dataset, stats, output_path(config, section["path"]), header)
        return str(path), int(dataset.shape[0]), median_step_gap(dataset)


NODE_CLASS_MAPPINGS = {"GenerateDatasetNode": GenerateDatasetNode}
NODE_DISPLAY_NAME_MAPPINGS = {"GenerateDatasetNode": "Generate Maze Dataset"}
