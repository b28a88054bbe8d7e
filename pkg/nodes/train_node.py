import logging
from typing import Any, Dict, Tuple

from utils.common import artifact_header, config_hash
from utils.data_loader import output_path
from utils.diffusion import DenoiserModel, make_schedule, save_checkpoint, train
from utils.errors import DatasetError
from utils.maze import median_step_gap
from utils.planning import seeded
from utils.report_writer import load_dataset

logger = logging.getLogger(__name__)

MODEL_CATEGORY = "BarrierDiffuser/Model"


class TrainDenoiserNode:
    """Fits the epsilon-prediction denoiser to the generated dataset and saves a checkpoint."""

    @classmethod
    def INPUT_TYPES(cls) -> Dict[str, Any]:
        return {"required": {"config": ("DICT", {"tooltip": "Loaded run configuration"})}}

    RETURN_TYPES = ("STRING", "FLOAT", "FLOAT")
    RETURN_NAMES = ("checkpoint_path", "initial_loss", "final_loss")
    FUNCTION = "process"
    CATEGORY = MODEL_CATEGORY

    def process(self, config: Dict[str, Any]) -> Tuple[str, float, float]:
        dataset_file = output_path(config, config["dataset"]["path"])
        if not dataset_file.is_file():
            raise DatasetError(f"no dataset at {dataset_file}; run gen-data first")
        dataset, stats, _ = load_dataset(dataset_file)

        rng = seeded(config, 1)
        arch = config["model"]
        model = DenoiserModel(
            dataset.shape[1] - 1,
            dataset.shape[2],
            int(arch["hidden_width"]),
            int(arch["n_hidden"]),
            int(arch["time_dim"]),
            rng=rng,
        )
        schedule = config["schedule"]
        sched = make_schedule(int(schedule["n_steps"]), float(schedule["beta_min"]), float(schedule["beta_max"]))
        section = config["training"]
        log = train(
            model,
            dataset,
            sched,
            int(section["epochs"]),
            float(section["lr"]),
            rng,
            batch_size=int(section["batch_size"]),
            optimizer=section["optimizer"],
            progress=bool(config.get("progress")),
        )
        extra = {
            "median_step_gap": median_step_gap(dataset),
            "epoch_losses": log.epoch_losses,
            "run": artifact_header(config, config["seed"]),
        }
        path = save_checkpoint(output_path(config, section["checkpoint"]), model, sched, stats, extra)
        logger.info(f"Trained run {config_hash(config)}: loss {log.initial_loss:.4f} -> {log.final_loss:.4f}")
        return str(path), log.initial_loss, log.final_loss


NODE_CLASS_MAPPINGS = {"TrainDenoiserNode": TrainDenoiserNode}
NODE_DISPLAY_NAME_MAPPINGS = {"TrainDenoiserNode": "Train Denoiser"}
