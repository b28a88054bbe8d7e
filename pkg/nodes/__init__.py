"""
Workflow nodes of barrier-diffuser, merged with the support nodes into one registry.
"""

import logging

from support_nodes import SUPPORT_NODE_CLASS_MAPPINGS, SUPPORT_NODE_DISPLAY_NAME_MAPPINGS

from .benchmark_node import NODE_CLASS_MAPPINGS as benchmark_mappings, NODE_DISPLAY_NAME_MAPPINGS as benchmark_display
from .dataset_node import NODE_CLASS_MAPPINGS as dataset_mappings, NODE_DISPLAY_NAME_MAPPINGS as dataset_display
from .plan_node import NODE_CLASS_MAPPINGS as plan_mappings, NODE_DISPLAY_NAME_MAPPINGS as plan_display
from .train_node import NODE_CLASS_MAPPINGS as train_mappings, NODE_DISPLAY_NAME_MAPPINGS as train_display

logger = logging.getLogger(__name__)

NODE_CLASS_MAPPINGS = {}
NODE_DISPLAY_NAME_MAPPINGS = {}

for mappings, display in (
    (dataset_mappings, dataset_display),
    (train_mappings, train_display),
    (plan_mappings, plan_display),
    (benchmark_mappings, benchmark_display),
    (SUPPORT_NODE_CLASS_MAPPINGS, SUPPORT_NODE_DISPLAY_NAME_MAPPINGS),
):
    NODE_CLASS_MAPPINGS.update(mappings)
    NODE_DISPLAY_NAME_MAPPINGS.update(display)

# CLI subcommand -> node
COMMANDS = {
    "gen-data": "GenerateDatasetNode",
    "train": "TrainDenoiserNode",
    "plan": "PlanTrajectoryNode",
    "bench": "BenchmarkNode",
    "trap": "LocalTrapNode",
}

logger.debug(f"Registered {len(NODE_CLASS_MAPPINGS)} nodes: {sorted(NODE_CLASS_MAPPINGS)}")

__all__ = ["NODE_CLASS_MAPPINGS", "NODE_DISPLAY_NAME_MAPPINGS", "COMMANDS"]
