# Support nodes for barrier-diffuser
from .trap_node import NODE_CLASS_MAPPINGS as TRAP_NODE_CLASS_MAPPINGS, NODE_DISPLAY_NAME_MAPPINGS as TRAP_NODE_DISPLAY

SUPPORT_NODE_CLASS_MAPPINGS = {}
SUPPORT_NODE_DISPLAY_NAME_MAPPINGS = {}

SUPPORT_NODE_CLASS_MAPPINGS.update(TRAP_NODE_CLASS_MAPPINGS)
SUPPORT_NODE_DISPLAY_NAME_MAPPINGS.update(TRAP_NODE_DISPLAY)
