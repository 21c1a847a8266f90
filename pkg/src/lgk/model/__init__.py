"""Knowledge-guided navigation model."""

from lgk.model.config import TOGGLES, ModelConfig
from lgk.model.features import (
    InstructionInputs,
    StepInputs,
    instruction_inputs,
    step_inputs,
)
from lgk.model.network import ActionScores, LGKModel, StepOutput
