"""ilmfuse: RNN-T and attention decoder inference with external LM fusion.

The package decodes utterances with small recurrent end-to-end models and
combines their scores with external language models by shallow fusion,
density ratio, or internal-LM subtraction.  Models and features travel in a
single binary container format; evaluation covers WER and perplexity.
"""

__version__ = "0.1.0"

from ilmfuse.errors import (
    ConfigError,
    ContractError,
    DimensionError,
    FormatError,
    IlmFuseError,
    NumericError,
    ValidationError,
)

__all__ = [
    "ConfigError",
    "ContractError",
    "DimensionError",
    "FormatError",
    "IlmFuseError",
    "NumericError",
    "ValidationError",
    "__version__",
]
