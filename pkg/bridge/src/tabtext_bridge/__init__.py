"""File-level adapter for the tabtext toolkit.

Writes the toolkit's exact wire formats (index.bin + ids.txt, manifest.json,
questions_generated.jsonl) from its own encoder and generator backends, so
the main package never needs a model runtime installed. Communication is
one-directional and file-based.
"""

__version__ = "0.1.0"

from .export import export_embeddings
from .generate import finetune_generator, generate_questions
from .models import available_models, register_model

__all__ = [
    "available_models",
    "export_embeddings",
    "finetune_generator",
    "generate_questions",
    "register_model",
]
