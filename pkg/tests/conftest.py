import pytest
import torch
from hypothesis import HealthCheck, settings

from rwen_tts.deptree import DependencyTree

torch.set_num_threads(1)

settings.register_profile(
    "default",
    max_examples=50,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


# The running example used throughout: a 10-word sentence whose parse has
# nested modifiers, so word-to-root and adjacent-word paths are non-trivial.
SHARK_FORMS = ("The", "blue", "shark", "with", "sharp", "teeth", "can",
               "eat", "fish", "quickly")
SHARK_HEADS = (3, 3, 8, 6, 6, 3, 8, 0, 8, 8)
SHARK_RELS = ("det", "amod", "nsubj", "case", "amod", "nmod", "aux",
              "root", "obj", "advmod")


@pytest.fixture
def shark_tree() -> DependencyTree:
    return DependencyTree(SHARK_HEADS, SHARK_RELS)


@pytest.fixture
def shark_conllu() -> str:
    lines = ["# sent_id = shark"]
    for i, form in enumerate(SHARK_FORMS, start=1):
        lines.append(
            f"{i}\t{form}\t_\t_\t_\t_\t{SHARK_HEADS[i - 1]}\t"
            f"{SHARK_RELS[i - 1]}\t_\t_"
        )
    lines.append("")
    return "\n".join(lines)
