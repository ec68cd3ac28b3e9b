import pytest

from knowfuse.experiments import run_knowledge_experiments


@pytest.fixture(scope="session")
def knowledge_experiments(tmp_path_factory):
    """Shared run of the synthetic ablation experiments (a few minutes)."""
    root = tmp_path_factory.mktemp("experiments")
    return run_knowledge_experiments(root)
