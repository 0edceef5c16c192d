import pytest


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run the full-pipeline acceptance tests"
    )


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


TINY_INI = """\
[channel]
n_m = 2
n_n = 2

[code]
hidden = 8
jam_hidden = 4
text_tokens = 3
embed_dim = 2
vocab = 16

[plan]
epochs1 = 1
epochs2 = 1
epochs3 = 1
epochs5 = 1
k = 1
t = 2
batch_size = 4

[agent]
batch_size = 1
buffer_size = 10
hidden = 8

[data]
height = 8
width = 8
n_train = 8
n_test = 4
n_eval = 4
"""


@pytest.fixture
def tiny_config(tmp_path):
    """A 2x2-antenna experiment on 8x8 images that trains in seconds."""
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_INI)
    return path
