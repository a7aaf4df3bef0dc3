import torch


def pytest_configure(config):
    # Single-threaded torch keeps every test bit-reproducible.
    torch.set_num_threads(1)
