"""\
Copyright (c) 2026, blurba developers
All rights reserved.

"""
import functools
import inspect
import json
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from blurba import ConfigError


def make_rng(*keys):
    """\
    Creates a numpy Generator deterministically derived from a sequence of non-negative integer keys, e.g.
    (seed, iteration, virtual index, image id). Identical keys always produce identical streams.

    :param keys: non-negative integers
    :return: numpy.random.Generator

    """
    return np.random.default_rng(np.random.SeedSequence([int(k) for k in keys]))


def parallel_map(func, items, threads=1):
    """\
    Applies func to every item, optionally on a thread pool. Results are returned in input order, so any
    subsequent reduction happens in a fixed order regardless of the number of threads.

    :param func: callable taking a single item
    :param items: list of items
    :param threads: maximum number of worker threads. 1 (default) runs serially.
    :return: list of results, in the same order as items

    """
    items = list(items)
    if threads is None or threads <= 1 or len(items) <= 1:
        return [func(item) for item in items]

    results = [None] * len(items)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [(idx, pool.submit(func, item)) for idx, item in enumerate(items)]
        for idx, fut in futures:
            results[idx] = fut.result()
    return results


def chunked(n_items, chunk_size):
    """Splits range(n_items) into consecutive slices of at most chunk_size elements"""
    return [slice(start, min(start + chunk_size, n_items)) for start in range(0, n_items, chunk_size)]


def read_json(path):
    """\
    Reads a JSON file.

    :param path: path to the file
    :return: parsed JSON, or ConfigError if the file cannot be parsed

    """
    with open(path, 'r', encoding='utf-8') as f:
        try:
            return json.load(f)
        except ValueError as e:
            raise ConfigError(f"Error parsing JSON file {path}: {e}") from e


def write_json(obj, path):
    """Writes an object as indented JSON, followed by a newline"""
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(obj, f, indent=4)
        f.write("\n")


def from_config_or_env(env_prefix, config_arg="config"):
    """\
    Decorator that binds function arguments in order of priority (most important first):
    1. args/kwargs which are not None
    2. environment variables
    3. the JSON config file named by the ``config_arg`` argument (if any)
    4. function defaults

    :param env_prefix: prefix for environment variables. Variables are assumed to be named \
    `<prefix> + <name of function argument in all caps>`, e.g. if prefix is ``BLURBA_`` and the function \
    argument is called threads, we'll look for an environment variable named ``BLURBA_THREADS``.
    :param config_arg: name of the function argument holding the path to the JSON config file
    :return: decorated function

    """
    def decorator(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            sig = inspect.signature(func)
            param_values = {name: val for name, val in sig.bind_partial(*args, **kwargs).arguments.items()
                            if val is not None}

            config_path = param_values.get(config_arg) or os.environ.get(f'{env_prefix}{config_arg.upper()}')
            if config_path:
                if not os.path.exists(config_path):
                    raise ConfigError(f"Configuration file {config_path} does not exist")
                config_file = read_json(config_path)
            else:
                config_file = {}

            for param_name in sig.parameters:
                env_name = f'{env_prefix}{param_name.upper()}'
                if param_name in param_values:
                    continue  # value supplied through args/kwargs: ignore env variables and the config file.
                elif env_name in os.environ:
                    param_values[param_name] = os.environ[env_name]
                elif param_name in config_file:
                    param_values[param_name] = config_file[param_name]

            return func(**param_values)

        return wrapper

    return decorator
