""" Reading and writing of the JSON and CSV report files. """

import csv
import json
import math
import os

import numpy as np

# Local imports
import log

logger = log.create_logger(name="Reports")


def sanitize(data):
    """Plain JSON values: numpy scalars unwrapped, non-finite floats as strings."""

    if isinstance(data, dict):
        return {str(key): sanitize(value) for key, value in data.items()}
    if isinstance(data, (list, tuple, np.ndarray)):
        return [sanitize(value) for value in data]
    if isinstance(data, (bool, np.bool_)):
        return bool(data)
    if isinstance(data, (int, np.integer)):
        return int(data)
    if isinstance(data, (float, np.floating)):
        value = float(data)
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return data


def write_json(data, path):
    """Write with the key order of `data`, no timestamps, so reruns are byte-identical."""

    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    with open(path, "w") as json_file:
        json.dump(sanitize(data), json_file, indent=2, allow_nan=False)
        json_file.write("\n")

    logger.debug(f"Wrote {path}")


def read_json(path):
    with open(path) as json_file:
        return json.load(json_file)


def write_csv(rows, columns, path):
    """One row per dict, columns in the given order; None becomes an empty cell."""

    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    with open(path, "w", newline="") as csv_file:
        writer = csv.writer(csv_file)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(["" if row.get(c) is None else sanitize(row.get(c)) for c in columns])

    logger.debug(f"Wrote {len(rows)} rows to {path}")
