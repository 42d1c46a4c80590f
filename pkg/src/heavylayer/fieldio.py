"""Nodal field dumps: a short text header followed by CSV rows or raw float64."""

import numpy as np

MAGIC = "# heavylayer-field v1"


def write_field(path, grid, values, names=("u",)):
    """Write nodal ``values`` (n_nodes, ncol) with node coordinates.

    ``.bin`` files carry the header, an ``END`` line and then little-endian
    float64 rows ``[x_0..x_{d-1}, values...]``; any other suffix gets CSV rows.
    """
    values = np.asarray(values, dtype=float).reshape(grid.n_nodes, -1)
    coords = grid.node_coords
    cols = [f"x{j}" for j in range(grid.dim)]
    per = values.shape[1] // len(names)
    for name in names:
        cols += [f"{name}{j}" for j in range(per)]
    binary = str(path).endswith(".bin")
    header = [
        MAGIC,
        f"# mesh {grid.name}",
        f"# dim {grid.dim}",
        f"# nodes {grid.n_nodes}",
        f"# components {values.shape[1]}",
        f"# columns {','.join(cols)}",
        f"# format {'float64-le' if binary else 'csv'}",
    ]
    data = np.hstack([coords, values])
    if binary:
        with open(path, "wb") as fh:
            fh.write(("\n".join(header) + "\nEND\n").encode())
            fh.write(data.astype("<f8").tobytes())
    else:
        with open(path, "w") as fh:
            fh.write("\n".join(header) + "\n")
            fh.write(",".join(cols) + "\n")
            np.savetxt(fh, data, delimiter=",", fmt="%.17g")


def read_field(path):
    """Read a dump back; returns ``(meta, columns, data)``."""
    with open(path, "rb") as fh:
        raw = fh.read()
    meta = {}
    lines = raw.split(b"\n")
    if lines[0].decode() != MAGIC:
        raise ValueError(f"{path}: not a field dump")
    offset = 0
    for line in lines:
        offset += len(line) + 1
        text = line.decode()
        if text == "END":
            break
        if not text.startswith("# "):
            offset -= len(line) + 1
            break
        key, _, val = text[2:].partition(" ")
        meta[key] = val
    cols = meta["columns"].split(",")
    if meta["format"] == "float64-le":
        data = np.frombuffer(raw[offset:], dtype="<f8").reshape(int(meta["nodes"]), len(cols))
    else:
        body = raw[offset:].decode().splitlines()
        data = np.loadtxt(body[1:], delimiter=",", ndmin=2)
    return meta, cols, data
