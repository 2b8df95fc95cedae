"""Static cost model for orthogonalizing a sharded P×Q gradient on S devices.

Four ways to apply a spectral step to a gradient whose shards live on S
devices, with every Θ(·) constant set to 1:

    all_gather      gather the full matrix, orthogonalize locally on every
                    device: one collective moving P·Q entries, P²Q flops.
    distributed_ns  Newton–Schulz on the sharded matrix: one all-reduce of
                    the P×P Gram per iteration, P²Q/S flops.
    reshard         all-to-all into whole-matrix ownership, orthogonalize,
                    all-to-all back: two collectives of P·Q/S entries,
                    P²Q/S flops.
    shardwise       polar factor of each local shard only: no communication,
                    P²Q/S² flops.

P ≤ Q is assumed; a taller matrix is transposed first.
"""
from collections import namedtuple


METHODS = ("all_gather", "distributed_ns", "reshard", "shardwise")


CostRow = namedtuple("CostRow", ["method", "collectives", "comm_entries",
                                 "comm_bytes", "per_device_flops"])


def cost_table(P, Q, S, iters=5, bytes_per_entry=2):
    """Per-device communication and flops of the four methods.

    Arguments:
        P, Q (int): Gradient shape.
        S (int): Device count.
        iters (int, optional): Newton–Schulz iterations.
        bytes_per_entry (int, optional): Bytes per matrix entry.

    Returns:
        list: One `CostRow` per entry of `METHODS`, in that order.
    """
    for name, value in (("P", P), ("Q", Q), ("S", S), ("iters", iters),
                        ("bytes_per_entry", bytes_per_entry)):
        if int(value) < 1:
            raise ValueError("{} must be >= 1, got {}".format(name, value))
    P, Q = min(P, Q), max(P, Q)
    work = float(P) * P * Q
    entries = {
        "all_gather": (1, float(P) * Q),
        "distributed_ns": (iters, float(iters) * P * P),
        "reshard": (2, 2.0 * P * Q / S),
        "shardwise": (0, 0.0),
    }
    flops = {
        "all_gather": work,
        "distributed_ns": work / S,
        "reshard": work / S,
        "shardwise": work / (S * S),
    }
    return [CostRow(method=method,
                    collectives=entries[method][0],
                    comm_entries=entries[method][1],
                    comm_bytes=entries[method][1] * bytes_per_entry,
                    per_device_flops=flops[method])
            for method in METHODS]
