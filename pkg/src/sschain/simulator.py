"""Desk-scale throughput experiments over the sharded chain.

A run builds a deterministic transfer workload from a seed, splits it by
sender shard, and lets every shard process its own stream as a little
chain of its own, optionally on a process pool. Transfers whose receiver
lives in another shard debit locally and hand the credit to the owning
shard, which folds it into the same window's block. When all shards
finish, their final account versions merge into one fresh trie whose
root is the run's final state root; it depends only on (seed, config),
never on worker scheduling.

Workload generation keeps a pessimistic balance per account (credits are
ignored, debits are not), so every emitted transfer is valid no matter
how the stream is later batched, and the stream itself is identical for
any shard count.

The consensus delay is accounted arithmetically per block window rather
than slept, so measured wall time is pure processing.
"""

from __future__ import annotations

import json
import os
import random
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

from .chain import (
    Chain,
    Transaction,
    default_producer,
    tenths_from_text,
    text_from_tenths,
)
from .encoding import Digest, hash256
from .errors import SSChainError
from .merkle_dag import AccountState
from .mpt import Trie
from .shard_dht import ShardTable, shard_of
from .store import MemoryKvStore

INITIAL_BALANCE_TENTHS = 10000
MAX_TRANSFER_TENTHS = 50


class SimError(SSChainError):
    """Base for simulator failures."""


class ConfigInvalidError(SimError, ValueError):
    """A SimConfig field is out of range."""


class IntervalTooShortError(SimError):
    """Block interval cannot fit processing plus consensus."""


@dataclass(frozen=True, slots=True)
class SimConfig:
    """Experiment parameters; equal configs give bit-identical runs.

    ``num_accounts`` and ``txs_per_block`` default (when zero) to a
    hundredth of the transaction count and to one window respectively.
    """

    num_nodes: int = 8
    num_shards: int = 4
    num_txs: int = 1000
    block_interval_s: float = 15.0
    consensus_delay_s: float = 10.0
    seed: int = 0
    parallelism: int = 1
    num_accounts: int = 0
    txs_per_block: int = 0

    def validate(self) -> None:
        if self.num_shards < 1 or self.num_shards & (self.num_shards - 1):
            raise ConfigInvalidError(f"num_shards must be a power of two: {self.num_shards}")
        if self.num_nodes < 1:
            raise ConfigInvalidError(f"num_nodes must be >= 1: {self.num_nodes}")
        if self.num_shards > self.num_nodes:
            raise ConfigInvalidError(
                f"num_shards {self.num_shards} exceeds num_nodes {self.num_nodes}"
            )
        if self.num_txs < 0:
            raise ConfigInvalidError(f"num_txs must be >= 0: {self.num_txs}")
        if self.parallelism < 1:
            raise ConfigInvalidError(f"parallelism must be >= 1: {self.parallelism}")
        if self.block_interval_s < 0 or self.consensus_delay_s < 0:
            raise ConfigInvalidError("time parameters must be >= 0")
        if self.num_accounts < 0 or self.txs_per_block < 0:
            raise ConfigInvalidError("count parameters must be >= 0")

    @property
    def effective_accounts(self) -> int:
        return self.num_accounts or max(64, self.num_txs // 100)

    @property
    def effective_txs_per_block(self) -> int:
        return self.txs_per_block or max(1, self.num_txs)


@dataclass(slots=True)
class SimReport:
    txs_processed: int
    wall_seconds: float
    tx_per_second_effective: float
    per_shard_loads: list[int]
    final_state_root: bytes
    windows: int
    seed: int
    scaling_series: list[tuple[int, float]] = field(default_factory=list)

    def json_lines(self) -> list[str]:
        points = self.scaling_series or [
            (len(self.per_shard_loads), self.tx_per_second_effective)
        ]
        return [
            json.dumps(
                {
                    "shards": shards,
                    "txs": self.txs_processed,
                    "seconds": round(self.wall_seconds, 6),
                    "tps": round(tps, 2),
                }
            )
            for shards, tps in points
        ]

    def text(self) -> str:
        lines = [
            f"processed {self.txs_processed} txs in {self.wall_seconds:.3f}s wall",
            f"effective throughput {self.tx_per_second_effective:,.2f} tx/s "
            f"over {self.windows} block window(s)",
            f"final state root {self.final_state_root.hex()}",
            "per-shard loads " + " ".join(str(n) for n in self.per_shard_loads),
        ]
        for shards, tps in self.scaling_series:
            lines.append(f"scaling: shards={shards} tps={tps:,.2f}")
        return "\n".join(lines)


def effective_throughput(
    processing_s: float, consensus_s: float, block_interval_s: float, txs: int
) -> float:
    """Sustained tx/s when every interval fits processing plus consensus.

    Raises:
        IntervalTooShortError: the interval cannot absorb both phases.
        ConfigInvalidError: negative inputs.
    """
    if min(processing_s, consensus_s, block_interval_s) < 0 or txs < 0:
        raise ConfigInvalidError("throughput inputs must be >= 0")
    if block_interval_s < processing_s + consensus_s:
        raise IntervalTooShortError(
            f"interval {block_interval_s}s < {processing_s}s processing "
            f"+ {consensus_s}s consensus"
        )
    if txs == 0:
        return 0.0
    return txs / block_interval_s


def account_addresses(seed: int, count: int) -> list[bytes]:
    """Deterministic distinct 20-byte addresses for a run."""
    return [
        hash256(f"account-{seed}-{i}".encode())[:20] for i in range(count)
    ]


def generate_workload(config: SimConfig) -> list[Transaction]:
    """Seeded transfer stream, valid under any batching and shard count.

    Senders are only picked while their pessimistic balance (credits
    ignored) covers the amount, so no later partitioning can invalidate
    a transfer.
    """
    rng = random.Random(config.seed)
    addresses = account_addresses(config.seed, config.effective_accounts)
    if config.num_txs > 0 and len(addresses) < 2:
        raise ConfigInvalidError("transfers need at least two accounts")
    balances = {address: INITIAL_BALANCE_TENTHS for address in addresses}
    seqs = {address: 0 for address in addresses}
    txs: list[Transaction] = []
    for _ in range(config.num_txs):
        amount = rng.randint(1, MAX_TRANSFER_TENTHS)
        for _attempt in range(64):
            sender = addresses[rng.randrange(len(addresses))]
            if balances[sender] >= amount:
                break
        else:
            sender = max(addresses, key=lambda a: (balances[a], a))
            if balances[sender] < amount:
                break
        receiver = sender
        while receiver == sender:
            receiver = addresses[rng.randrange(len(addresses))]
        txs.append(
            Transaction(sender, receiver, text_from_tenths(amount), seqs[sender])
        )
        seqs[sender] += 1
        balances[sender] -= amount
    return txs


def _chunk(stream: list[Transaction], size: int) -> list[list[Transaction]]:
    return [stream[i : i + size] for i in range(0, len(stream), size)] or []


ShardJob = tuple[
    int,  # shard index
    int,  # num_shards
    list[tuple[bytes, str]],  # local accounts with initial balances
    list[list[Transaction]],  # windows of local transactions
    list[list[tuple[bytes, int]]],  # per-window incoming credits
]


def _run_shard_job(job: ShardJob) -> tuple[int, int, dict[bytes, bytes]]:
    """Process one shard's stream in isolation.

    Returns (shard index, processed count, address -> final version digest).
    Runs in a worker process, so it rebuilds its own in-memory table; the
    version digests it reports are pure content hashes, identical wherever
    they are computed.
    """
    shard_index, num_shards, accounts, windows, credits = job
    table = ShardTable(num_shards)
    producer = default_producer(num_shards)
    for address, balance in accounts:
        table.shard_update(producer, address, AccountState("0", balance))
    chain = Chain(table, producer)

    def is_local(address: bytes) -> bool:
        return shard_of(address, num_shards).index == shard_index

    processed = 0
    for window in range(max(len(windows), len(credits))):
        txs = windows[window] if window < len(windows) else []
        window_credits = credits[window] if window < len(credits) else []
        block = chain.apply_block(txs, credits=window_credits, is_local=is_local)
        if chain.last_rejected:
            raise SimError(
                f"shard {shard_index} rejected {len(chain.last_rejected)} txs"
            )
        processed += len(block.txs)
    final_trie = Trie(table.trie_store, chain.head.header.state_root)
    final = {address: final_trie.get(address) for address, _balance in accounts}
    return shard_index, processed, final


def run_experiment(config: SimConfig) -> SimReport:
    """Generate, partition, process, and merge; see the module docstring.

    Raises:
        ConfigInvalidError
    """
    config.validate()
    txs = generate_workload(config)
    addresses = account_addresses(config.seed, config.effective_accounts)
    num_shards = config.num_shards

    streams: dict[int, list[Transaction]] = {i: [] for i in range(num_shards)}
    for tx in txs:
        streams[shard_of(tx.sender, num_shards).index].append(tx)
    windows = {
        i: _chunk(stream, config.effective_txs_per_block)
        for i, stream in streams.items()
    }
    credits: dict[int, list[list[tuple[bytes, int]]]] = {
        i: [] for i in range(num_shards)
    }
    for i, shard_windows in windows.items():
        for w, window_txs in enumerate(shard_windows):
            for tx in window_txs:
                target = shard_of(tx.receiver, num_shards).index
                if target == i:
                    continue
                while len(credits[target]) <= w:
                    credits[target].append([])
                credits[target][w].append((tx.receiver, tenths_from_text(tx.amount)))

    local_accounts: dict[int, list[tuple[bytes, str]]] = {
        i: [] for i in range(num_shards)
    }
    initial = text_from_tenths(INITIAL_BALANCE_TENTHS)
    for address in addresses:
        local_accounts[shard_of(address, num_shards).index].append((address, initial))

    jobs: list[ShardJob] = [
        (i, num_shards, local_accounts[i], windows[i], credits[i])
        for i in range(num_shards)
        if local_accounts[i] or windows[i] or credits[i]
    ]

    started = time.perf_counter()
    if config.parallelism == 1 or len(jobs) <= 1:
        results = [_run_shard_job(job) for job in jobs]
    else:
        workers = min(config.parallelism, len(jobs))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_shard_job, jobs))
    wall = time.perf_counter() - started

    merged = Trie(MemoryKvStore())
    loads = [0] * num_shards
    total_windows = 0
    for shard_index, processed, final in sorted(results, key=lambda r: r[0]):
        loads[shard_index] = processed
        for address, version_digest in final.items():
            merged = merged.insert(address, version_digest)
    for i in range(num_shards):
        total_windows = max(total_windows, len(windows[i]), len(credits[i]))
    final_root = merged.commit()

    processed_total = sum(loads)
    accounted = wall + config.consensus_delay_s * total_windows
    tps = processed_total / accounted if processed_total and accounted > 0 else 0.0
    return SimReport(
        txs_processed=processed_total,
        wall_seconds=wall,
        tx_per_second_effective=tps,
        per_shard_loads=loads,
        final_state_root=final_root,
        windows=total_windows,
        seed=config.seed,
    )


def scaling_series(
    config: SimConfig, shard_counts: list[int], parallelism: Optional[int] = None
) -> list[tuple[int, float]]:
    """Throughput at each shard count, same total work, same seed.

    Worker count follows the shard count up to the machine's cores
    unless ``parallelism`` pins it.
    """
    cores = os.cpu_count() or 1
    series = []
    for count in shard_counts:
        run_config = replace(
            config,
            num_shards=count,
            num_nodes=max(config.num_nodes, count),
            parallelism=parallelism or min(count, cores),
        )
        report = run_experiment(run_config)
        series.append((count, report.tx_per_second_effective))
    return series


def run_scaling(config: SimConfig, shard_counts: list[int]) -> SimReport:
    """One report for ``config`` with the scaling series attached."""
    report = run_experiment(config)
    report.scaling_series = scaling_series(config, shard_counts)
    return report
