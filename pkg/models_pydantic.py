# models_pydantic.py
from typing import Dict, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from core import EDGE_BYTES, INT_BYTES, MIB, is_power_of_two

IO_FIELDS = ('seq_reads', 'seq_writes', 'rand_reads', 'rand_writes')


# --- Generator Parameters ---
class RmatParams(BaseModel):
    model_config = ConfigDict(frozen=True)

    a: float = Field(0.57, ge=0.0, le=1.0)
    b: float = Field(0.19, ge=0.0, le=1.0)
    c: float = Field(0.19, ge=0.0, le=1.0)
    d: float = Field(0.05, ge=0.0, le=1.0)

    @model_validator(mode='after')
    def _sums_to_one(self):
        total = self.a + self.b + self.c + self.d
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"R-MAT probabilities must sum to 1, got {total:.12g}")
        return self

    def as_tuple(self):
        return (self.a, self.b, self.c, self.d)


class ClusterConfig(BaseModel):
    """Everything a run needs. Derived sizes are properties so they never drift."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    scale: int = Field(..., ge=1, le=40, description="log2 of the vertex count.")
    edge_factor: int = Field(16, ge=1)
    nodes: int = Field(1, ge=1)
    cores: int = Field(1, ge=1)
    block_edges: int = Field(4096, ge=1, description="Edges per I/O block (C_e).")
    mem_per_core: int = Field(8 * MIB, ge=EDGE_BYTES, description="Bytes of working memory per core.")
    packet_bytes: int = Field(65536, ge=EDGE_BYTES, description="Bytes per redistribution packet.")
    seed: int = Field(1, ge=0, lt=2 ** 64)
    rmat_a: float = 0.57
    rmat_b: float = 0.19
    rmat_c: float = 0.19
    rmat_d: float = 0.05
    workdir: str = './rmat_work'
    csr_variant: Literal['sorted', 'hash'] = 'sorted'
    redistribute_mode: Literal['sorted', 'unordered'] = 'sorted'
    emit_both_orientations: bool = False
    jitter_ms: float = Field(0.0, ge=0.0)
    watchdog_seconds: float = Field(60.0, gt=0.0)
    channel_capacity: int = Field(2, ge=2)
    dump_permutation: Optional[str] = None

    # --- Derived sizes ---
    @property
    def n(self) -> int:
        return 1 << self.scale

    @property
    def bucket(self) -> int:
        """Vertices per node (B)."""
        return self.n // self.nodes

    @property
    def bin(self) -> int:
        """Vertices per core (b)."""
        return self.bucket // self.cores

    @property
    def orientation_factor(self) -> int:
        return 2 if self.emit_both_orientations else 1

    @property
    def generated_per_core(self) -> int:
        """Edges drawn by one core."""
        return self.bin * self.edge_factor

    @property
    def edges_per_core(self) -> int:
        """Edges stored by one core after generation."""
        return self.generated_per_core * self.orientation_factor

    @property
    def total_edges(self) -> int:
        return self.n * self.edge_factor * self.orientation_factor

    @property
    def block_bytes(self) -> int:
        return self.block_edges * EDGE_BYTES

    @property
    def chunk_edges(self) -> int:
        """Largest multiple of C_e whose records fit in mmc."""
        return (self.mem_per_core // EDGE_BYTES) // self.block_edges * self.block_edges

    @property
    def chunks_per_core(self) -> int:
        return -(-self.edges_per_core // self.chunk_edges)

    @property
    def packet_edges(self) -> int:
        return self.packet_bytes // EDGE_BYTES

    @property
    def shuffle_sub_block(self) -> int:
        return self.bucket // self.nodes

    @property
    def watchdog(self) -> float:
        """Watchdog seconds scaled up for runs above 2^22 edges."""
        return self.watchdog_seconds * max(1.0, self.total_edges / float(1 << 22))

    @property
    def rmat_params(self) -> RmatParams:
        return RmatParams(a=self.rmat_a, b=self.rmat_b, c=self.rmat_c, d=self.rmat_d)

    @model_validator(mode='after')
    def _check_layout(self):
        if not is_power_of_two(self.nodes):
            raise ValueError(f"nodes must be a power of two, got {self.nodes}")
        if not is_power_of_two(self.cores):
            raise ValueError(f"cores must be a power of two, got {self.cores}")
        if self.nodes * self.cores > self.n:
            raise ValueError(f"nodes*cores={self.nodes * self.cores} exceeds n={self.n}")
        if self.bucket % self.nodes:
            raise ValueError(f"nodes={self.nodes} must divide the per-node range B={self.bucket}")
        if self.block_bytes > self.mem_per_core:
            raise ValueError(f"one block ({self.block_bytes} bytes) does not fit in mem_per_core={self.mem_per_core}")
        if self.chunks_per_core * self.block_bytes > self.mem_per_core:
            raise ValueError(
                f"{self.chunks_per_core} chunks per core need {self.chunks_per_core * self.block_bytes} bytes "
                f"of relabel windows, more than mem_per_core={self.mem_per_core}")
        if self.bucket * INT_BYTES > self.cores * self.mem_per_core:
            raise ValueError(
                f"permutation slice of {self.bucket * INT_BYTES} bytes exceeds node memory "
                f"{self.cores * self.mem_per_core}")
        if self.packet_bytes % EDGE_BYTES:
            raise ValueError(f"packet_bytes must be a multiple of {EDGE_BYTES}, got {self.packet_bytes}")
        if self.csr_variant == 'sorted' and self.redistribute_mode != 'sorted':
            raise ValueError("csr_variant 'sorted' requires redistribute_mode 'sorted'")
        probs = (self.rmat_a, self.rmat_b, self.rmat_c, self.rmat_d)
        if min(probs) < 0.0 or abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError(f"R-MAT probabilities must be non-negative and sum to 1, got {probs}")
        return self


# --- I/O Accounting ---
class IoStats(BaseModel):
    """Immutable snapshot of block-access counters."""
    model_config = ConfigDict(frozen=True)

    seq_reads: int = 0
    seq_writes: int = 0
    rand_reads: int = 0
    rand_writes: int = 0

    @property
    def sequential(self) -> int:
        return self.seq_reads + self.seq_writes

    @property
    def random(self) -> int:
        return self.rand_reads + self.rand_writes

    @property
    def total(self) -> int:
        return self.sequential + self.random

    def __add__(self, other: 'IoStats') -> 'IoStats':
        return IoStats(**{f: getattr(self, f) + getattr(other, f) for f in IO_FIELDS})

    def __sub__(self, other: 'IoStats') -> 'IoStats':
        return IoStats(**{f: getattr(self, f) - getattr(other, f) for f in IO_FIELDS})


class PhaseRecord(BaseModel):
    phase: str
    node: int
    core: Optional[int] = None
    seconds: float = 0.0
    io: IoStats = Field(default_factory=IoStats)
    peak_memory: int = 0


# --- Run Manifest ---
class RunManifest(BaseModel):
    software_version: str
    numpy_version: str
    created_at: str
    config: Dict
    rng_algorithm: str
    seeds: Dict[str, str]
    phases_completed: List[str] = Field(default_factory=list)
    phase_seconds: Dict[str, float] = Field(default_factory=dict)
    records: List[PhaseRecord] = Field(default_factory=list)
    owned_edges: List[int] = Field(default_factory=list)
    checksums: Dict[str, str] = Field(default_factory=dict)
    canonical_checksums: Dict[str, str] = Field(default_factory=dict)


class ErrorReport(BaseModel):
    error_type: str
    message: str
    phase: Optional[str] = None
    node: Optional[int] = None
    created_at: str


# --- Validation Reports ---
class PermutationReport(BaseModel):
    n: int
    length: int
    bijective: bool
    duplicates: List[int] = Field(default_factory=list)
    missing: List[int] = Field(default_factory=list)
    out_of_range: int = 0
    fixed_points: int = 0


class CsrReport(BaseModel):
    node: int
    ok: bool
    edges: int
    issues: List[str] = Field(default_factory=list)


class DegreeStats(BaseModel):
    vertices: int
    edges: int
    min_degree: int
    max_degree: int
    mean_degree: float
    median_degree: float
    max_mean_ratio: float
    histogram: Dict[str, int] = Field(default_factory=dict, description="log2 bins: '0', '1', '2-3', '4-7', ...")


class ValidationReport(BaseModel):
    workdir: str
    ok: bool
    checks: Dict[str, bool] = Field(default_factory=dict)
    mismatches: List[str] = Field(default_factory=list)
    permutation: Optional[PermutationReport] = None
    csr: List[CsrReport] = Field(default_factory=list)
