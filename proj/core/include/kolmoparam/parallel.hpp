#pragma once

#include <cstdint>
#include <functional>

namespace kolmoparam {

/// Number of worker threads used by parallel loops. Resolution order:
/// explicit set_thread_count, KOLMO_PARAMETRIX_THREADS, hardware concurrency.
int thread_count();
void set_thread_count(int n);

/// Runs fn(begin, end, chunk_index) over [0, total) split into fixed-size
/// chunks. Chunk boundaries depend only on total and chunk_size, never on the
/// number of workers, so writing results into chunk-indexed slots keeps every
/// reduction bit-identical across thread counts.
void parallel_chunks(uint64_t total, uint64_t chunk_size,
                     const std::function<void(uint64_t, uint64_t, uint64_t)>& fn);

uint64_t chunk_count(uint64_t total, uint64_t chunk_size);

/// Mean and standard error accumulated from per-chunk partial sums in chunk
/// order, independent of the execution schedule.
struct MeanAccumulator {
    double sum = 0.0;
    double sumsq = 0.0;
    uint64_t count = 0;

    void add(double v) {
        sum += v;
        sumsq += v * v;
        ++count;
    }
    void merge(const MeanAccumulator& o) {
        sum += o.sum;
        sumsq += o.sumsq;
        count += o.count;
    }
    double mean() const { return count ? sum / static_cast<double>(count) : 0.0; }
    double std_error() const;
};

}  // namespace kolmoparam
