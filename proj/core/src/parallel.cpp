#include "kolmoparam/parallel.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <stdexcept>
#include <thread>
#include <vector>

namespace kolmoparam {

namespace {
std::atomic<int> g_threads{0};

int resolve_threads() {
    const int configured = g_threads.load(std::memory_order_relaxed);
    if (configured > 0) return configured;
    if (const char* env = std::getenv("KOLMO_PARAMETRIX_THREADS")) {
        const int n = std::atoi(env);
        if (n > 0) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw > 0 ? static_cast<int>(hw) : 1;
}
}  // namespace

int thread_count() { return resolve_threads(); }

void set_thread_count(int n) { g_threads.store(n, std::memory_order_relaxed); }

uint64_t chunk_count(uint64_t total, uint64_t chunk_size) {
    if (chunk_size == 0) throw std::invalid_argument("chunk_size must be positive");
    return (total + chunk_size - 1) / chunk_size;
}

void parallel_chunks(uint64_t total, uint64_t chunk_size,
                     const std::function<void(uint64_t, uint64_t, uint64_t)>& fn) {
    if (total == 0) return;
    const uint64_t chunks = chunk_count(total, chunk_size);
    const int workers =
        static_cast<int>(std::min<uint64_t>(chunks, static_cast<uint64_t>(resolve_threads())));
    if (workers <= 1) {
        for (uint64_t c = 0; c < chunks; ++c) {
            const uint64_t begin = c * chunk_size;
            fn(begin, std::min(total, begin + chunk_size), c);
        }
        return;
    }
    std::atomic<uint64_t> next{0};
    std::exception_ptr error;
    std::atomic<bool> failed{false};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&]() {
            for (;;) {
                const uint64_t c = next.fetch_add(1, std::memory_order_relaxed);
                if (c >= chunks || failed.load(std::memory_order_relaxed)) return;
                const uint64_t begin = c * chunk_size;
                try {
                    fn(begin, std::min(total, begin + chunk_size), c);
                } catch (...) {
                    if (!failed.exchange(true)) error = std::current_exception();
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failed.load()) std::rethrow_exception(error);
}

double MeanAccumulator::std_error() const {
    if (count < 2) return 0.0;
    const double n = static_cast<double>(count);
    const double m = sum / n;
    double var = (sumsq - n * m * m) / (n - 1.0);
    if (var < 0.0) var = 0.0;  // cancellation guard
    return std::sqrt(var / n);
}

}  // namespace kolmoparam
