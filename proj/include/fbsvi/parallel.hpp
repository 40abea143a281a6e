#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace fbsvi {

namespace detail {
inline std::atomic<unsigned>& thread_setting() {
    static std::atomic<unsigned> n{0};
    return n;
}
}  // namespace detail

/// Worker threads used by path-parallel kernels; 0 means hardware concurrency.
inline void set_thread_count(unsigned n) { detail::thread_setting().store(n); }

inline unsigned thread_count() {
    const unsigned n = detail::thread_setting().load();
    if (n != 0) return n;
    return std::max(1U, std::thread::hardware_concurrency());
}

/// Chunk size of the fixed work partition. Chunk boundaries never depend on
/// the number of threads, which is what makes chunked reductions reproducible.
inline constexpr std::size_t kChunk = 512;

/// Calls body(chunk_index, begin, end) for every chunk of [0, n).
template <typename Body>
void parallel_chunks(std::size_t n, Body&& body) {
    const std::size_t chunks = (n + kChunk - 1) / kChunk;
    const unsigned workers = static_cast<unsigned>(std::min<std::size_t>(thread_count(), chunks));
    if (workers <= 1) {
        for (std::size_t c = 0; c < chunks; ++c) body(c, c * kChunk, std::min(n, (c + 1) * kChunk));
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto run = [&] {
        for (;;) {
            const std::size_t c = next.fetch_add(1);
            if (c >= chunks) return;
            try {
                body(c, c * kChunk, std::min(n, (c + 1) * kChunk));
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                next.store(chunks);
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(workers - 1);
    for (unsigned w = 1; w < workers; ++w) pool.emplace_back(run);
    run();
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

/// Calls body(i) for every i in [0, n).
template <typename Body>
void parallel_for(std::size_t n, Body&& body) {
    parallel_chunks(n, [&](std::size_t, std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) body(i);
    });
}

/// Sum of term(i) over [0, n), reduced per chunk and then in chunk order.
template <typename Term>
double deterministic_sum(std::size_t n, Term&& term) {
    const std::size_t chunks = (n + kChunk - 1) / kChunk;
    std::vector<double> partial(chunks, 0.0);
    parallel_chunks(n, [&](std::size_t c, std::size_t b, std::size_t e) {
        double s = 0.0;
        for (std::size_t i = b; i < e; ++i) s += term(i);
        partial[c] = s;
    });
    double s = 0.0;
    for (double p : partial) s += p;
    return s;
}

}  // namespace fbsvi
