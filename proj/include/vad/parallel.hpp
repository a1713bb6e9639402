#pragma once

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace vad {

// Deterministic parallelism helper. Work is always split into a fixed chunk
// grid (independent of the worker count), so any reduction that combines
// per-chunk partials in chunk order is bit-identical for every --threads
// setting, including 1.
class Parallel {
public:
    static int max_threads() { return instance().threads_; }

    static void set_max_threads(int n) {
        instance().threads_ = n > 0 ? n : default_threads();
    }

    static constexpr int kChunks = 16;

    // Runs fn(chunk_index, begin, end) over [0, n) split into kChunks ranges.
    // fn must only write to chunk-local or disjoint-by-index state.
    static void for_chunks(std::size_t n, const std::function<void(int, std::size_t, std::size_t)>& fn) {
        if (n == 0) return;
        int workers = std::min<int>(max_threads(), kChunks);
        if (workers <= 1) {
            for (int c = 0; c < kChunks; ++c) {
                auto [b, e] = chunk_range(n, c);
                if (b < e) fn(c, b, e);
            }
            return;
        }
        std::atomic<int> next{0};
        auto body = [&] {
            for (;;) {
                int c = next.fetch_add(1);
                if (c >= kChunks) break;
                auto [b, e] = chunk_range(n, c);
                if (b < e) fn(c, b, e);
            }
        };
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(workers - 1));
        for (int t = 1; t < workers; ++t) pool.emplace_back(body);
        body();
        for (auto& th : pool) th.join();
    }

    // Element-wise parallel loop; fn(i) writes only to slot i.
    static void for_each(std::size_t n, const std::function<void(std::size_t)>& fn) {
        for_chunks(n, [&](int, std::size_t b, std::size_t e) {
            for (std::size_t i = b; i < e; ++i) fn(i);
        });
    }

    static std::pair<std::size_t, std::size_t> chunk_range(std::size_t n, int chunk) {
        std::size_t b = n * static_cast<std::size_t>(chunk) / kChunks;
        std::size_t e = n * static_cast<std::size_t>(chunk + 1) / kChunks;
        return {b, e};
    }

private:
    static int default_threads() {
        unsigned hc = std::thread::hardware_concurrency();
        return hc == 0 ? 1 : static_cast<int>(hc);
    }

    static Parallel& instance() {
        static Parallel p;
        return p;
    }

    int threads_ = default_threads();
};

} // namespace vad
