#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <thread>
#include <vector>

namespace adazoom {

/// Runs fn(i) for i in [0, n). With jobs <= 1 this is a plain loop; otherwise
/// indices are pulled from a shared counter by `jobs` threads. Callers must
/// write results into per-index slots so the schedule cannot affect output.
inline void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn) {
    if (jobs <= 1 || n <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    auto worker = [&]() {
        for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) fn(i);
    };
    std::vector<std::thread> threads;
    const int count = std::min<std::size_t>(static_cast<std::size_t>(jobs), n);
    threads.reserve(static_cast<std::size_t>(count));
    for (int t = 0; t < count; ++t) threads.emplace_back(worker);
    for (std::thread& t : threads) t.join();
}

}  // namespace adazoom
