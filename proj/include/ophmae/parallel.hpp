#pragma once

#include <future>
#include <thread>
#include <vector>

namespace ophmae {

// Runs fn(i) for i in [0, n) across up to hardware_concurrency workers.
// Callers must make fn(i) write only to slot i of pre-sized output storage;
// any reduction happens afterwards in index order, so results do not depend
// on the worker count.
template <typename F>
void parallel_batch(int n, F&& fn) {
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const int workers = static_cast<int>(std::min<unsigned>(hw, static_cast<unsigned>(n)));
    if (workers <= 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::future<void>> futures;
    futures.reserve(static_cast<size_t>(workers));
    for (int w = 0; w < workers; ++w)
        futures.push_back(std::async(std::launch::async, [&fn, w, workers, n] {
            for (int i = w; i < n; i += workers) fn(i);
        }));
    for (auto& f : futures) f.get();
}

}  // namespace ophmae
