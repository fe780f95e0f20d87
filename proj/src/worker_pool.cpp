// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0

#include <ph2/common.h>
#include <ph2/worker_pool.h>

#include <exception>
#include <thread>
#include <vector>

namespace ph2 {

WorkerPool::WorkerPool(int workers, Mode mode) : mWorkers(workers) {
    if (workers < 1) {
        fail(ErrorKind::InvalidInput, "worker count must be >= 1");
    }
    switch (mode) {
    case Mode::Threads: mThreaded = true; break;
    case Mode::Inline: mThreaded = false; break;
    case Mode::Auto: mThreaded = std::thread::hardware_concurrency() > 1; break;
    }
}

void
WorkerPool::run(const std::function<void(int worker)> &task) const {
    std::vector<std::exception_ptr> errors(mWorkers);
    auto guarded = [&](int w) {
        try {
            task(w);
        } catch (...) {
            errors[w] = std::current_exception();
        }
    };
    if (mThreaded && mWorkers > 1) {
        std::vector<std::jthread> threads;
        threads.reserve(mWorkers - 1);
        for (int w = 1; w < mWorkers; ++w) {
            threads.emplace_back(guarded, w);
        }
        guarded(0);
        threads.clear(); // joins
    } else {
        for (int w = 0; w < mWorkers; ++w) {
            guarded(w);
        }
    }
    for (const auto &e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

} // namespace ph2
