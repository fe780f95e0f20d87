// Copyright Contributors to the ph2splat Project
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

namespace ph2 {

/// M simulated workers sharing one address space. `run` executes the task
/// once per worker id and returns at the barrier when all have finished.
/// Workers run on their own threads when more than one hardware thread is
/// available, otherwise inline in worker-id order; results never depend on
/// which mode is used because tasks only write worker-private outputs.
class WorkerPool {
  public:
    enum class Mode { Auto, Threads, Inline };

    explicit WorkerPool(int workers, Mode mode = Mode::Auto);

    int
    size() const {
        return mWorkers;
    }
    bool
    threaded() const {
        return mThreaded;
    }

    /// Rethrows the exception of the lowest-numbered failing worker.
    void run(const std::function<void(int worker)> &task) const;

  private:
    int mWorkers;
    bool mThreaded;
};

} // namespace ph2
