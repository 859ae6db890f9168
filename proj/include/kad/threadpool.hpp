#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace kad {

// Fixed-size worker pool used by the conv kernels. Work items are disjoint
// index ranges, so results are bit-identical for any pool size as long as
// each index is computed by exactly one worker.
class ThreadPool {
 public:
  explicit ThreadPool(int threads);
  ~ThreadPool();

  ThreadPool(const ThreadPool&) = delete;
  ThreadPool& operator=(const ThreadPool&) = delete;

  int size() const { return static_cast<int>(workers_.size()) + 1; }

  // Runs fn(begin, end) over a static partition of [0, n). The calling
  // thread executes the first chunk itself.
  void parallel_for(int64_t n, const std::function<void(int64_t, int64_t)>& fn);

  // Process-wide pool. resize() is cheap when the size is unchanged.
  static ThreadPool& global();
  static void set_global_threads(int threads);

 private:
  struct Task {
    const std::function<void(int64_t, int64_t)>* fn = nullptr;
    int64_t begin = 0, end = 0;
  };

  void worker_loop(int index);

  std::vector<std::thread> workers_;
  std::vector<Task> tasks_;
  std::mutex mu_;
  std::condition_variable cv_start_, cv_done_;
  uint64_t generation_ = 0;
  int pending_ = 0;
  bool stop_ = false;
};

}  // namespace kad
