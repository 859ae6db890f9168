#include "kad/threadpool.hpp"

#include <algorithm>
#include <memory>

namespace kad {

ThreadPool::ThreadPool(int threads) {
  const int extra = std::max(0, threads - 1);
  tasks_.resize(static_cast<size_t>(extra));
  workers_.reserve(static_cast<size_t>(extra));
  for (int i = 0; i < extra; ++i)
    workers_.emplace_back([this, i] { worker_loop(i); });
}

ThreadPool::~ThreadPool() {
  {
    std::lock_guard<std::mutex> lock(mu_);
    stop_ = true;
    ++generation_;
  }
  cv_start_.notify_all();
  for (auto& w : workers_) w.join();
}

void ThreadPool::worker_loop(int index) {
  uint64_t seen = 0;
  for (;;) {
    Task task;
    {
      std::unique_lock<std::mutex> lock(mu_);
      cv_start_.wait(lock, [&] { return stop_ || generation_ != seen; });
      if (stop_) return;
      seen = generation_;
      task = tasks_[static_cast<size_t>(index)];
    }
    if (task.fn && task.begin < task.end) (*task.fn)(task.begin, task.end);
    {
      std::lock_guard<std::mutex> lock(mu_);
      if (--pending_ == 0) cv_done_.notify_all();
    }
  }
}

void ThreadPool::parallel_for(int64_t n,
                              const std::function<void(int64_t, int64_t)>& fn) {
  const int nthreads = size();
  if (n <= 0) return;
  if (nthreads == 1 || n == 1) {
    fn(0, n);
    return;
  }
  const int64_t chunk = (n + nthreads - 1) / nthreads;
  {
    std::lock_guard<std::mutex> lock(mu_);
    pending_ = static_cast<int>(workers_.size());
    for (size_t i = 0; i < workers_.size(); ++i) {
      const int64_t b = std::min<int64_t>(n, chunk * static_cast<int64_t>(i + 1));
      const int64_t e = std::min<int64_t>(n, b + chunk);
      tasks_[i] = Task{&fn, b, e};
    }
    ++generation_;
  }
  cv_start_.notify_all();
  fn(0, std::min<int64_t>(n, chunk));
  std::unique_lock<std::mutex> lock(mu_);
  cv_done_.wait(lock, [&] { return pending_ == 0; });
}

namespace {
std::unique_ptr<ThreadPool>& global_slot() {
  static std::unique_ptr<ThreadPool> pool = std::make_unique<ThreadPool>(1);
  return pool;
}
}  // namespace

ThreadPool& ThreadPool::global() { return *global_slot(); }

void ThreadPool::set_global_threads(int threads) {
  if (threads < 1) threads = 1;
  if (global_slot()->size() == threads) return;
  global_slot() = std::make_unique<ThreadPool>(threads);
}

}  // namespace kad
