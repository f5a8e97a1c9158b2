#include <sieve/parallel.hpp>

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>

namespace sieve {

namespace {

std::atomic<int> g_workers{1};
// Nested loops inside a pool task run serially on that task's thread.
thread_local bool t_in_pool = false;

void run_indexed(std::size_t count, const std::function<void(std::size_t)>& body) {
  const int workers =
      t_in_pool ? 1 : std::min<int>(g_workers.load(), static_cast<int>(count));
  std::vector<std::exception_ptr> errors(count);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) {
      try {
        body(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        t_in_pool = true;
        for (std::size_t i = next++; i < count; i = next++) {
          try {
            body(i);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
    for (auto& t : pool) t.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

void set_worker_count(int workers) { g_workers = std::max(1, workers); }

int worker_count() { return g_workers.load(); }

void for_each_chunk(std::size_t n,
                    const std::function<void(int, std::size_t, std::size_t)>& fn) {
  const std::size_t chunks = kReductionChunks;
  run_indexed(chunks, [&](std::size_t c) {
    const std::size_t begin = n * c / chunks;
    const std::size_t end = n * (c + 1) / chunks;
    fn(static_cast<int>(c), begin, end);
  });
}

double deterministic_sum(std::size_t n,
                         const std::function<double(std::size_t, std::size_t)>& chunk_sum) {
  double partial[kReductionChunks] = {};
  for_each_chunk(n, [&](int c, std::size_t b, std::size_t e) { partial[c] = chunk_sum(b, e); });
  double total = 0.0;
  for (double v : partial) total += v;
  return total;
}

void run_tasks(std::size_t count, const std::function<void(std::size_t)>& task) {
  run_indexed(count, task);
}

}  // namespace sieve
