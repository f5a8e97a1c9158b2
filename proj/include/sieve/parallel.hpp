#ifndef SIEVE_PARALLEL_HPP
#define SIEVE_PARALLEL_HPP

#include <cstddef>
#include <functional>
#include <vector>

namespace sieve {

/// Number of threads used by chunked loops; results never depend on it.
void set_worker_count(int workers);
int worker_count();

/// Fixed number of reduction chunks. Partial results are combined in chunk
/// order, so sums are bitwise identical for every worker count.
inline constexpr int kReductionChunks = 8;

/// Calls fn(chunk, begin, end) for kReductionChunks contiguous slices of
/// [0, n), distributed over the worker pool.
void for_each_chunk(std::size_t n, const std::function<void(int, std::size_t, std::size_t)>& fn);

/// Sum of chunk_sum(begin, end) over the fixed chunks, added in chunk order.
double deterministic_sum(std::size_t n,
                         const std::function<double(std::size_t, std::size_t)>& chunk_sum);

/// Runs independent tasks on the worker pool; task i writes only its own
/// output. Exceptions are rethrown in task order after all tasks finish.
void run_tasks(std::size_t count, const std::function<void(std::size_t)>& task);

}  // namespace sieve

#endif  // SIEVE_PARALLEL_HPP
