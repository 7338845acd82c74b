#include "palette_field/common.hpp"

#include <exception>
#include <thread>
#include <vector>

namespace palette_field {

const char* error_kind_name(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kDatasetFormat:
      return "dataset-format error";
    case ErrorKind::kInconsistentDataset:
      return "inconsistent-dataset error";
    case ErrorKind::kBadPose:
      return "bad-pose error";
    case ErrorKind::kSpec:
      return "spec error";
    case ErrorKind::kEmptyForeground:
      return "empty-foreground error";
    case ErrorKind::kDegenerateHull:
      return "degenerate-hull error";
    case ErrorKind::kInsufficientData:
      return "insufficient-data error";
    case ErrorKind::kCheckpoint:
      return "checkpoint error";
    case ErrorKind::kInvalidArgument:
      return "invalid argument";
    case ErrorKind::kNonFiniteGradient:
      return "non-finite gradient";
    case ErrorKind::kIo:
      return "io error";
  }
  return "error";
}

int resolve_threads(int threads) {
  if (threads > 0) return threads;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

void parallel_for(int64_t n, int threads, const std::function<void(int64_t, int64_t, int)>& fn) {
  const int workers = static_cast<int>(std::min<int64_t>(resolve_threads(threads), std::max<int64_t>(n, 1)));
  if (workers <= 1) {
    fn(0, n, 0);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  pool.reserve(workers);
  const int64_t chunk = (n + workers - 1) / workers;
  for (int w = 0; w < workers; ++w) {
    const int64_t begin = std::min<int64_t>(n, w * chunk);
    const int64_t end = std::min<int64_t>(n, begin + chunk);
    pool.emplace_back([&fn, &errors, begin, end, w] {
      try {
        fn(begin, end, w);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace palette_field
