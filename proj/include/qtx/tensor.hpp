#pragma once

#include <algorithm>
#include <array>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

namespace qtx {

using cplx = std::complex<double>;
using MatrixC = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<MatrixC>;
using ConstMapC = Eigen::Map<const MatrixC>;

inline constexpr cplx kI{0.0, 1.0};

/// Dense row-major complex tensor of fixed rank.
template <std::size_t Rank>
class Tensor {
 public:
  using Shape = std::array<std::size_t, Rank>;

  Tensor() { shape_.fill(0); }
  explicit Tensor(const Shape& shape) : shape_(shape), data_(count(shape), cplx{}) {}

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t extent(std::size_t d) const { return shape_.at(d); }

  std::span<cplx> data() noexcept { return data_; }
  std::span<const cplx> data() const noexcept { return data_; }

  template <typename... Idx>
  std::size_t offset(Idx... idx) const noexcept {
    static_assert(sizeof...(Idx) <= Rank);
    const std::array<std::size_t, sizeof...(Idx)> ix{static_cast<std::size_t>(idx)...};
    std::size_t off = 0;
    for (std::size_t d = 0; d < Rank; ++d) {
      off = off * shape_[d] + (d < ix.size() ? ix[d] : 0);
    }
    return off;
  }

  template <typename... Idx>
  cplx& operator()(Idx... idx) noexcept {
    static_assert(sizeof...(Idx) == Rank);
    return data_[offset(idx...)];
  }
  template <typename... Idx>
  const cplx& operator()(Idx... idx) const noexcept {
    static_assert(sizeof...(Idx) == Rank);
    return data_[offset(idx...)];
  }

  /// Pointer to the sub-array addressed by a prefix of indices.
  template <typename... Idx>
  cplx* at(Idx... idx) noexcept { return data_.data() + offset(idx...); }
  template <typename... Idx>
  const cplx* at(Idx... idx) const noexcept { return data_.data() + offset(idx...); }

  void fill(cplx v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Tensor& o) const = default;

  static std::size_t count(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
  }

 private:
  Shape shape_;
  std::vector<cplx> data_;
};

template <std::size_t R>
double max_abs(const Tensor<R>& t) {
  double m = 0.0;
  for (const auto& v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

/// max |a - b| / max(max|b|, tiny)
template <std::size_t R>
double max_rel_diff(const Tensor<R>& a, const Tensor<R>& b) {
  if (a.shape() != b.shape()) throw std::invalid_argument("max_rel_diff: shape mismatch");
  double num = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) num = std::max(num, std::abs(a.data()[i] - b.data()[i]));
  const double den = std::max(max_abs(b), 1e-300);
  return num / den;
}

template <std::size_t R>
bool all_finite(const Tensor<R>& t) {
  return std::all_of(t.data().begin(), t.data().end(),
                     [](const cplx& v) { return std::isfinite(v.real()) && std::isfinite(v.imag()); });
}

inline ConstMapC block_map(const cplx* p, std::size_t rows, std::size_t cols) {
  return ConstMapC(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}
inline MapC block_map(cplx* p, std::size_t rows, std::size_t cols) {
  return MapC(p, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

inline std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }

inline std::size_t wrap_index(std::int64_t i, std::size_t n) {
  const auto m = static_cast<std::int64_t>(n);
  return static_cast<std::size_t>(((i % m) + m) % m);
}

/// Runs body(i) for i in [0, n) over `threads` workers with contiguous chunks.
/// Every index is handled by exactly one worker, so disjoint writes stay deterministic.
inline void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& body) {
  if (threads <= 1 || n < 2) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(threads, n);
  const std::size_t chunk = ceil_div(n, workers);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w * chunk; i < std::min(n, (w + 1) * chunk); ++i) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

/// FNV-1a over the raw bytes of a tensor; stable digest for run artifacts.
template <std::size_t R>
std::uint64_t digest(const Tensor<R>& t, std::uint64_t h = 1469598103934665603ULL) {
  const auto* bytes = reinterpret_cast<const unsigned char*>(t.data().data());
  const std::size_t n = t.size() * sizeof(cplx);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace qtx
