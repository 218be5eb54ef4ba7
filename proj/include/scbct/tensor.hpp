#pragma once

#include <cstdint>
#include <new>
#include <stdexcept>
#include <string>
#include <vector>

namespace scbct::nn {

// Fixed 64-byte alignment so vectorized kernels take the same code path for
// every allocation; without this, results depend on heap addresses.
template <class T, size_t Align>
struct AlignedAlloc {
  using value_type = T;
  AlignedAlloc() = default;
  template <class U>
  AlignedAlloc(const AlignedAlloc<U, Align>&) {}
  T* allocate(size_t n) {
    return static_cast<T*>(
        ::operator new(n * sizeof(T), std::align_val_t(Align)));
  }
  void deallocate(T* p, size_t n) {
    ::operator delete(p, n * sizeof(T), std::align_val_t(Align));
  }
  template <class U>
  struct rebind {
    using other = AlignedAlloc<U, Align>;
  };
  bool operator==(const AlignedAlloc&) const { return true; }
  bool operator!=(const AlignedAlloc&) const { return false; }
};

using dvec = std::vector<double, AlignedAlloc<double, 64>>;

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i)
    out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

// dense double tensor, row-major (last dim fastest)
struct Tensor {
  Shape shape;
  dvec d;

  Tensor() = default;
  explicit Tensor(Shape s)
      : shape(std::move(s)), d(size_t(shape_numel(shape)), 0.0) {}
  Tensor(Shape s, double fill)
      : shape(std::move(s)), d(size_t(shape_numel(shape)), fill) {}

  int64_t numel() const { return int64_t(d.size()); }
  bool empty() const { return d.empty(); }
  int64_t dim(size_t i) const { return shape.at(i); }

  // 2D accessors (most ops are matrices)
  int64_t rows() const { return shape.size() == 2 ? shape[0] : 0; }
  int64_t cols() const { return shape.size() == 2 ? shape[1] : 0; }
  double& at2(int64_t r, int64_t c) { return d[size_t(r * shape[1] + c)]; }
  double at2(int64_t r, int64_t c) const { return d[size_t(r * shape[1] + c)]; }
};

inline void check_shape(const Tensor& t, const Shape& want,
                        const char* where) {
  if (t.shape != want)
    throw std::invalid_argument(std::string(where) + ": expected shape " +
                                shape_str(want) + ", got " +
                                shape_str(t.shape));
}

}  // namespace scbct::nn
