#pragma once

#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <string>
#include <vector>

namespace semfuse {

// Every buffer starts on a 64-byte boundary. The vectorized matrix kernels
// take different code paths for differently aligned inputs, which changes
// rounding; fixed alignment keeps results bitwise reproducible.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};

  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

  T* allocate(std::size_t n) {
    return static_cast<T*>(::operator new(n * sizeof(T), kAlign));
  }
  void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, kAlign); }

  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const noexcept { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t acc, int d) {
                           return acc * static_cast<std::size_t>(d);
                         });
}

std::string shape_to_string(const Shape& shape);

// Dense row-major array. Real is float for training and double for gradient
// checks.
template <typename Real>
struct Tensor {
  Shape shape;
  AlignedVector<Real> data;

  Tensor() = default;
  explicit Tensor(Shape s, Real fill = Real(0))
      : shape(std::move(s)), data(shape_numel(shape), fill) {}
  Tensor(Shape s, AlignedVector<Real> values)
      : shape(std::move(s)), data(std::move(values)) {}
  Tensor(Shape s, const std::vector<Real>& values)
      : shape(std::move(s)), data(values.begin(), values.end()) {}

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  int dim(int i) const {
    return shape[static_cast<std::size_t>(i < 0 ? static_cast<int>(shape.size()) + i
                                                : i)];
  }
  // Last dimension and the product of all leading ones.
  int cols() const { return shape.empty() ? 1 : shape.back(); }
  int rows() const {
    return cols() == 0 ? 0 : static_cast<int>(size() / static_cast<std::size_t>(cols()));
  }
  Real& operator[](std::size_t i) { return data[i]; }
  Real operator[](std::size_t i) const { return data[i]; }
};

// A named trainable array and its accumulated gradient.
template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  Tensor<Real> grad;
  bool decay = true;  // subject to decoupled weight decay

  Parameter(std::string n, Tensor<Real> v, bool d)
      : name(std::move(n)), value(std::move(v)), grad(value.shape), decay(d) {}

  void zero_grad() { std::fill(grad.data.begin(), grad.data.end(), Real(0)); }
};

}  // namespace semfuse
