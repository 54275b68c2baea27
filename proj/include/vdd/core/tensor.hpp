#pragma once

#include <algorithm>
#include <cassert>
#include <cstdint>
#include <cstring>
#include <memory>
#include <vector>

namespace vdd {

// Dense row-major tensor. Images use NHWC layout so convolutions reduce to
// one GEMM per layer over im2col patches. Storage is a flat array; the
// default constructors zero-fill, while `uninit` skips initialization for
// buffers that are fully overwritten (im2col scratch, op outputs) — that
// single extra pass dominated step time at training scale.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<int64_t> shape) : Tensor(std::move(shape), T(0)) {}

  Tensor(std::vector<int64_t> shape, T fill_value)
      : shape_(std::move(shape)),
        size_(count(shape_)),
        data_(std::make_unique_for_overwrite<T[]>(size_)) {
    std::fill_n(data_.get(), size_, fill_value);
  }

  static Tensor uninit(std::vector<int64_t> shape) {
    Tensor t;
    t.shape_ = std::move(shape);
    t.size_ = count(t.shape_);
    t.data_ = std::make_unique_for_overwrite<T[]>(t.size_);
    return t;
  }

  static Tensor zeros(std::vector<int64_t> shape) { return Tensor(std::move(shape)); }

  static Tensor scalar(T v) { return Tensor({1}, v); }

  static Tensor from(std::vector<int64_t> shape, const std::vector<T>& values) {
    Tensor t = uninit(std::move(shape));
    assert(static_cast<int64_t>(values.size()) == t.size_);
    std::copy_n(values.data(), t.size_, t.data_.get());
    return t;
  }

  Tensor(const Tensor& o)
      : shape_(o.shape_),
        size_(o.size_),
        data_(o.size_ ? std::make_unique_for_overwrite<T[]>(o.size_) : nullptr) {
    if (size_) std::copy_n(o.data_.get(), size_, data_.get());
  }

  Tensor& operator=(const Tensor& o) {
    if (this == &o) return *this;
    if (size_ != o.size_) data_ = o.size_ ? std::make_unique_for_overwrite<T[]>(o.size_) : nullptr;
    shape_ = o.shape_;
    size_ = o.size_;
    if (size_) std::copy_n(o.data_.get(), size_, data_.get());
    return *this;
  }

  Tensor(Tensor&&) noexcept = default;
  Tensor& operator=(Tensor&&) noexcept = default;

  int64_t numel() const { return size_; }
  size_t ndim() const { return shape_.size(); }
  int64_t dim(size_t i) const { return shape_[i]; }
  const std::vector<int64_t>& shape() const { return shape_; }

  T* data() { return data_.get(); }
  const T* data() const { return data_.get(); }

  T& operator[](int64_t i) { return data_[i]; }
  const T& operator[](int64_t i) const { return data_[i]; }

  // Reinterpret shape; element count must match.
  Tensor reshaped(std::vector<int64_t> shape) const {
    assert(count(shape) == size_);
    Tensor t = *this;
    t.shape_ = std::move(shape);
    return t;
  }

  void fill(T v) { std::fill_n(data_.get(), size_, v); }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  static int64_t count(const std::vector<int64_t>& s) {
    if (s.empty()) return 0;
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
  }

 private:
  std::vector<int64_t> shape_;
  int64_t size_ = 0;
  std::unique_ptr<T[]> data_;
};

}  // namespace vdd
