#ifndef TARVIS_TENSOR_HPP
#define TARVIS_TENSOR_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace tarvis {

using Index = Eigen::Index;
using Shape = std::vector<Index>;

inline Index shape_numel(const Shape& s) {
  Index n = 1;
  for (Index d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ")";
  return os.str();
}

/// Dense n-d array, row-major, flat Eigen storage. The last dimension is the
/// "column" axis for all matrix views.
template <class S>
class TensorT {
 public:
  using Scalar = S;
  using Storage = Eigen::Array<S, Eigen::Dynamic, 1>;
  using MatrixMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
  using ConstMatrixMap =
      Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

  TensorT() = default;
  explicit TensorT(Shape shape) : shape_(std::move(shape)) {
    data_.setZero(shape_numel(shape_));
  }
  TensorT(Shape shape, Storage data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) throw std::invalid_argument("tensor: shape/data size mismatch");
  }

  static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }
  static TensorT full(Shape shape, S v) {
    TensorT t(std::move(shape));
    t.data_.setConstant(v);
    return t;
  }
  static TensorT scalar(S v) { return full({1}, v); }
  static TensorT from(Shape shape, std::initializer_list<S> vals) {
    TensorT t(std::move(shape));
    if ((Index)vals.size() != t.size()) throw std::invalid_argument("tensor: initializer size mismatch");
    Index i = 0;
    for (S v : vals) t.data_[i++] = v;
    return t;
  }

  const Shape& shape() const { return shape_; }
  Index rank() const { return (Index)shape_.size(); }
  Index dim(Index i) const { return shape_[(std::size_t)i]; }
  Index size() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  Storage& array() { return data_; }
  const Storage& array() const { return data_; }
  S* data() { return data_.data(); }
  const S* data() const { return data_.data(); }

  S& operator[](Index i) { return data_[i]; }
  S operator[](Index i) const { return data_[i]; }

  template <class... Ix>
  S& at(Ix... ix) {
    return data_[flat_index(ix...)];
  }
  template <class... Ix>
  S at(Ix... ix) const {
    return data_[flat_index(ix...)];
  }

  /// Rows = product of all leading dims, cols = last dim.
  Index cols() const { return shape_.empty() ? 1 : shape_.back(); }
  Index rows() const { return shape_.empty() ? 0 : size() / cols(); }

  MatrixMap mat() { return MatrixMap(data_.data(), rows(), cols()); }
  ConstMatrixMap mat() const { return ConstMatrixMap(data_.data(), rows(), cols()); }
  MatrixMap mat(Index r, Index c) {
    if (r * c != size()) throw std::invalid_argument("tensor: mat() size mismatch");
    return MatrixMap(data_.data(), r, c);
  }
  ConstMatrixMap mat(Index r, Index c) const {
    if (r * c != size()) throw std::invalid_argument("tensor: mat() size mismatch");
    return ConstMatrixMap(data_.data(), r, c);
  }

  TensorT reshaped(Shape shape) const {
    if (shape_numel(shape) != size()) {
      throw std::invalid_argument("tensor: reshape " + shape_str(shape_) + " -> " + shape_str(shape));
    }
    return TensorT(std::move(shape), data_);
  }

  bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

  bool all_finite() const {
    for (Index i = 0; i < data_.size(); ++i)
      if (!std::isfinite((double)data_[i])) return false;
    return true;
  }

 private:
  template <class... Ix>
  Index flat_index(Ix... ix) const {
    const Index idx[] = {static_cast<Index>(ix)...};
    constexpr std::size_t n = sizeof...(ix);
    Index flat = 0;
    for (std::size_t i = 0; i < n; ++i) flat = flat * shape_[i] + idx[i];
    return flat;
  }

  Shape shape_;
  Storage data_;
};

using Tensor = TensorT<double>;

}  // namespace tarvis

#endif
