#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace storylab {

using Shape = std::vector<std::size_t>;

std::size_t element_count(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major array of doubles with an optional gradient buffer.
///
/// `Tensor` is a handle: copies share storage. Parameters are shared between
/// the model and every graph that reads them, and weight tying is literally
/// two names for one storage. Use `clone()` for an independent copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const noexcept { return impl_ != nullptr; }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const;

  std::span<double> values();
  std::span<const double> values() const;
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool flag);

  bool has_grad() const;
  // Allocates a zero gradient on first use.
  std::span<double> grad();
  // Empty when no gradient has been allocated.
  std::span<const double> grad() const;
  // Writable gradient through a shared handle, allocated on first use.
  std::span<double> grad_buffer() const;
  void zero_grad();
  void clear_grad();

  bool shares_storage(const Tensor& other) const noexcept { return impl_ == other.impl_; }
  Tensor clone() const;

 private:
  struct Storage {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> impl_;
};

}  // namespace storylab
