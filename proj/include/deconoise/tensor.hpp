#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace deconoise {

using Shape = std::vector<int>;

inline std::int64_t numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::string r = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) r += ",";
    r += std::to_string(s[i]);
  }
  return r + "]";
}

namespace detail {

template <class... Args>
std::string cat(Args&&... args) {
  std::ostringstream os;
  (os << ... << std::forward<Args>(args));
  return os.str();
}

template <class... Args>
void require(bool cond, Args&&... args) {
  if (!cond) throw std::runtime_error(cat(std::forward<Args>(args)...));
}

template <class T>
struct TensorData {
  Shape shape;
  std::vector<T> value;
  std::vector<T> grad;  // allocated on first use
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), T(0));
  }
};

}  // namespace detail

// Dense n-dimensional array with shared storage. Copying a Tensor aliases the
// underlying buffer; gradients accumulate in place across tapes, which is what
// makes virtual-batch accumulation work.
template <class T>
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    return filled(std::move(shape), T(0), requires_grad);
  }

  static Tensor filled(Shape shape, T v, bool requires_grad = false) {
    auto d = std::make_shared<detail::TensorData<T>>();
    d->value.assign(static_cast<std::size_t>(numel(shape)), v);
    d->shape = std::move(shape);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
  }

  static Tensor from(Shape shape, std::vector<T> values,
                     bool requires_grad = false) {
    detail::require(
        numel(shape) == static_cast<std::int64_t>(values.size()),
        "tensor: shape ", shape_str(shape), " does not match buffer length ",
        values.size());
    auto d = std::make_shared<detail::TensorData<T>>();
    d->shape = std::move(shape);
    d->value = std::move(values);
    d->requires_grad = requires_grad;
    return Tensor(std::move(d));
  }

  // Scalar (0-d is represented as shape [1]).
  static Tensor scalar(T v, bool requires_grad = false) {
    return from({1}, {v}, requires_grad);
  }

  bool defined() const { return d_ != nullptr; }
  const Shape& shape() const { return d_->shape; }
  int dim(int i) const { return d_->shape[static_cast<std::size_t>(i)]; }
  std::int64_t size() const {
    return static_cast<std::int64_t>(d_->value.size());
  }
  bool is_scalar() const { return size() == 1; }

  const std::vector<T>& value() const { return d_->value; }
  std::vector<T>& value() { return d_->value; }
  T item() const {
    detail::require(is_scalar(), "tensor: item() on non-scalar shape ",
                    shape_str(d_->shape));
    return d_->value[0];
  }

  bool requires_grad() const { return d_->requires_grad; }
  void set_requires_grad(bool b) { d_->requires_grad = b; }

  // Gradient buffer; reads as zeros until something accumulated into it.
  std::vector<T>& grad() {
    d_->ensure_grad();
    return d_->grad;
  }
  const std::vector<T>& grad() const {
    d_->ensure_grad();
    return d_->grad;
  }
  void zero_grad() {
    if (!d_->grad.empty()) d_->grad.assign(d_->value.size(), T(0));
  }

  std::shared_ptr<detail::TensorData<T>> data() const { return d_; }
  bool same_storage(const Tensor& o) const { return d_ == o.d_; }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorData<T>> d)
      : d_(std::move(d)) {}
  std::shared_ptr<detail::TensorData<T>> d_;
};

// Ordered record of executed differentiable operations. Ops append themselves
// during the forward pass, so the record is topological by construction.
// backward() replays it once in reverse; a second call is an error.
template <class T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(std::function<void()> backprop) {
    nodes_.push_back(std::move(backprop));
  }

  std::size_t node_count() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and propagates to every recorded operation's
  // inputs. Gradients of leaves with requires_grad accumulate with +=.
  void backward(const Tensor<T>& loss) {
    detail::require(loss.is_scalar(),
                    "backward: loss must be scalar, got shape ",
                    shape_str(loss.shape()));
    detail::require(!used_, "backward: tape already consumed; "
                            "build a fresh tape before calling again");
    used_ = true;
    loss.data()->ensure_grad();
    loss.data()->grad[0] += T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      (*it)();
      *it = nullptr;  // release captured activation buffers early
    }
  }

 private:
  std::vector<std::function<void()>> nodes_;
  bool used_ = false;
};

template <class T>
Tensor<double> to_double(const Tensor<T>& t) {
  std::vector<double> v(t.value().begin(), t.value().end());
  auto r = Tensor<double>::from(t.shape(), std::move(v), t.requires_grad());
  return r;
}

}  // namespace deconoise
