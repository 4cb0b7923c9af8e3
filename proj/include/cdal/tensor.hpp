#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

namespace cdal {

class Tape;

// Dense row-major tensor of 64-bit floats. A Tensor is a cheap handle over a
// shared payload; values are immutable once the tensor participates in a
// graph. Tensors created off-tape act as constants; Tape::leaf lifts a value
// onto a tape so gradients reach it.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<int> shape);
  static Tensor full(std::vector<int> shape, double value);
  static Tensor from(std::vector<int> shape, std::vector<double> data);
  static Tensor scalar(double value);

  bool defined() const { return static_cast<bool>(data_); }
  const std::vector<int>& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  long long size() const;

  const std::vector<double>& data() const { return *data_; }
  // Mutable access to values; only valid before the tensor is used in a
  // graph (parameter init, finite-difference perturbation).
  std::vector<double>& values();

  double item() const;
  double at(std::initializer_list<int> idx) const;

  bool on_tape() const { return tape_ != nullptr; }
  Tape* tape() const { return tape_; }
  int node() const { return node_; }

  // Gradient buffer, populated by Tape::backward; nullptr off-tape.
  const std::vector<double>* grad() const { return grad_ ? grad_.get() : nullptr; }

  // Value copy detached from any tape.
  Tensor detached() const;

  // Shared payload handles, used by op backward closures.
  std::shared_ptr<std::vector<double>> grad_ptr() const { return grad_; }
  std::shared_ptr<std::vector<double>> data_ptr() const { return data_; }

 private:
  friend class Tape;
  std::vector<int> shape_;
  std::shared_ptr<std::vector<double>> data_;
  std::shared_ptr<std::vector<double>> grad_;
  Tape* tape_ = nullptr;
  int node_ = -1;

  friend Tape* common_tape(std::initializer_list<const Tensor*> ts, const char* op);
  friend struct OpRecorder;
};

// Reverse-mode tape. Records one node per operation output, in topological
// order by construction. backward() runs each recorded rule once, newest
// first, and accumulates into the grad buffers of every reachable node.
// A tape is confined to a single thread.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Tensor leaf(const Tensor& value);
  Tensor leaf(std::vector<int> shape, std::vector<double> data);

  // loss must be a size-1 tensor recorded on this tape
  void backward(const Tensor& loss);

  int node_count() const { return static_cast<int>(nodes_.size()); }

 private:
  struct Node {
    std::vector<int> inputs;
    std::function<void()> back;  // empty for leaves
    std::shared_ptr<std::vector<double>> grad;
  };
  std::vector<Node> nodes_;

  friend struct OpRecorder;
};

// ---- forward/backward ops ------------------------------------------------
// All ops validate shapes, compute the forward value, and, when any input is
// on a tape, record a backward rule on that tape. Mixing tapes is an error.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor elem_mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor softmax(const Tensor& x);      // over the last axis
Tensor log_softmax(const Tensor& x);  // over the last axis

// x: [C_in,H,W], w: [C_out,C_in,kH,kW]; odd kernels, zero same-padding, stride 1
Tensor conv2d(const Tensor& x, const Tensor& w);
// x: [C,H,W], w: [C,kH,kW]; per-channel convolution, same padding, stride 1
Tensor depthwise_conv2d(const Tensor& x, const Tensor& w);

Tensor gap(const Tensor& x);                         // [C,H,W] -> [C]
Tensor avg_pool2x2(const Tensor& x);                 // [C,H,W] -> [C,H/2,W/2]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);  // [in],[out,in],[out]
Tensor concat_channels(const Tensor& a, const Tensor& b);          // rank-3, axis 0
Tensor spatial_mul(const Tensor& x, const Tensor& a);  // [C,H,W] * [H,W] broadcast
Tensor channel_slice(const Tensor& x, int c);          // [M,H,W] -> [H,W]
Tensor channel_mean(const Tensor& x);                  // [M,H,W] -> [H,W]
Tensor channel_sum(const Tensor& x);                   // [M,H,W] -> [H,W]

Tensor sum(const Tensor& x);       // scalar
Tensor mean_abs(const Tensor& x);  // scalar, mean of |x| over all entries
Tensor vmax(const Tensor& x);      // scalar max; gradient to the first argmax
Tensor pick(const Tensor& x, int i);             // rank-1 -> scalar
Tensor mul_by_scalar(const Tensor& x, const Tensor& s);  // s is a scalar tensor
Tensor div_by_scalar(const Tensor& x, const Tensor& s);  // s is a scalar tensor
Tensor add_channel_bias(const Tensor& x, const Tensor& b);  // [C,H,W] + [C]

// True when every entry is finite.
bool all_finite(const Tensor& x);

std::string shape_str(const std::vector<int>& shape);

}  // namespace cdal
