#include "cdal/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "cdal/errors.hpp"

namespace cdal {

namespace {

long long shape_size(const std::vector<int>& shape) {
  long long n = 1;
  for (const int d : shape) {
    if (d <= 0) throw std::invalid_argument("tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

void require(bool cond, const std::string& msg) {
  if (!cond) throw std::invalid_argument(msg);
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

std::string shape_str(const std::vector<int>& shape) {
  std::string s = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + "]";
}

// ---- Tensor ----------------------------------------------------------------

Tensor Tensor::zeros(std::vector<int> shape) {
  const long long n = shape_size(shape);
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::make_shared<std::vector<double>>(static_cast<std::size_t>(n), 0.0);
  return t;
}

Tensor Tensor::full(std::vector<int> shape, double value) {
  Tensor t = zeros(std::move(shape));
  std::fill(t.data_->begin(), t.data_->end(), value);
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<double> data) {
  const long long n = shape_size(shape);
  if (static_cast<long long>(data.size()) != n) {
    throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                " does not match shape " + shape_str(shape));
  }
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = std::make_shared<std::vector<double>>(std::move(data));
  return t;
}

Tensor Tensor::scalar(double value) { return from({}, {value}); }

long long Tensor::size() const { return data_ ? static_cast<long long>(data_->size()) : 0; }

std::vector<double>& Tensor::values() {
  if (on_tape()) throw std::logic_error("cannot mutate a tensor recorded on a tape");
  return *data_;
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("item() requires a size-1 tensor");
  return (*data_)[0];
}

double Tensor::at(std::initializer_list<int> idx) const {
  if (static_cast<int>(idx.size()) != rank())
    throw std::invalid_argument("at(): index rank mismatch");
  long long flat = 0;
  int k = 0;
  for (const int i : idx) {
    const int d = shape_[static_cast<std::size_t>(k)];
    if (i < 0 || i >= d) throw std::out_of_range("at(): index out of bounds");
    flat = flat * d + i;
    ++k;
  }
  return (*data_)[static_cast<std::size_t>(flat)];
}

Tensor Tensor::detached() const {
  Tensor t;
  t.shape_ = shape_;
  t.data_ = std::make_shared<std::vector<double>>(*data_);
  return t;
}

// ---- Tape ------------------------------------------------------------------

Tensor Tape::leaf(const Tensor& value) {
  Tensor t = value.detached();
  t.tape_ = this;
  t.node_ = static_cast<int>(nodes_.size());
  t.grad_ = std::make_shared<std::vector<double>>(static_cast<std::size_t>(t.size()), 0.0);
  nodes_.push_back(Node{{}, {}, t.grad_});
  return t;
}

Tensor Tape::leaf(std::vector<int> shape, std::vector<double> data) {
  return leaf(Tensor::from(std::move(shape), std::move(data)));
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) throw std::invalid_argument("backward: loss must be scalar");
  if (loss.tape() != this || loss.node() < 0)
    throw std::invalid_argument("backward: loss is not recorded on this tape");

  for (auto& n : nodes_) std::fill(n.grad->begin(), n.grad->end(), 0.0);
  (*nodes_[static_cast<std::size_t>(loss.node())].grad)[0] = 1.0;

  // mark nodes that can influence the loss
  std::vector<char> reachable(nodes_.size(), 0);
  std::vector<int> stack{loss.node()};
  reachable[static_cast<std::size_t>(loss.node())] = 1;
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    for (const int in : nodes_[static_cast<std::size_t>(id)].inputs) {
      if (in >= 0 && !reachable[static_cast<std::size_t>(in)]) {
        reachable[static_cast<std::size_t>(in)] = 1;
        stack.push_back(in);
      }
    }
  }

  for (int id = loss.node(); id >= 0; --id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (reachable[static_cast<std::size_t>(id)] && n.back) n.back();
  }
}

// ---- op plumbing -----------------------------------------------------------

Tape* common_tape(std::initializer_list<const Tensor*> ts, const char* op) {
  Tape* tape = nullptr;
  for (const Tensor* t : ts) {
    if (!t->on_tape()) continue;
    if (tape && tape != t->tape())
      throw std::logic_error(std::string(op) + ": inputs recorded on different tapes");
    tape = t->tape_;
  }
  return tape;
}

// Finishes an op: attaches `out` to the tape (when any input was recorded)
// and installs the backward rule produced by `make_back(out)`.
struct OpRecorder {
  template <typename MakeBack>
  static Tensor finish(Tape* tape, Tensor out, std::vector<int> input_nodes,
                       MakeBack&& make_back) {
    if (!tape) return out;
    out.tape_ = tape;
    out.node_ = static_cast<int>(tape->nodes_.size());
    out.grad_ =
        std::make_shared<std::vector<double>>(static_cast<std::size_t>(out.size()), 0.0);
    tape->nodes_.push_back(Tape::Node{std::move(input_nodes), {}, out.grad_});
    tape->nodes_.back().back = make_back(out);
    return out;
  }
};

namespace {

using Buf = std::shared_ptr<std::vector<double>>;

void axpy(Buf dst, const std::vector<double>& src, double c) {
  if (!dst) return;
  for (std::size_t i = 0; i < src.size(); ++i) (*dst)[i] += c * src[i];
}

}  // namespace

// ---- elementwise -----------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bd[i];
  Tape* tape = common_tape({&a, &b}, "add");
  Tensor r = Tensor::from(a.shape(), std::move(out));
  return OpRecorder::finish(tape, std::move(r), {a.node(), b.node()}, [&](const Tensor& o) {
    Buf go = o.grad_ptr(), ga = a.grad_ptr(), gb = b.grad_ptr();
    return [go, ga, gb]() {
      axpy(ga, *go, 1.0);
      axpy(gb, *go, 1.0);
    };
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bd[i];
  Tape* tape = common_tape({&a, &b}, "sub");
  Tensor r = Tensor::from(a.shape(), std::move(out));
  return OpRecorder::finish(tape, std::move(r), {a.node(), b.node()}, [&](const Tensor& o) {
    Buf go = o.grad_ptr(), ga = a.grad_ptr(), gb = b.grad_ptr();
    return [go, ga, gb]() {
      axpy(ga, *go, 1.0);
      axpy(gb, *go, -1.0);
    };
  });
}

Tensor elem_mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "elem_mul");
  std::vector<double> out(a.data());
  const auto& bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bd[i];
  Tape* tape = common_tape({&a, &b}, "elem_mul");
  Tensor r = Tensor::from(a.shape(), std::move(out));
  return OpRecorder::finish(tape, std::move(r), {a.node(), b.node()}, [&](const Tensor& o) {
    Buf go = o.grad_ptr(), ga = a.grad_ptr(), gb = b.grad_ptr();
    Buf ad = a.data_ptr(), bd2 = b.data_ptr();
    return [go, ga, gb, ad, bd2]() {
      if (ga)
        for (std::size_t i = 0; i < go->size(); ++i) (*ga)[i] += (*go)[i] * (*bd2)[i];
      if (gb)
        for (std::size_t i = 0; i < go->size(); ++i) (*gb)[i] += (*go)[i] * (*ad)[i];
    };
  });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.data());
  for (double& v : out) v *= c;
  Tape* tape = common_tape({&a}, "scale");
  Tensor r = Tensor::from(a.shape(), std::move(out));
  return OpRecorder::finish(tape, std::move(r), {a.node()}, [&](const Tensor& o) {
    Buf go = o.grad_ptr(), ga = a.grad_ptr();
    return [go, ga, c]() { axpy(ga, *go, c); };
  });
}

// ---- activations -----------------------------------------------------------

namespace {

double sigmoid_scalar(double z) {
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double softplus_scalar(double z) {
  // ln(1+e^z) with the stable branch for large |z|
  if (z > 0.0) return z + std::log1p(std::exp(-z));
  return std::log1p(std::exp(z));
}

}  // namespace

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.data());
  for (double& v : out) v = v > 0.0 ? v : 0.0;
  Tape* tape = common_tape({&x}, "relu");
  Tensor r = Tensor::from(x.shape(), std::move(out));
  return OpRecorder::finish(tape, std::move(r), {x.node()}, [&](const Tensor& o) {
    Buf go = o.grad_ptr(), gx = x.grad_ptr(), xd = x.data_ptr();
    return [go, gx, xd]() {
      if (!gx) return;
      for (std::size_t i = 0; i < go->size(); ++i)
        if ((*xd)[i] > 0.0) (*gx)[i] += (*go)[i];
    };
  });
}

Tensor sigmoid(const Tensor& x) {
  std::vector<double> out(x.data());
  for (double& v : out) v = sigmoid_scalar(v);
  Tape* tape = common_tape({&x}, "sigmoid");
  Tensor r = Tensor::from(x.shape(), std::move(out));
  return OpRecorder::finish(tape, std::move(r), {x.node()}, [&](const Tensor& o) {
    Buf go = o.grad_ptr(), gx = x.grad_ptr(), od = o.data_ptr();
    return [go, gx, od]() {
      if (!gx) return;
      for (std::size_t i = 0; i < go->size(); ++i) {
        const double s = (*od)[i];
        (*gx)[i] += (*go)[i] * s * (1.0 - s);
      }
    };
  });
}

Tensor softplus(const Tensor& x) {
  std::vector<double> out(x.data());
  for (double& v : out) v = softplus_scalar(v);
  Tape* tape = common_tape({&x}, "softplus");
  Tensor r = Tensor::from(x.shape(), std::move(out));
  return OpRecorder::finish(tape, std::move(r), {x.node()}, [&](const Tensor& o) {
    Buf go = o.grad_ptr(), gx = x.grad_ptr(), xd = x.data_ptr();
    return [go, gx, xd]() {
      if (!gx) return;
      for (std::size_t i = 0; i < go->size(); ++i)
        (*gx)[i] += (*go)[i] * sigmoid_scalar((*xd)[i]);
    };
  });
}

namespace {

// rows = size / last_dim; applies softmax or log-softmax per row
void softmax_rows(const std::vector<double>& in, std::vector<double>& out, int last_dim,
                  bool log_form) {
  const std::size_t rows = in.size() / static_cast<std::size_t>(last_dim);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * static_cast<std::size_t>(last_dim);
    double mx = in[base];
    for (int k = 1; k < last_dim; ++k) mx = std::max(mx, in[base + static_cast<std::size_t>(k)]);
    double denom = 0.0;
    for (int k = 0; k < last_dim; ++k)
      denom += std::exp(in[base + static_cast<std::size_t>(k)] - mx);
    if (log_form) {
      const double log_denom = std::log(denom);
      for (int k = 0; k < last_dim; ++k)
        out[base + static_cast<std::size_t>(k)] =
            in[base + static_cast<std::size_t>(k)] - mx - log_denom;
    } else {
      for (int k = 0; k < last_dim; ++k)
        out[base + static_cast<std::size_t>(k)] =
            std::exp(in[base + static_cast<std::size_t>(k)] - mx) / denom;
    }
  }
}

}  // namespace

Tensor softmax(const Tensor& x) {
  require(x.rank() >= 1, "softmax: rank must be >= 1");
  const int last = x.dim(x.rank() - 1);
  std::vector<double> out(x.data().size());
  softmax_rows(x.data(), out, last, false);
  Tape* tape = common_tape({&x}, "softmax");
  Tensor r = Tensor::from(x.shape(), std::move(out));
  return OpRecorder::finish(tape, std::move(r), {x.node()}, [&](const Tensor& o) {
    Buf go = o.grad_ptr(), gx = x.grad_ptr(), od = o.data_ptr();
    return [go, gx, od, last]() {
      if (!gx) return;
      const std::size_t rows = od->size() / static_cast<std::size_t>(last);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * static_cast<std::size_t>(last);
        double dot = 0.0;
        for (int k = 0; k < last; ++k) {
          const std::size_t i = base + static_cast<std::size_t>(k);
          dot += (*go)[i] * (*od)[i];
        }
        for (int k = 0; k < last; ++k) {
          const std::size_t i = base + static_cast<std::size_t>(k);
          (*gx)[i] += (*od)[i] * ((*go)[i] - dot);
        }
      }
    };
  });
}

Tensor log_softmax(const Tensor& x) {
  require(x.rank() >= 1, "log_softmax: rank must be >= 1");
  const int last = x.dim(x.rank() - 1);
  std::vector<double> out(x.data().size());
  softmax_rows(x.data(), out, last, true);
  Tape* tape = common_tape({&x}, "log_softmax");
  Tensor r = Tensor::from(x.shape(), std::move(out));
  return OpRecorder::finish(tape, std::move(r), {x.node()}, [&](const Tensor& o) {
    Buf go = o.grad_ptr(), gx = x.grad_ptr(), od = o.data_ptr();
    return [go, gx, od, last]() {
      if (!gx) return;
      const std::size_t rows = od->size() / static_cast<std::size_t>(last);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t base = r * static_cast<std::size_t>(last);
        double gsum = 0.0;
        for (int k = 0; k < last; ++k) gsum += (*go)[base + static_cast<std::size_t>(k)];
        for (int k = 0; k < last; ++k) {
          const std::size_t i = base + static_cast<std::size_t>(k);
          (*gx)[i] += (*go)[i] - std::exp((*od)[i]) * gsum;
        }
      }
    };
  });
}

// ---- convolutions ----------------------------------------------------------

namespace {

// out[h0..h1) x [w0..w1) += c * src shifted by (dh, dw); bounds precomputed by caller
void conv_accumulate(double* out, const double* src, int H, int W, int dh, int dw, double c) {
  const int h0 = std::max(0, -dh), h1 = std::min(H, H - dh);
  const int w0 = std::max(0, -dw), w1 = std::min(W, W - dw);
  for (int h = h0; h < h1; ++h) {
    double* orow = out + h * W;
    const double* srow = src + (h + dh) * W;
    for (int w = w0; w < w1; ++w) orow[w] += c * srow[w + dw];
  }
}

// correlation of two H*W planes under shift (dh, dw): sum_x a[h,w]*b[h+dh,w+dw]
double conv_correlate(const double* a, const double* b, int H, int W, int dh, int dw) {
  const int h0 = std::max(0, -dh), h1 = std::min(H, H - dh);
  const int w0 = std::max(0, -dw), w1 = std::min(W, W - dw);
  double acc = 0.0;
  for (int h = h0; h < h1; ++h) {
    const double* arow = a + h * W;
    const double* brow = b + (h + dh) * W;
    for (int w = w0; w < w1; ++w) acc += arow[w] * brow[w + dw];
  }
  return acc;
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w) {
  require(x.rank() == 3, "conv2d: x must be [C_in,H,W]");
  require(w.rank() == 4, "conv2d: w must be [C_out,C_in,kH,kW]");
  const int Ci = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int Co = w.dim(0), kH = w.dim(2), kW = w.dim(3);
  if (w.dim(1) != Ci)
    throw std::invalid_argument("conv2d: channel mismatch, x has " + std::to_string(Ci) +
                                " channels, w expects " + std::to_string(w.dim(1)));
  require(kH % 2 == 1 && kW % 2 == 1, "conv2d: kernel dims must be odd");
  const int ph = kH / 2, pw = kW / 2;
  const int plane = H * W;

  std::vector<double> out(static_cast<std::size_t>(Co) * plane, 0.0);
  const double* xd = x.data().data();
  const double* wd = w.data().data();
  for (int co = 0; co < Co; ++co) {
    double* oplane = out.data() + co * plane;
    for (int ci = 0; ci < Ci; ++ci) {
      const double* xplane = xd + ci * plane;
      const double* wk = wd + ((co * Ci + ci) * kH) * kW;
      for (int u = 0; u < kH; ++u)
        for (int v = 0; v < kW; ++v)
          conv_accumulate(oplane, xplane, H, W, u - ph, v - pw, wk[u * kW + v]);
    }
  }

  Tape* tape = common_tape({&x, &w}, "conv2d");
  Tensor r = Tensor::from({Co, H, W}, std::move(out));
  return OpRecorder::finish(tape, std::move(r), {x.node(), w.node()}, [&](const Tensor& o) {
    Buf go = o.grad_ptr(), gx = x.grad_ptr(), gw = w.grad_ptr();
    Buf xd2 = x.data_ptr(), wd2 = w.data_ptr();
    return [go, gx, gw, xd2, wd2, Ci, Co, H, W, kH, kW, ph, pw, plane]() {
      const double* g = go->data();
      if (gx) {
        for (int ci = 0; ci < Ci; ++ci) {
          double* gxp = gx->data() + ci * plane;
          for (int co = 0; co < Co; ++co) {
            const double* gplane = g + co * plane;
            const double* wk = wd2->data() + ((co * Ci + ci) * kH) * kW;
            for (int u = 0; u < kH; ++u)
              for (int v = 0; v < kW; ++v)
                conv_accumulate(gxp, gplane, H, W, ph - u, pw - v, wk[u * kW + v]);
          }
        }
      }
      if (gw) {
        for (int co = 0; co < Co; ++co) {
          const double* gplane = g + co * plane;
          for (int ci = 0; ci < Ci; ++ci) {
            const double* xplane = xd2->data() + ci * plane;
            double* gwk = gw->data() + ((co * Ci + ci) * kH) * kW;
            for (int u = 0; u < kH; ++u)
              for (int v = 0; v < kW; ++v)
                gwk[u * kW + v] += conv_correlate(gplane, xplane, H, W, u - ph, v - pw);
          }
        }
      }
    };
  });
}

Tensor depthwise_conv2d(const Tensor& x, const Tensor& w) {
  require(x.rank() == 3, "depthwise_conv2d: x must be [C,H,W]");
  require(w.rank() == 3, "depthwise_conv2d: w must be [C,kH,kW]");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  const int kH = w.dim(1), kW = w.dim(2);
  if (w.dim(0) != C)
    throw std::invalid_argument("depthwise_conv2d: channel mismatch, x has " +
                                std::to_string(C) + ", w has " + std::to_string(w.dim(0)));
  require(kH % 2 == 1 && kW % 2 == 1, "depthwise_conv2d: kernel dims must be odd");
  const int ph = kH / 2, pw = kW / 2;
  const int plane = H * W;

  std::vector<double> out(static_cast<std::size_t>(C) * plane, 0.0);
  const double* xd = x.data().data();
  const double* wd = w.data().data();
  for (int c = 0; c < C; ++c) {
    double* oplane = out.data() + c * plane;
    const double* xplane = xd + c * plane;
    const double* wk = wd + c * kH * kW;
    for (int u = 0; u < kH; ++u)
      for (int v = 0; v < kW; ++v)
        conv_accumulate(oplane, xplane, H, W, u - ph, v - pw, wk[u * kW + v]);
  }

  Tape* tape = common_tape({&x, &w}, "depthwise_conv2d");
  Tensor r = Tensor::from({C, H, W}, std::move(out));
  return OpRecorder::finish(tape, std::move(r), {x.node(), w.node()}, [&](const Tensor& o) {
    Buf go = o.grad_ptr(), gx = x.grad_ptr(), gw = w.grad_ptr();
    Buf xd2 = x.data_ptr(), wd2 = w.data_ptr();
    return [go, gx, gw, xd2, wd2, C, H, W, kH, kW, ph, pw, plane]() {
      const double* g = go->data();
      for (int c = 0; c < C; ++c) {
        const double* gplane = g + c * plane;
        if (gx) {
          double* gxp = gx->data() + c * plane;
          const double* wk = wd2->data() + c * kH * kW;
          for (int u = 0; u < kH; ++u)
            for (int v = 0; v < kW; ++v)
              conv_accumulate(gxp, gplane, H, W, ph - u, pw - v, wk[u * kW + v]);
        }
        if (gw) {
          const double* xplane = xd2->data() + c * plane;
          double* gwk = gw->data() + c * kH * kW;
          for (int u = 0; u < kH; ++u)
            for (int v = 0; v < kW; ++v)
              gwk[u * kW + v] += conv_correlate(gplane, xplane, H, W, u - ph, v - pw);
        }
      }
    };
  });
}

// ---- pooling / layout ------------------------------------------------------

Tensor gap(const Tensor& x) {
  require(x.rank() == 3, "gap: x must be [C,H,W]");
  const int C = x.dim(0), plane = x.dim(1) * x.dim(2);
  const double inv = 1.0 / plane;
  std::vector<double> out(static_cast<std::size_t>(C), 0.0);
  const double* xd = x.data().data();
  for (int c = 0; c < C; ++c) {
    double acc = 0.0;
    for (int i = 0; i < plane; ++i) acc += xd[c * plane + i];
    out[static_cast<std::size_t>(c)] = acc * inv;
  }
  Tape* tape = common_tape({&x}, "gap");
  Tensor r = Tensor::from({C}, std::move(out));
  return OpRecorder::finish(tape, std::move(r), {x.node()}, [&](const Tensor& o) {
    Buf go = o.grad_ptr(), gx = x.grad_ptr();
    return [go, gx, C, plane, inv]() {
      if (!gx) return;
      for (int c = 0; c < C; ++c) {
        const double g = (*go)[static_cast<std::size_t>(c)] * inv;
        for (int i = 0; i < plane; ++i) (*gx)[static_cast<std::size_t>(c * plane + i)] += g;
      }
    };
  });
}

Tensor avg_pool2x2(const Tensor& x) {
  require(x.rank() == 3, "avg_pool2x2: x must be [C,H,W]");
  const int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  require(H % 2 == 0 && W % 2 == 0, "avg_pool2x2: H and W must be even");
  const int Ho = H / 2, Wo = W / 2;
  std::vector<double> out(static_cast<std::size_t>(C) * Ho * Wo);
  const double* xd = x.data().data();
  for (int c = 0; c < C; ++c)
    for (int h = 0; h < Ho; ++h)
      for (int w = 0; w < Wo; ++w) {
        const int base = c * H * W + 2 * h * W + 2 * w;
        out[static_cast<std::size_t>((c * Ho + h) * Wo + w)] =
            0.25 * (xd[base] + xd[base + 1] + xd[base + W] + xd[base + W + 1]);
      }
  Tape* tape = common_tape({&x}, "avg_pool2x2");
  Tensor r = Tensor::from({C, Ho, Wo}, std::move(out));
  return OpRecorder::finish(tape, std::move(r), {x.node()}, [&](const Tensor& o) {
    Buf go = o.grad_ptr(), gx = x.grad_ptr();
    return [go, gx, C, H, W, Ho, Wo]() {
      if (!gx) return;
      for (int c = 0; c < C; ++c)
        for (int h = 0; h < Ho; ++h)
          for (int w = 0; w < Wo; ++w) {
            const double g = 0.25 * (*go)[static_cast<std::size_t>((c * Ho + h) * Wo + w)];
            const int base = c * H * W + 2 * h * W + 2 * w;
            (*gx)[static_cast<std::size_t>(base)] += g;
            (*gx)[static_cast<std::size_t>(base + 1)] += g;
            (*gx)[static_cast<std::size_t>(base + W)] += g;
            (*gx)[static_cast<std::size_t>(base + W + 1)] += g;
          }
    };
  });
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.rank() == 1, "linear: x must be rank-1");
  require(w.rank() == 2, "linear: w must be [out,in]");
  require(b.rank() == 1, "linear: b must be rank-1");
  const int in = x.dim(0), out_dim = w.dim(0);
  if (w.dim(1) != in || b.dim(0) != out_dim)
    throw std::invalid_argument("linear: shape mismatch x" + shape_str(x.shape()) + " w" +
                                shape_str(w.shape()) + " b" + shape_str(b.shape()));
  std::vector<double> out(static_cast<std::size_t>(out_dim));
  const double* xd = x.data().data();
  const double* wd = w.data().data();
  for (int o = 0; o < out_dim; ++o) {
    double acc = b.data()[static_cast<std::size_t>(o)];
    for (int i = 0; i < in; ++i) acc += wd[o * in + i] * xd[i];
    out[static_cast<std::size_t>(o)] = acc;
  }
  Tape* tape = common_tape({&x, &w, &b}, "linear");
  Tensor r = Tensor::from({out_dim}, std::move(out));
  return OpRecorder::finish(
      tape, std::move(r), {x.node(), w.node(), b.node()}, [&](const Tensor& o) {
        Buf go = o.grad_ptr(), gx = x.grad_ptr(), gw = w.grad_ptr(), gb = b.grad_ptr();
        Buf xd2 = x.data_ptr(), wd2 = w.data_ptr();
        return [go, gx, gw, gb, xd2, wd2, in, out_dim]() {
          for (int o = 0; o < out_dim; ++o) {
            const double g = (*go)[static_cast<std::size_t>(o)];
            if (gb) (*gb)[static_cast<std::size_t>(o)] += g;
            if (gx)
              for (int i = 0; i < in; ++i)
                (*gx)[static_cast<std::size_t>(i)] +=
                    g * (*wd2)[static_cast<std::size_t>(o * in + i)];
            if (gw)
              for (int i = 0; i < in; ++i)
                (*gw)[static_cast<std::size_t>(o * in + i)] +=
                    g * (*xd2)[static_cast<std::size_t>(i)];
          }
        };
      });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require(a.rank() == 3 && b.rank() == 3, "concat_channels: inputs must be rank-3");
  require(a.dim(1) == b.dim(1) && a.dim(2) == b.dim(2),
          "concat_channels: spatial dims differ");
  const int Ca = a.dim(0), Cb = b.dim(0), plane = a.dim(1) * a.dim(2);
  std::vector<double> out;
  out.reserve(a.data().size() + b.data().size());
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  Tape* tape = common_tape({&a, &b}, "concat_channels");
  Tensor r = Tensor::from({Ca + Cb, a.dim(1), a.dim(2)}, std::move(out));
  return OpRecorder::finish(tape, std::move(r), {a.node(), b.node()}, [&](const Tensor& o) {
    Buf go = o.grad_ptr(), ga = a.grad_ptr(), gb = b.grad_ptr();
    const std::size_t na = static_cast<std::size_t>(Ca) * plane;
    return [go, ga, gb, na]() {
      if (ga)
        for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += (*go)[i];
      if (gb)
        for (std::size_t i = 0; i < gb->size(); ++i) (*gb)[i] += (*go)[na + i];
    };
  });
}

Tensor spatial_mul(const Tensor& x, const Tensor& a) {
  require(x.rank() == 3, "spatial_mul: x must be [C,H,W]");
  require(a.rank() == 2, "spatial_mul: a must be [H,W]");
  require(x.dim(1) == a.dim(0) && x.dim(2) == a.dim(1),
          "spatial_mul: spatial shape mismatch");
  const int C = x.dim(0), plane = x.dim(1) * x.dim(2);
  std::vector<double> out(x.data());
  const double* ad = a.data().data();
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < plane; ++i) out[static_cast<std::size_t>(c * plane + i)] *= ad[i];
  Tape* tape = common_tape({&x, &a}, "spatial_mul");
  Tensor r = Tensor::from(x.shape(), std::move(out));
  return OpRecorder::finish(tape, std::move(r), {x.node(), a.node()}, [&](const Tensor& o) {
    Buf go = o.grad_ptr(), gx = x.grad_ptr(), ga = a.grad_ptr();
    Buf xd = x.data_ptr(), ad2 = a.data_ptr();
    return [go, gx, ga, xd, ad2, C, plane]() {
      if (gx)
        for (int c = 0; c < C; ++c)
          for (int i = 0; i < plane; ++i) {
            const std::size_t k = static_cast<std::size_t>(c * plane + i);
            (*gx)[k] += (*go)[k] * (*ad2)[static_cast<std::size_t>(i)];
          }
      if (ga)
        for (int i = 0; i < plane; ++i) {
          double acc = 0.0;
          for (int c = 0; c < C; ++c) {
            const std::size_t k = static_cast<std::size_t>(c * plane + i);
            acc += (*go)[k] * (*xd)[k];
          }
          (*ga)[static_cast<std::size_t>(i)] += acc;
        }
    };
  });
}

Tensor channel_slice(const Tensor& x, int c) {
  require(x.rank() == 3, "channel_slice: x must be [M,H,W]");
  if (c < 0 || c >= x.dim(0))
    throw std::out_of_range("channel_slice: channel " + std::to_string(c) + " out of [0," +
                            std::to_string(x.dim(0)) + ")");
  const int plane = x.dim(1) * x.dim(2);
  std::vector<double> out(x.data().begin() + c * plane, x.data().begin() + (c + 1) * plane);
  Tape* tape = common_tape({&x}, "channel_slice");
  Tensor r = Tensor::from({x.dim(1), x.dim(2)}, std::move(out));
  return OpRecorder::finish(tape, std::move(r), {x.node()}, [&](const Tensor& o) {
    Buf go = o.grad_ptr(), gx = x.grad_ptr();
    const std::size_t off = static_cast<std::size_t>(c) * plane;
    return [go, gx, off]() {
      if (!gx) return;
      for (std::size_t i = 0; i < go->size(); ++i) (*gx)[off + i] += (*go)[i];
    };
  });
}

namespace {

Tensor channel_reduce(const Tensor& x, double weight, const char* name) {
  const int M = x.dim(0), plane = x.dim(1) * x.dim(2);
  std::vector<double> out(static_cast<std::size_t>(plane), 0.0);
  const double* xd = x.data().data();
  for (int m = 0; m < M; ++m)
    for (int i = 0; i < plane; ++i) out[static_cast<std::size_t>(i)] += xd[m * plane + i];
  for (double& v : out) v *= weight;
  Tape* tape = common_tape({&x}, name);
  Tensor r = Tensor::from({x.dim(1), x.dim(2)}, std::move(out));
  return OpRecorder::finish(tape, std::move(r), {x.node()}, [&](const Tensor& o) {
    Buf go = o.grad_ptr(), gx = x.grad_ptr();
    return [go, gx, M, plane, weight]() {
      if (!gx) return;
      for (int m = 0; m < M; ++m)
        for (int i = 0; i < plane; ++i)
          (*gx)[static_cast<std::size_t>(m * plane + i)] +=
              weight * (*go)[static_cast<std::size_t>(i)];
    };
  });
}

}  // namespace

Tensor channel_mean(const Tensor& x) {
  require(x.rank() == 3, "channel_mean: x must be [M,H,W]");
  return channel_reduce(x, 1.0 / x.dim(0), "channel_mean");
}

Tensor channel_sum(const Tensor& x) {
  require(x.rank() == 3, "channel_sum: x must be [M,H,W]");
  return channel_reduce(x, 1.0, "channel_sum");
}

// ---- reductions ------------------------------------------------------------

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (const double v : x.data()) acc += v;
  Tape* tape = common_tape({&x}, "sum");
  Tensor r = Tensor::scalar(acc);
  return OpRecorder::finish(tape, std::move(r), {x.node()}, [&](const Tensor& o) {
    Buf go = o.grad_ptr(), gx = x.grad_ptr();
    return [go, gx]() {
      if (!gx) return;
      const double g = (*go)[0];
      for (double& v : *gx) v += g;
    };
  });
}

Tensor mean_abs(const Tensor& x) {
  double acc = 0.0;
  for (const double v : x.data()) acc += std::abs(v);
  const double inv = 1.0 / static_cast<double>(x.size());
  Tape* tape = common_tape({&x}, "mean_abs");
  Tensor r = Tensor::scalar(acc * inv);
  return OpRecorder::finish(tape, std::move(r), {x.node()}, [&](const Tensor& o) {
    Buf go = o.grad_ptr(), gx = x.grad_ptr(), xd = x.data_ptr();
    return [go, gx, xd, inv]() {
      if (!gx) return;
      const double g = (*go)[0] * inv;
      for (std::size_t i = 0; i < gx->size(); ++i) {
        const double v = (*xd)[i];
        if (v > 0.0)
          (*gx)[i] += g;
        else if (v < 0.0)
          (*gx)[i] -= g;
      }
    };
  });
}

Tensor vmax(const Tensor& x) {
  const auto& d = x.data();
  std::size_t arg = 0;
  for (std::size_t i = 1; i < d.size(); ++i)
    if (d[i] > d[arg]) arg = i;
  Tape* tape = common_tape({&x}, "vmax");
  Tensor r = Tensor::scalar(d[arg]);
  return OpRecorder::finish(tape, std::move(r), {x.node()}, [&](const Tensor& o) {
    Buf go = o.grad_ptr(), gx = x.grad_ptr();
    return [go, gx, arg]() {
      if (gx) (*gx)[arg] += (*go)[0];
    };
  });
}

Tensor pick(const Tensor& x, int i) {
  require(x.rank() == 1, "pick: x must be rank-1");
  if (i < 0 || i >= x.dim(0))
    throw std::out_of_range("pick: index " + std::to_string(i) + " out of [0," +
                            std::to_string(x.dim(0)) + ")");
  Tape* tape = common_tape({&x}, "pick");
  Tensor r = Tensor::scalar(x.data()[static_cast<std::size_t>(i)]);
  return OpRecorder::finish(tape, std::move(r), {x.node()}, [&](const Tensor& o) {
    Buf go = o.grad_ptr(), gx = x.grad_ptr();
    const std::size_t idx = static_cast<std::size_t>(i);
    return [go, gx, idx]() {
      if (gx) (*gx)[idx] += (*go)[0];
    };
  });
}

Tensor mul_by_scalar(const Tensor& x, const Tensor& s) {
  require(s.size() == 1, "mul_by_scalar: s must be a scalar tensor");
  const double sv = s.data()[0];
  std::vector<double> out(x.data());
  for (double& v : out) v *= sv;
  Tape* tape = common_tape({&x, &s}, "mul_by_scalar");
  Tensor r = Tensor::from(x.shape(), std::move(out));
  return OpRecorder::finish(tape, std::move(r), {x.node(), s.node()}, [&](const Tensor& o) {
    Buf go = o.grad_ptr(), gx = x.grad_ptr(), gs = s.grad_ptr(), xd = x.data_ptr();
    return [go, gx, gs, xd, sv]() {
      if (gx)
        for (std::size_t i = 0; i < go->size(); ++i) (*gx)[i] += (*go)[i] * sv;
      if (gs) {
        double acc = 0.0;
        for (std::size_t i = 0; i < go->size(); ++i) acc += (*go)[i] * (*xd)[i];
        (*gs)[0] += acc;
      }
    };
  });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  require(x.rank() == 3, "add_channel_bias: x must be [C,H,W]");
  require(b.rank() == 1, "add_channel_bias: b must be rank-1");
  if (b.dim(0) != x.dim(0))
    throw std::invalid_argument("add_channel_bias: channel mismatch");
  const int C = x.dim(0), plane = x.dim(1) * x.dim(2);
  std::vector<double> out(x.data());
  for (int c = 0; c < C; ++c) {
    const double bv = b.data()[static_cast<std::size_t>(c)];
    for (int i = 0; i < plane; ++i) out[static_cast<std::size_t>(c * plane + i)] += bv;
  }
  Tape* tape = common_tape({&x, &b}, "add_channel_bias");
  Tensor r = Tensor::from(x.shape(), std::move(out));
  return OpRecorder::finish(tape, std::move(r), {x.node(), b.node()}, [&](const Tensor& o) {
    Buf go = o.grad_ptr(), gx = x.grad_ptr(), gb = b.grad_ptr();
    return [go, gx, gb, C, plane]() {
      if (gx)
        for (std::size_t i = 0; i < go->size(); ++i) (*gx)[i] += (*go)[i];
      if (gb)
        for (int c = 0; c < C; ++c) {
          double acc = 0.0;
          for (int i = 0; i < plane; ++i) acc += (*go)[static_cast<std::size_t>(c * plane + i)];
          (*gb)[static_cast<std::size_t>(c)] += acc;
        }
    };
  });
}

Tensor div_by_scalar(const Tensor& x, const Tensor& s) {
  require(s.size() == 1, "div_by_scalar: s must be a scalar tensor");
  const double sv = s.data()[0];
  if (sv == 0.0) throw std::invalid_argument("div_by_scalar: division by zero");
  std::vector<double> out(x.data());
  for (double& v : out) v /= sv;
  Tape* tape = common_tape({&x, &s}, "div_by_scalar");
  Tensor r = Tensor::from(x.shape(), std::move(out));
  return OpRecorder::finish(tape, std::move(r), {x.node(), s.node()}, [&](const Tensor& o) {
    Buf go = o.grad_ptr(), gx = x.grad_ptr(), gs = s.grad_ptr(), xd = x.data_ptr();
    return [go, gx, gs, xd, sv]() {
      if (gx)
        for (std::size_t i = 0; i < go->size(); ++i) (*gx)[i] += (*go)[i] / sv;
      if (gs) {
        double acc = 0.0;
        for (std::size_t i = 0; i < go->size(); ++i) acc += (*go)[i] * (*xd)[i];
        (*gs)[0] += -acc / (sv * sv);
      }
    };
  });
}

bool all_finite(const Tensor& x) {
  for (const double v : x.data())
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace cdal
