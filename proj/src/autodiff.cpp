#include "fedda/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace fedda::ad {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {
  for (std::size_t d : shape_)
    if (d == 0) throw ShapeError("tensor dimensions must be positive: " + shape_string(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  for (std::size_t d : shape_)
    if (d == 0) throw ShapeError("tensor dimensions must be positive: " + shape_string(shape_));
  if (shape_size(shape_) != data_.size())
    throw ShapeError("tensor data length " + std::to_string(data_.size()) + " does not match shape " +
                     shape_string(shape_));
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_string(shape_));
  return data_[0];
}

const Tensor& Var::value() const { return tape_->value(id_); }
std::span<const double> Var::grad() const { return tape_->grad(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  nodes_.push_back(std::move(n));
  return make(nodes_.size() - 1);
}

Var Tape::record(Tensor value, std::vector<std::size_t> parents, BackwardFn fn) {
  Node n;
  n.value = std::move(value);
  for (std::size_t p : parents) {
    if (p >= nodes_.size()) throw std::logic_error("tape parent recorded after child");
    n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
  }
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(fn);
  nodes_.push_back(std::move(n));
  return make(nodes_.size() - 1);
}

std::span<double> Tape::accumulate(std::size_t id) {
  Node& n = nodes_.at(id);
  if (!n.requires_grad) return {};
  if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.tape() != this) throw std::invalid_argument("backward: loss belongs to a different tape");
  if (value(loss.id()).size() != 1)
    throw ShapeError("backward requires a scalar loss, got shape " + shape_string(value(loss.id()).shape()));
  for (auto& n : nodes_) n.grad.clear();
  if (!nodes_[loss.id()].requires_grad) return;
  accumulate(loss.id())[0] = 1.0;
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

namespace {

void require_same_tape(Var a, Var b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("operands live on different tapes");
}

void require_shape(const Tensor& t, const Shape& s, const char* what) {
  if (t.shape() != s)
    throw ShapeError(std::string(what) + ": expected shape " + shape_string(s) + ", got " +
                     shape_string(t.shape()));
}

void add_into(std::span<double> dst, std::span<const double> src) {
  if (dst.empty()) return;
  for (std::size_t i = 0; i < src.size(); ++i) dst[i] += src[i];
}

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Var conv2d(Var input, Var kernel, Var bias) {
  require_same_tape(input, kernel);
  require_same_tape(input, bias);
  const Tensor& in = input.value();
  const Tensor& k = kernel.value();
  const Tensor& b = bias.value();
  if (in.rank() != 3) throw ShapeError("conv2d input must be [C,H,W], got " + shape_string(in.shape()));
  if (k.rank() != 4 || k.dim(2) != 3 || k.dim(3) != 3)
    throw ShapeError("conv2d kernel must be [C_out,C_in,3,3], got " + shape_string(k.shape()));
  const std::size_t cin = in.dim(0), h = in.dim(1), w = in.dim(2), cout = k.dim(0);
  if (k.dim(1) != cin)
    throw ShapeError("conv2d channel mismatch: input has " + std::to_string(cin) + ", kernel expects " +
                     std::to_string(k.dim(1)));
  require_shape(b, {cout}, "conv2d bias");

  Tensor out({cout, h, w});
  const auto x = in.data();
  const auto kv = k.data();
  auto y = out.data();
  for (std::size_t o = 0; o < cout; ++o) {
    double* yo = y.data() + o * h * w;
    std::fill(yo, yo + h * w, b[o]);
    for (std::size_t c = 0; c < cin; ++c) {
      const double* xc = x.data() + c * h * w;
      const double* kc = kv.data() + (o * cin + c) * 9;
      for (std::size_t ky = 0; ky < 3; ++ky) {
        for (std::size_t kx = 0; kx < 3; ++kx) {
          const double kval = kc[ky * 3 + kx];
          const std::size_t r0 = ky == 0 ? 1 : 0, r1 = ky == 2 ? h - 1 : h;
          const std::size_t c0 = kx == 0 ? 1 : 0, c1 = kx == 2 ? w - 1 : w;
          for (std::size_t r = r0; r < r1; ++r) {
            const double* xr = xc + (r + ky - 1) * w + (kx - 1);
            double* yr = yo + r * w;
            for (std::size_t cc = c0; cc < c1; ++cc) yr[cc] += kval * xr[cc];
          }
        }
      }
    }
  }

  Tape& tape = *input.tape();
  const std::size_t in_id = input.id(), k_id = kernel.id(), b_id = bias.id();
  return tape.record(std::move(out), {in_id, k_id, b_id},
                     [=](Tape& t, std::span<const double> g) {
                       const auto xv = t.value(in_id).data();
                       const auto kvv = t.value(k_id).data();
                       auto gx = t.accumulate(in_id);
                       auto gk = t.accumulate(k_id);
                       auto gb = t.accumulate(b_id);
                       for (std::size_t o = 0; o < cout; ++o) {
                         const double* go = g.data() + o * h * w;
                         if (!gb.empty())
                           for (std::size_t p = 0; p < h * w; ++p) gb[o] += go[p];
                         for (std::size_t c = 0; c < cin; ++c) {
                           const std::size_t kbase = (o * cin + c) * 9;
                           for (std::size_t ky = 0; ky < 3; ++ky) {
                             for (std::size_t kx = 0; kx < 3; ++kx) {
                               const std::size_t r0 = ky == 0 ? 1 : 0, r1 = ky == 2 ? h - 1 : h;
                               const std::size_t c0 = kx == 0 ? 1 : 0, c1 = kx == 2 ? w - 1 : w;
                               const double kval = kvv[kbase + ky * 3 + kx];
                               double kacc = 0.0;
                               for (std::size_t r = r0; r < r1; ++r) {
                                 const std::size_t xoff = c * h * w + (r + ky - 1) * w + (kx - 1);
                                 const double* gr = go + r * w;
                                 for (std::size_t cc = c0; cc < c1; ++cc) {
                                   kacc += xv[xoff + cc] * gr[cc];
                                   if (!gx.empty()) gx[xoff + cc] += kval * gr[cc];
                                 }
                               }
                               if (!gk.empty()) gk[kbase + ky * 3 + kx] += kacc;
                             }
                           }
                         }
                       }
                     });
}

Var relu(Var x) {
  const Tensor& in = x.value();
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  const std::size_t id = x.id();
  return x.tape()->record(std::move(out), {id}, [id](Tape& t, std::span<const double> g) {
    const auto v = t.value(id).data();
    auto gx = t.accumulate(id);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (v[i] > 0.0) gx[i] += g[i];
  });
}

Var add(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(b.value(), a.value().shape(), "add");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::span<const double> g) {
    add_into(t.accumulate(ia), g);
    add_into(t.accumulate(ib), g);
  });
}

Var mul(Var a, Var b) {
  require_same_tape(a, b);
  require_shape(b.value(), a.value().shape(), "mul");
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.tape()->record(std::move(out), {ia, ib}, [ia, ib](Tape& t, std::span<const double> g) {
    const auto av = t.value(ia).data();
    const auto bv = t.value(ib).data();
    auto ga = t.accumulate(ia);
    if (!ga.empty())
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    auto gb = t.accumulate(ib);
    if (!gb.empty())
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
  });
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= factor;
  const std::size_t id = x.id();
  return x.tape()->record(std::move(out), {id}, [id, factor](Tape& t, std::span<const double> g) {
    auto gx = t.accumulate(id);
    for (std::size_t i = 0; i < g.size(); ++i) gx[i] += factor * g[i];
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  const std::size_t id = x.id();
  return x.tape()->record(Tensor::scalar(s), {id}, [id](Tape& t, std::span<const double> g) {
    auto gx = t.accumulate(id);
    for (double& v : gx) v += g[0];
  });
}

Var global_avg_pool(Var x) {
  const Tensor& in = x.value();
  if (in.rank() != 3) throw ShapeError("global_avg_pool expects [C,H,W], got " + shape_string(in.shape()));
  const std::size_t c = in.dim(0), hw = in.dim(1) * in.dim(2);
  Tensor out({c});
  for (std::size_t i = 0; i < c; ++i) {
    double s = 0.0;
    for (std::size_t p = 0; p < hw; ++p) s += in[i * hw + p];
    out[i] = s / static_cast<double>(hw);
  }
  const std::size_t id = x.id();
  return x.tape()->record(std::move(out), {id}, [id, c, hw](Tape& t, std::span<const double> g) {
    auto gx = t.accumulate(id);
    const double inv = 1.0 / static_cast<double>(hw);
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t p = 0; p < hw; ++p) gx[i * hw + p] += g[i] * inv;
  });
}

Var dense(Var x, Var weight, Var bias) {
  require_same_tape(x, weight);
  require_same_tape(x, bias);
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  if (xv.rank() != 1) throw ShapeError("dense input must be a vector, got " + shape_string(xv.shape()));
  if (wv.rank() != 2 || wv.dim(1) != xv.dim(0))
    throw ShapeError("dense weight " + shape_string(wv.shape()) + " incompatible with input " +
                     shape_string(xv.shape()));
  const std::size_t nout = wv.dim(0), nin = wv.dim(1);
  require_shape(bias.value(), {nout}, "dense bias");
  Tensor out({nout});
  for (std::size_t o = 0; o < nout; ++o) {
    double s = bias.value()[o];
    for (std::size_t i = 0; i < nin; ++i) s += wv[o * nin + i] * xv[i];
    out[o] = s;
  }
  const std::size_t ix = x.id(), iw = weight.id(), ib = bias.id();
  return x.tape()->record(std::move(out), {ix, iw, ib}, [=](Tape& t, std::span<const double> g) {
    const auto xd = t.value(ix).data();
    const auto wd = t.value(iw).data();
    auto gx = t.accumulate(ix);
    auto gw = t.accumulate(iw);
    add_into(t.accumulate(ib), g);
    for (std::size_t o = 0; o < nout; ++o) {
      for (std::size_t i = 0; i < nin; ++i) {
        if (!gx.empty()) gx[i] += wd[o * nin + i] * g[o];
        if (!gw.empty()) gw[o * nin + i] += xd[i] * g[o];
      }
    }
  });
}

Tensor softmax_channels(const Tensor& logits) {
  if (logits.rank() != 3) throw ShapeError("softmax_channels expects [C,H,W], got " + shape_string(logits.shape()));
  const std::size_t c = logits.dim(0), hw = logits.dim(1) * logits.dim(2);
  Tensor out(logits.shape());
  for (std::size_t p = 0; p < hw; ++p) {
    double mx = logits[p];
    for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, logits[k * hw + p]);
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      out[k * hw + p] = std::exp(logits[k * hw + p] - mx);
      z += out[k * hw + p];
    }
    for (std::size_t k = 0; k < c; ++k) out[k * hw + p] /= z;
  }
  return out;
}

Var softmax_cross_entropy(Var logits, std::span<const int> labels) {
  const Tensor& lv = logits.value();
  if (lv.rank() != 3)
    throw ShapeError("softmax_cross_entropy expects logits [C,H,W], got " + shape_string(lv.shape()));
  const std::size_t c = lv.dim(0), hw = lv.dim(1) * lv.dim(2);
  if (labels.size() != hw)
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(hw) + " pixels");
  for (int l : labels)
    if (l < 0 || static_cast<std::size_t>(l) >= c)
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(l) + " outside [0," +
                              std::to_string(c) + ")");

  Tensor probs = softmax_channels(lv);
  double loss = 0.0;
  for (std::size_t p = 0; p < hw; ++p) {
    double mx = lv[p];
    for (std::size_t k = 1; k < c; ++k) mx = std::max(mx, lv[k * hw + p]);
    double z = 0.0;
    for (std::size_t k = 0; k < c; ++k) z += std::exp(lv[k * hw + p] - mx);
    loss += (std::log(z) + mx) - lv[static_cast<std::size_t>(labels[p]) * hw + p];
  }
  loss /= static_cast<double>(hw);

  std::vector<int> lab(labels.begin(), labels.end());
  const std::size_t id = logits.id();
  return logits.tape()->record(
      Tensor::scalar(loss), {id},
      [id, c, hw, probs = std::move(probs), lab = std::move(lab)](Tape& t, std::span<const double> g) {
        auto gl = t.accumulate(id);
        const double s = g[0] / static_cast<double>(hw);
        for (std::size_t k = 0; k < c; ++k)
          for (std::size_t p = 0; p < hw; ++p) gl[k * hw + p] += s * probs[k * hw + p];
        for (std::size_t p = 0; p < hw; ++p) gl[static_cast<std::size_t>(lab[p]) * hw + p] -= s;
      });
}

Var binary_cross_entropy(Var logit, int target) {
  if (target != 0 && target != 1)
    throw std::invalid_argument("binary_cross_entropy target must be 0 or 1, got " + std::to_string(target));
  const double z = logit.value().item();
  const double tv = static_cast<double>(target);
  const double loss = std::max(z, 0.0) - z * tv + std::log1p(std::exp(-std::abs(z)));
  const std::size_t id = logit.id();
  return logit.tape()->record(Tensor::scalar(loss), {id}, [id, z, tv](Tape& t, std::span<const double> g) {
    t.accumulate(id)[0] += g[0] * (sigmoid(z) - tv);
  });
}

Var squared_distance(Var x, const Tensor& reference) {
  require_shape(reference, x.value().shape(), "squared_distance reference");
  const Tensor& xv = x.value();
  double s = 0.0;
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double d = xv[i] - reference[i];
    s += d * d;
  }
  const std::size_t id = x.id();
  return x.tape()->record(Tensor::scalar(s), {id}, [id, reference](Tape& t, std::span<const double> g) {
    const auto xd = t.value(id).data();
    auto gx = t.accumulate(id);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += 2.0 * g[0] * (xd[i] - reference[i]);
  });
}

AdamState::AdamState(AdamConfig cfg, std::span<const Tensor* const> params) : config(cfg) {
  m.reserve(params.size());
  v.reserve(params.size());
  for (const Tensor* p : params) {
    m.emplace_back(p->size(), 0.0);
    v.emplace_back(p->size(), 0.0);
  }
}

void adam_step(std::span<Tensor* const> params, std::span<const std::vector<double>> grads, AdamState& state) {
  if (grads.size() != params.size())
    throw std::invalid_argument("adam_step: " + std::to_string(grads.size()) + " gradients for " +
                                std::to_string(params.size()) + " parameters");
  if (state.m.size() != params.size()) throw std::invalid_argument("adam_step: optimizer state does not match group");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].empty()) throw std::invalid_argument("adam_step: missing gradient for parameter " + std::to_string(i));
    if (grads[i].size() != params[i]->size() || state.m[i].size() != params[i]->size())
      throw ShapeError("adam_step: gradient/moment length mismatch for parameter " + std::to_string(i));
  }

  const AdamConfig& c = state.config;
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  const double decay = 1.0 - c.lr * c.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto w = params[i]->data();
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] = w[j] * decay - c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

}  // namespace fedda::ad
