#include "vip/network.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "vip/rng.hpp"

namespace vip::nn {
namespace {

using MatR = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatR>;
using MapCM = Eigen::Map<const MatR>;
using MapV = Eigen::Map<Eigen::VectorXd>;
using MapCV = Eigen::Map<const Eigen::VectorXd>;

double activate(Activation act, double a) {
  switch (act) {
    case Activation::identity: return a;
    case Activation::tanh: return std::tanh(a);
    case Activation::relu: return a > 0.0 ? a : 0.0;
    case Activation::sigmoid: return sigmoid(a);
  }
  return a;
}

// Derivative expressed through the pre-activation and the output.
double activate_grad(Activation act, double pre, double out) {
  switch (act) {
    case Activation::identity: return 1.0;
    case Activation::tanh: return 1.0 - out * out;
    case Activation::relu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::sigmoid: return out * (1.0 - out);
  }
  return 1.0;
}

void dense_step(const LayerSpec& spec, const LayerWeights& w, const double* x, double* pre,
                double* y) {
  MapCM W(w[0].data(), spec.out_dim, spec.in_dim);
  MapCV b(w[1].data(), spec.out_dim);
  MapV a(pre, spec.out_dim);
  a.noalias() = W * MapCV(x, spec.in_dim);
  a += b;
  for (std::size_t i = 0; i < spec.out_dim; ++i) y[i] = activate(spec.activation, pre[i]);
}

// Scratch pointers must each hold H values; gx needs 3H.
struct GruScratch {
  std::vector<double> gx, uh;
  explicit GruScratch(std::size_t h) : gx(3 * h), uh(2 * h) {}
};

void gru_step(const LayerSpec& spec, const LayerWeights& w, const double* x, const double* h,
              double* z, double* r, double* rh, double* n, double* h_out, GruScratch& s) {
  const std::size_t H = spec.out_dim;
  MapCM W(w[0].data(), 3 * H, spec.in_dim);
  MapCM U(w[1].data(), 3 * H, H);
  MapCV b(w[2].data(), 3 * H);
  MapV gx(s.gx.data(), 3 * H);
  MapV uh(s.uh.data(), 2 * H);
  MapCV hv(h, H);

  gx.noalias() = W * MapCV(x, spec.in_dim);
  gx += b;
  uh.noalias() = U.topRows(2 * H) * hv;
  for (std::size_t i = 0; i < H; ++i) {
    z[i] = sigmoid(gx[i] + uh[i]);
    r[i] = sigmoid(gx[H + i] + uh[H + i]);
    rh[i] = r[i] * h[i];
  }
  MapV nv(n, H);
  nv.noalias() = U.bottomRows(H) * MapCV(rh, H);
  for (std::size_t i = 0; i < H; ++i) {
    n[i] = std::tanh(n[i] + gx[2 * H + i]);
    h_out[i] = h[i] + z[i] * (n[i] - h[i]);
  }
}

void check_input(const NetworkModel& model, std::size_t width) {
  if (model.layers.empty()) throw ShapeError("forward: model has no layers");
  if (width != model.input_dim()) {
    std::ostringstream msg;
    msg << "forward: input width " << width << " does not match model input " << model.input_dim();
    throw ShapeError(msg.str());
  }
}

void add_into(Gradients& dst, const Gradients& src) {
  for (std::size_t l = 0; l < dst.size(); ++l) {
    for (std::size_t k = 0; k < dst[l].size(); ++k) {
      double* d = dst[l][k].data();
      const double* s = src[l][k].data();
      const std::size_t n = dst[l][k].size();
      for (std::size_t i = 0; i < n; ++i) d[i] += s[i];
    }
  }
}

void zero(Gradients& g) {
  for (auto& layer : g) {
    for (auto& t : layer) t.fill(0.0);
  }
}

void scale(Gradients& g, double n) {
  for (auto& layer : g) {
    for (auto& t : layer) {
      for (double& v : t.values) v /= n;
    }
  }
}

bool finite(const Gradients& g) {
  for (const auto& layer : g) {
    for (const auto& t : layer) {
      if (!t.all_finite()) return false;
    }
  }
  return true;
}

void check_batch(const NetworkModel& model, std::span<const Example> batch) {
  if (batch.empty()) throw ShapeError("backward: empty batch");
  for (const auto& ex : batch) {
    if (ex.input.shape.size() != 2 || ex.input.rows() == 0) {
      throw ShapeError("backward: example input must be a non-empty [T, in] tensor");
    }
    check_input(model, ex.input.cols());
    if (ex.target.size() != model.output_dim()) {
      throw ShapeError("backward: target width does not match model output");
    }
  }
}

}  // namespace

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

const char* to_string(LayerKind kind) { return kind == LayerKind::dense ? "dense" : "gru"; }

const char* to_string(Activation act) {
  switch (act) {
    case Activation::identity: return "identity";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    case Activation::sigmoid: return "sigmoid";
  }
  return "identity";
}

const char* to_string(LossKind kind) { return kind == LossKind::mse ? "mse" : "bce"; }

LayerKind parse_layer_kind(const std::string& s) {
  if (s == "dense") return LayerKind::dense;
  if (s == "gru") return LayerKind::gru;
  throw std::invalid_argument("unknown layer kind: " + s);
}

Activation parse_activation(const std::string& s) {
  if (s == "identity") return Activation::identity;
  if (s == "tanh") return Activation::tanh;
  if (s == "relu") return Activation::relu;
  if (s == "sigmoid") return Activation::sigmoid;
  throw std::invalid_argument("unknown activation: " + s);
}

std::size_t NetworkModel::input_dim() const { return layers.empty() ? 0 : layers.front().in_dim; }
std::size_t NetworkModel::output_dim() const { return layers.empty() ? 0 : layers.back().out_dim; }

bool NetworkModel::recurrent() const {
  return std::any_of(layers.begin(), layers.end(),
                     [](const LayerSpec& l) { return l.kind == LayerKind::gru; });
}

std::size_t NetworkModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& layer : weights) {
    for (const auto& t : layer) n += t.size();
  }
  return n;
}

std::vector<std::vector<std::size_t>> weight_shapes(const LayerSpec& spec) {
  if (spec.kind == LayerKind::dense) return {{spec.out_dim, spec.in_dim}, {spec.out_dim}};
  const std::size_t H = spec.out_dim;
  return {{3 * H, spec.in_dim}, {3 * H, H}, {3 * H}};
}

void NetworkModel::validate() const {
  if (layers.empty()) throw ShapeError("model has no layers");
  if (weights.size() != layers.size()) throw ShapeError("weight list does not match layer list");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& spec = layers[l];
    if (spec.in_dim == 0 || spec.out_dim == 0) throw ShapeError("layer dimensions must be >= 1");
    if (l > 0 && layers[l - 1].out_dim != spec.in_dim) {
      std::ostringstream msg;
      msg << "layer " << l << " input " << spec.in_dim << " does not chain from previous output "
          << layers[l - 1].out_dim;
      throw ShapeError(msg.str());
    }
    const auto shapes = weight_shapes(spec);
    if (weights[l].size() != shapes.size()) {
      throw ShapeError("layer " + std::to_string(l) + " has the wrong number of weight tensors");
    }
    for (std::size_t k = 0; k < shapes.size(); ++k) {
      const Tensor& t = weights[l][k];
      if (t.shape != shapes[k] || t.values.size() != Tensor::numel(shapes[k])) {
        throw ShapeError("layer " + std::to_string(l) + " weight " + std::to_string(k) +
                         " has the wrong shape");
      }
    }
  }
}

NetworkModel make_network(std::vector<LayerSpec> layers, std::uint64_t seed) {
  NetworkModel model;
  model.layers = std::move(layers);
  Rng rng(seed);
  for (const auto& spec : model.layers) {
    LayerWeights w;
    for (const auto& shape : weight_shapes(spec)) w.emplace_back(shape, 0.0);
    if (spec.kind == LayerKind::dense) {
      const double a = std::sqrt(6.0 / static_cast<double>(spec.in_dim + spec.out_dim));
      for (double& v : w[0].values) v = rng.uniform(-a, a);
    } else {
      const double a = 1.0 / std::sqrt(static_cast<double>(spec.out_dim));
      for (double& v : w[0].values) v = rng.uniform(-a, a);
      for (double& v : w[1].values) v = rng.uniform(-a, a);
    }
    model.weights.push_back(std::move(w));
  }
  model.meta["init"] = "dense:glorot_uniform;recurrent:uniform_inv_sqrt_hidden;bias:zero";
  model.meta["init_seed"] = std::to_string(seed);
  model.validate();
  return model;
}

Gradients zeros_like(const NetworkModel& model) {
  Gradients g;
  g.reserve(model.weights.size());
  for (const auto& layer : model.weights) {
    LayerWeights lw;
    for (const auto& t : layer) lw.emplace_back(t.shape, 0.0);
    g.push_back(std::move(lw));
  }
  return g;
}

Hidden zero_hidden(const NetworkModel& model) {
  Hidden h;
  for (const auto& spec : model.layers) {
    h.emplace_back(spec.kind == LayerKind::gru ? spec.out_dim : 0, 0.0);
  }
  return h;
}

std::vector<double> forward(const NetworkModel& model, std::span<const double> input,
                            Hidden& hidden) {
  check_input(model, input.size());
  if (hidden.size() != model.layers.size()) hidden = zero_hidden(model);

  std::vector<double> x(input.begin(), input.end());
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& spec = model.layers[l];
    std::vector<double> y(spec.out_dim);
    if (spec.kind == LayerKind::dense) {
      std::vector<double> pre(spec.out_dim);
      dense_step(spec, model.weights[l], x.data(), pre.data(), y.data());
    } else {
      const std::size_t H = spec.out_dim;
      if (hidden[l].size() != H) hidden[l].assign(H, 0.0);
      std::vector<double> z(H), r(H), rh(H), n(H);
      GruScratch s(H);
      gru_step(spec, model.weights[l], x.data(), hidden[l].data(), z.data(), r.data(), rh.data(),
               n.data(), y.data(), s);
      hidden[l] = y;
    }
    x = std::move(y);
  }
  return x;
}

std::vector<double> forward_sequence(const NetworkModel& model, const Tensor& sequence) {
  const Tape tape = forward_tape(model, sequence);
  const auto out = tape.last_output();
  return {out.begin(), out.end()};
}

std::span<const double> Tape::last_output() const {
  const Tensor& out = layers.back().out;
  const std::size_t w = out.cols();
  return {out.data() + (out.rows() - 1) * w, w};
}

std::span<const double> Tape::last_pre_activation() const {
  const Tensor& pre = layers.back().pre;
  const std::size_t w = pre.cols();
  return {pre.data() + (pre.rows() - 1) * w, w};
}

Tape forward_tape(const NetworkModel& model, const Tensor& sequence) {
  if (sequence.shape.size() != 2 || sequence.rows() == 0) {
    throw ShapeError("forward: input must be a non-empty [T, in] tensor");
  }
  check_input(model, sequence.cols());
  const std::size_t T = sequence.rows();

  Tape tape;
  tape.input = sequence;
  tape.layers.resize(model.layers.size());
  const Tensor* x = &tape.input;
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const auto& spec = model.layers[l];
    LayerCache& c = tape.layers[l];
    const std::size_t in = spec.in_dim;
    const std::size_t out = spec.out_dim;
    c.out = Tensor({T, out});
    if (spec.kind == LayerKind::dense) {
      c.pre = Tensor({T, out});
      for (std::size_t t = 0; t < T; ++t) {
        dense_step(spec, model.weights[l], x->data() + t * in, c.pre.data() + t * out,
                   c.out.data() + t * out);
      }
    } else {
      c.z = Tensor({T, out});
      c.r = Tensor({T, out});
      c.n = Tensor({T, out});
      c.rh = Tensor({T, out});
      c.h_prev = Tensor({T, out});
      GruScratch s(out);
      for (std::size_t t = 0; t < T; ++t) {
        double* hp = c.h_prev.data() + t * out;
        if (t > 0) std::copy_n(c.out.data() + (t - 1) * out, out, hp);
        gru_step(spec, model.weights[l], x->data() + t * in, hp, c.z.data() + t * out,
                 c.r.data() + t * out, c.rh.data() + t * out, c.n.data() + t * out,
                 c.out.data() + t * out, s);
      }
    }
    x = &c.out;
  }
  return tape;
}

void backward_tape(const NetworkModel& model, const Tape& tape, std::span<const double> d_output,
                   Gradients& grads, Tensor* d_input, bool wrt_pre_activation) {
  const std::size_t L = model.layers.size();
  const std::size_t T = tape.input.rows();
  if (d_output.size() != model.output_dim()) throw ShapeError("backward: seed width mismatch");
  if (wrt_pre_activation && model.layers.back().kind != LayerKind::dense) {
    throw ShapeError("backward: pre-activation seed requires a dense output layer");
  }

  // dY holds d(objective)/d(layer output); rows below `lo` are zero.
  Tensor dY({T, model.output_dim()});
  std::copy(d_output.begin(), d_output.end(), dY.data() + (T - 1) * dY.cols());
  std::size_t lo = T - 1;

  for (std::size_t li = L; li-- > 0;) {
    const auto& spec = model.layers[li];
    const auto& w = model.weights[li];
    auto& g = grads[li];
    const LayerCache& c = tape.layers[li];
    const Tensor& X = li == 0 ? tape.input : tape.layers[li - 1].out;
    const std::size_t in = spec.in_dim;
    const std::size_t out = spec.out_dim;
    const bool need_dx = li > 0 || d_input != nullptr;
    Tensor dX({T, in});

    if (spec.kind == LayerKind::dense) {
      MapCM W(w[0].data(), out, in);
      MapM dW(g[0].data(), out, in);
      MapV db(g[1].data(), out);
      Eigen::VectorXd d_pre(out);
      const bool seed_is_pre = wrt_pre_activation && li == L - 1;
      for (std::size_t t = lo; t < T; ++t) {
        const double* dy = dY.data() + t * out;
        for (std::size_t i = 0; i < out; ++i) {
          d_pre[i] = seed_is_pre ? dy[i]
                                 : dy[i] * activate_grad(spec.activation, c.pre.at(t, i),
                                                         c.out.at(t, i));
        }
        MapCV x(X.data() + t * in, in);
        dW.noalias() += d_pre * x.transpose();
        db += d_pre;
        if (need_dx) MapV(dX.data() + t * in, in).noalias() = W.transpose() * d_pre;
      }
    } else {
      const std::size_t H = out;
      MapCM W(w[0].data(), 3 * H, in);
      MapCM U(w[1].data(), 3 * H, H);
      MapM dW(g[0].data(), 3 * H, in);
      MapM dU(g[1].data(), 3 * H, H);
      MapV db(g[2].data(), 3 * H);
      Eigen::VectorXd da(3 * H), drh(H), dh(H), carry = Eigen::VectorXd::Zero(H);
      for (std::size_t t = T; t-- > 0;) {
        const double* z = c.z.data() + t * H;
        const double* r = c.r.data() + t * H;
        const double* n = c.n.data() + t * H;
        const double* hp = c.h_prev.data() + t * H;
        const double* dy = dY.data() + t * H;
        for (std::size_t i = 0; i < H; ++i) dh[i] = dy[i] + carry[i];
        for (std::size_t i = 0; i < H; ++i) {
          da[i] = dh[i] * (n[i] - hp[i]) * z[i] * (1.0 - z[i]);
          da[2 * H + i] = dh[i] * z[i] * (1.0 - n[i] * n[i]);
        }
        drh.noalias() = U.bottomRows(H).transpose() * da.tail(H);
        for (std::size_t i = 0; i < H; ++i) {
          da[H + i] = drh[i] * hp[i] * r[i] * (1.0 - r[i]);
        }
        MapCV x(X.data() + t * in, in);
        MapCV hpv(hp, H);
        MapCV rhv(c.rh.data() + t * H, H);
        dW.noalias() += da * x.transpose();
        dU.topRows(H).noalias() += da.head(H) * hpv.transpose();
        dU.middleRows(H, H).noalias() += da.segment(H, H) * hpv.transpose();
        dU.bottomRows(H).noalias() += da.tail(H) * rhv.transpose();
        db += da;
        for (std::size_t i = 0; i < H; ++i) carry[i] = dh[i] * (1.0 - z[i]) + drh[i] * r[i];
        carry.noalias() += U.topRows(2 * H).transpose() * da.head(2 * H);
        if (need_dx) MapV(dX.data() + t * in, in).noalias() = W.transpose() * da;
      }
      lo = 0;
    }
    dY = std::move(dX);
  }
  if (d_input) *d_input = std::move(dY);
}

ExampleLoss example_loss(const NetworkModel& model, const Tape& tape,
                         std::span<const double> target, LossKind kind) {
  const auto y = tape.last_output();
  const std::size_t m = y.size();
  if (target.size() != m) throw ShapeError("loss: target width mismatch");
  const double inv = 1.0 / static_cast<double>(m);

  ExampleLoss out;
  out.d_output.resize(m);
  if (kind == LossKind::mse) {
    for (std::size_t i = 0; i < m; ++i) {
      const double e = y[i] - target[i];
      out.loss += e * e * inv;
      out.d_output[i] = 2.0 * e * inv;
    }
    return out;
  }

  const auto& last = model.layers.back();
  if (last.kind == LayerKind::dense && last.activation == Activation::sigmoid) {
    const auto a = tape.last_pre_activation();
    for (std::size_t i = 0; i < m; ++i) {
      out.loss += (std::max(a[i], 0.0) - target[i] * a[i] + std::log1p(std::exp(-std::abs(a[i])))) *
                  inv;
      out.d_output[i] = (sigmoid(a[i]) - target[i]) * inv;
    }
    out.wrt_pre_activation = true;
    return out;
  }
  for (std::size_t i = 0; i < m; ++i) {
    const double p = std::clamp(y[i], 1e-12, 1.0 - 1e-12);
    out.loss -= (target[i] * std::log(p) + (1.0 - target[i]) * std::log(1.0 - p)) * inv;
    out.d_output[i] = (p - target[i]) / (p * (1.0 - p)) * inv;
  }
  return out;
}

BatchGradients backward(const NetworkModel& model, std::span<const Example> batch, LossKind kind,
                        Exec exec) {
  check_batch(model, batch);
  const std::size_t n = batch.size();

  auto one = [&](std::size_t i, Gradients& g) {
    const Tape tape = forward_tape(model, batch[i].input);
    const ExampleLoss el = example_loss(model, tape, batch[i].target, kind);
    backward_tape(model, tape, el.d_output, g, nullptr, el.wrt_pre_activation);
    return el.loss;
  };

  BatchGradients out;
  out.grads = zeros_like(model);
  double loss_sum = 0.0;
  if (exec == Exec::serial) {
    Gradients scratch = zeros_like(model);
    for (std::size_t i = 0; i < n; ++i) {
      zero(scratch);
      loss_sum += one(i, scratch);
      add_into(out.grads, scratch);
    }
  } else {
    std::vector<Gradients> per(n, out.grads);
    std::vector<double> losses(n, 0.0);
    const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < count; ++i) {
      losses[static_cast<std::size_t>(i)] =
          one(static_cast<std::size_t>(i), per[static_cast<std::size_t>(i)]);
    }
    for (std::size_t i = 0; i < n; ++i) {
      loss_sum += losses[i];
      add_into(out.grads, per[i]);
    }
  }
  out.loss = loss_sum / static_cast<double>(n);
  scale(out.grads, static_cast<double>(n));
  if (!std::isfinite(out.loss) || !finite(out.grads)) {
    throw TrainingFault("backward: non-finite loss or gradient");
  }
  return out;
}

double batch_loss(const NetworkModel& model, std::span<const Example> batch, LossKind kind,
                  Exec exec) {
  check_batch(model, batch);
  const std::size_t n = batch.size();
  std::vector<double> losses(n, 0.0);
  auto one = [&](std::size_t i) {
    const Tape tape = forward_tape(model, batch[i].input);
    return example_loss(model, tape, batch[i].target, kind).loss;
  };
  if (exec == Exec::serial) {
    for (std::size_t i = 0; i < n; ++i) losses[i] = one(i);
  } else {
    const auto count = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < count; ++i) {
      losses[static_cast<std::size_t>(i)] = one(static_cast<std::size_t>(i));
    }
  }
  double sum = 0.0;
  for (double l : losses) sum += l;
  const double mean = sum / static_cast<double>(n);
  if (!std::isfinite(mean)) throw TrainingFault("batch_loss: non-finite loss");
  return mean;
}

}  // namespace vip::nn
