// SPDX-License-Identifier: Apache-2.0
#include "caps/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_set>

#include "caps/errors.hpp"

namespace caps::ad {

namespace {

NodePtr make_node(Tensor value, std::vector<NodePtr> parents,
                  std::function<std::vector<Tensor>(const Tensor&)> grad_fn,
                  const char* name) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->parents = std::move(parents);
  n->grad_fn = std::move(grad_fn);
  n->op_name = name;
  for (const auto& p : n->parents)
    if (p->requires_grad) n->requires_grad = true;
  return n;
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (!a.val().same_shape(b.val()))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                a.val().shape_str() + " vs " +
                                b.val().shape_str());
}

}  // namespace

Var Var::constant(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  return Var(n);
}

Var Var::leaf(Tensor t) {
  auto n = std::make_shared<Node>();
  n->value = std::move(t);
  n->requires_grad = true;
  n->op_name = "param";
  return Var(n);
}

// ---- ParamSet / GradSet ----------------------------------------------------

ParamSet ParamSet::clone() const {
  ParamSet c;
  for (const auto& name : order_) c.add(name, get(name).val());
  return c;
}

Var ParamSet::add(const std::string& name, Tensor init) {
  if (by_name_.count(name))
    throw std::invalid_argument("duplicate parameter name: " + name);
  Var v = Var::leaf(std::move(init));
  order_.push_back(name);
  by_name_.emplace(name, v);
  return v;
}

const Var& ParamSet::get(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end())
    throw std::invalid_argument("unknown parameter: " + name);
  return it->second;
}

bool ParamSet::has(const std::string& name) const {
  return by_name_.count(name) > 0;
}

int64_t ParamSet::total_size() const {
  int64_t n = 0;
  for (const auto& name : order_) n += get(name).val().size();
  return n;
}

std::vector<double> ParamSet::flatten_values() const {
  std::vector<double> flat;
  flat.reserve(static_cast<size_t>(total_size()));
  for (const auto& name : order_) {
    const auto& t = get(name).val();
    flat.insert(flat.end(), t.v.begin(), t.v.end());
  }
  return flat;
}

void ParamSet::assign_values(const std::vector<double>& flat) {
  if (static_cast<int64_t>(flat.size()) != total_size())
    throw std::invalid_argument("flat value count does not match ParamSet");
  size_t off = 0;
  for (const auto& name : order_) {
    Tensor& t = by_name_.at(name).node->value;
    std::copy(flat.begin() + static_cast<long>(off),
              flat.begin() + static_cast<long>(off + t.v.size()), t.v.begin());
    off += t.v.size();
  }
}

void ParamSet::set(const std::string& name, Tensor t) {
  auto it = by_name_.find(name);
  if (it == by_name_.end())
    throw std::invalid_argument("unknown parameter: " + name);
  if (it->second.val().shape != t.shape)
    throw std::invalid_argument("parameter " + name + " shape " +
                                it->second.val().shape_str() +
                                " cannot be set from " + t.shape_str());
  it->second.node->value = std::move(t);
}

GradSet GradSet::zeros_like(const ParamSet& params) {
  GradSet g;
  for (const auto& name : params.names()) {
    g.names.push_back(name);
    g.tensors.emplace_back(params.get(name).val().shape);
  }
  return g;
}

const Tensor& GradSet::at(const std::string& name) const {
  for (size_t i = 0; i < names.size(); ++i)
    if (names[i] == name) return tensors[i];
  throw std::invalid_argument("no gradient for parameter: " + name);
}

std::vector<double> GradSet::flatten() const {
  std::vector<double> flat;
  for (const auto& t : tensors) flat.insert(flat.end(), t.v.begin(), t.v.end());
  return flat;
}

double GradSet::l2_norm() const {
  double s = 0;
  for (const auto& t : tensors)
    for (double x : t.v) s += x * x;
  return std::sqrt(s);
}

void GradSet::add_scaled(const GradSet& other, double c) {
  if (names != other.names)
    throw std::invalid_argument("GradSet name mismatch in add_scaled");
  for (size_t i = 0; i < tensors.size(); ++i)
    for (size_t j = 0; j < tensors[i].v.size(); ++j)
      tensors[i].v[j] += c * other.tensors[i].v[j];
}

void GradSet::scale(double c) {
  for (auto& t : tensors)
    for (double& x : t.v) x *= c;
}

bool GradSet::congruent_with(const ParamSet& params) const {
  if (names != params.names()) return false;
  for (size_t i = 0; i < names.size(); ++i)
    if (tensors[i].shape != params.get(names[i]).val().shape) return false;
  return true;
}

// ---- dense -----------------------------------------------------------------

Var dense(const Var& x, const Var& w, const Var& b) {
  const Tensor& xv = x.val();
  const Tensor& wv = w.val();
  const Tensor& bv = b.val();
  if (wv.rank() != 2 || bv.rank() != 1 || bv.dim(0) != wv.dim(0))
    throw std::invalid_argument("dense: weights must be (out,in) with bias (out), got W" +
                                wv.shape_str() + " b" + bv.shape_str());
  const int out = wv.dim(0), in = wv.dim(1);
  const bool batched = xv.rank() == 2;
  const int bsz = batched ? xv.dim(0) : 1;
  const int xin = batched ? xv.dim(1) : (xv.rank() == 1 ? xv.dim(0) : -1);
  if (xin != in)
    throw std::invalid_argument("dense: input " + xv.shape_str() +
                                " does not match weight " + wv.shape_str());

  Tensor y(batched ? std::vector<int>{bsz, out} : std::vector<int>{out});
  for (int bi = 0; bi < bsz; ++bi)
    for (int o = 0; o < out; ++o) {
      double acc = bv[o];
      const double* xr = xv.v.data() + static_cast<size_t>(bi) * in;
      const double* wr = wv.v.data() + static_cast<size_t>(o) * in;
      for (int i = 0; i < in; ++i) acc += wr[i] * xr[i];
      y[static_cast<int64_t>(bi) * out + o] = acc;
    }

  auto xn = x.node, wn = w.node, bn = b.node;
  return Var(make_node(
      std::move(y), {xn, wn, bn},
      [xn, wn, bsz, out, in](const Tensor& g) {
        Tensor gx(xn->value.shape), gw(wn->value.shape), gb({out});
        for (int bi = 0; bi < bsz; ++bi)
          for (int o = 0; o < out; ++o) {
            const double go = g[static_cast<int64_t>(bi) * out + o];
            gb[o] += go;
            const double* xr = xn->value.v.data() + static_cast<size_t>(bi) * in;
            double* gxr = gx.v.data() + static_cast<size_t>(bi) * in;
            const double* wr = wn->value.v.data() + static_cast<size_t>(o) * in;
            double* gwr = gw.v.data() + static_cast<size_t>(o) * in;
            for (int i = 0; i < in; ++i) {
              gxr[i] += go * wr[i];
              gwr[i] += go * xr[i];
            }
          }
        return std::vector<Tensor>{std::move(gx), std::move(gw), std::move(gb)};
      },
      "dense"));
}

// ---- conv1d ----------------------------------------------------------------

namespace {
struct ConvDims {
  int bsz, cin, tin, cout, k, tout;
  bool batched;
};

ConvDims conv_dims(const Tensor& xv, const Tensor& wv, int stride, int padding,
                   bool transpose) {
  if (stride < 1) throw std::invalid_argument("conv1d: stride must be >= 1");
  if (padding < 0) throw std::invalid_argument("conv1d: padding must be >= 0");
  if (wv.rank() != 3) throw std::invalid_argument("conv1d: kernel must be rank 3");
  ConvDims d{};
  d.batched = xv.rank() == 3;
  if (!d.batched && xv.rank() != 2)
    throw std::invalid_argument("conv1d: input must be (C,T) or (B,C,T), got " +
                                xv.shape_str());
  d.bsz = d.batched ? xv.dim(0) : 1;
  d.cin = d.batched ? xv.dim(1) : xv.dim(0);
  d.tin = d.batched ? xv.dim(2) : xv.dim(1);
  d.k = wv.dim(2);
  if (!transpose) {
    d.cout = wv.dim(0);
    if (wv.dim(1) != d.cin)
      throw std::invalid_argument("conv1d: kernel " + wv.shape_str() +
                                  " does not match input channels " +
                                  std::to_string(d.cin));
    if (d.tin + 2 * padding < d.k)
      throw std::invalid_argument(
          "conv1d: kernel width " + std::to_string(d.k) +
          " exceeds padded input length " + std::to_string(d.tin + 2 * padding));
    d.tout = (d.tin + 2 * padding - d.k) / stride + 1;
  } else {
    if (wv.dim(0) != d.cin)
      throw std::invalid_argument("conv1d_transpose: kernel " + wv.shape_str() +
                                  " does not match input channels " +
                                  std::to_string(d.cin));
    d.cout = wv.dim(1);
    d.tout = (d.tin - 1) * stride - 2 * padding + d.k;
    if (d.tout < 1)
      throw std::invalid_argument("conv1d_transpose: non-positive output length");
  }
  return d;
}
}  // namespace

Var conv1d(const Var& x, const Var& w, const Var& b, int stride, int padding) {
  const Tensor& xv = x.val();
  const Tensor& wv = w.val();
  const Tensor& bv = b.val();
  ConvDims d = conv_dims(xv, wv, stride, padding, false);
  if (bv.rank() != 1 || bv.dim(0) != d.cout)
    throw std::invalid_argument("conv1d: bias shape " + bv.shape_str());

  Tensor y(d.batched ? std::vector<int>{d.bsz, d.cout, d.tout}
                     : std::vector<int>{d.cout, d.tout});
  for (int bi = 0; bi < d.bsz; ++bi) {
    const double* xb = xv.v.data() + static_cast<size_t>(bi) * d.cin * d.tin;
    double* yb = y.v.data() + static_cast<size_t>(bi) * d.cout * d.tout;
    for (int co = 0; co < d.cout; ++co)
      for (int t = 0; t < d.tout; ++t) {
        double acc = bv[co];
        for (int ci = 0; ci < d.cin; ++ci) {
          const double* xr = xb + static_cast<size_t>(ci) * d.tin;
          const double* wr =
              wv.v.data() + (static_cast<size_t>(co) * d.cin + ci) * d.k;
          for (int j = 0; j < d.k; ++j) {
            const int ti = t * stride + j - padding;
            if (ti >= 0 && ti < d.tin) acc += wr[j] * xr[ti];
          }
        }
        yb[static_cast<size_t>(co) * d.tout + t] = acc;
      }
  }

  auto xn = x.node, wn = w.node, bn = b.node;
  return Var(make_node(
      std::move(y), {xn, wn, bn},
      [xn, wn, d, stride, padding](const Tensor& g) {
        Tensor gx(xn->value.shape), gw(wn->value.shape), gb({d.cout});
        for (int bi = 0; bi < d.bsz; ++bi) {
          const double* xb =
              xn->value.v.data() + static_cast<size_t>(bi) * d.cin * d.tin;
          double* gxb = gx.v.data() + static_cast<size_t>(bi) * d.cin * d.tin;
          const double* gyb = g.v.data() + static_cast<size_t>(bi) * d.cout * d.tout;
          for (int co = 0; co < d.cout; ++co)
            for (int t = 0; t < d.tout; ++t) {
              const double go = gyb[static_cast<size_t>(co) * d.tout + t];
              gb[co] += go;
              for (int ci = 0; ci < d.cin; ++ci) {
                const double* xr = xb + static_cast<size_t>(ci) * d.tin;
                double* gxr = gxb + static_cast<size_t>(ci) * d.tin;
                const double* wr = wn->value.v.data() +
                                   (static_cast<size_t>(co) * d.cin + ci) * d.k;
                double* gwr = gw.v.data() +
                              (static_cast<size_t>(co) * d.cin + ci) * d.k;
                for (int j = 0; j < d.k; ++j) {
                  const int ti = t * stride + j - padding;
                  if (ti >= 0 && ti < d.tin) {
                    gxr[ti] += go * wr[j];
                    gwr[j] += go * xr[ti];
                  }
                }
              }
            }
        }
        return std::vector<Tensor>{std::move(gx), std::move(gw), std::move(gb)};
      },
      "conv1d"));
}

Var conv1d_transpose(const Var& x, const Var& w, const Var& b, int stride,
                     int padding) {
  const Tensor& xv = x.val();
  const Tensor& wv = w.val();
  const Tensor& bv = b.val();
  ConvDims d = conv_dims(xv, wv, stride, padding, true);
  if (bv.rank() != 1 || bv.dim(0) != d.cout)
    throw std::invalid_argument("conv1d_transpose: bias shape " + bv.shape_str());

  Tensor y(d.batched ? std::vector<int>{d.bsz, d.cout, d.tout}
                     : std::vector<int>{d.cout, d.tout});
  for (auto& e : y.v) e = 0;
  for (int bi = 0; bi < d.bsz; ++bi) {
    double* yb = y.v.data() + static_cast<size_t>(bi) * d.cout * d.tout;
    for (int co = 0; co < d.cout; ++co)
      for (int t = 0; t < d.tout; ++t)
        yb[static_cast<size_t>(co) * d.tout + t] = bv[co];
    const double* xb = xv.v.data() + static_cast<size_t>(bi) * d.cin * d.tin;
    for (int ci = 0; ci < d.cin; ++ci)
      for (int t = 0; t < d.tin; ++t) {
        const double xval = xb[static_cast<size_t>(ci) * d.tin + t];
        for (int co = 0; co < d.cout; ++co) {
          const double* wr =
              wv.v.data() + (static_cast<size_t>(ci) * d.cout + co) * d.k;
          for (int j = 0; j < d.k; ++j) {
            const int to = t * stride + j - padding;
            if (to >= 0 && to < d.tout)
              yb[static_cast<size_t>(co) * d.tout + to] += wr[j] * xval;
          }
        }
      }
  }

  auto xn = x.node, wn = w.node, bn = b.node;
  return Var(make_node(
      std::move(y), {xn, wn, bn},
      [xn, wn, d, stride, padding](const Tensor& g) {
        Tensor gx(xn->value.shape), gw(wn->value.shape), gb({d.cout});
        for (int bi = 0; bi < d.bsz; ++bi) {
          const double* gyb = g.v.data() + static_cast<size_t>(bi) * d.cout * d.tout;
          const double* xb =
              xn->value.v.data() + static_cast<size_t>(bi) * d.cin * d.tin;
          double* gxb = gx.v.data() + static_cast<size_t>(bi) * d.cin * d.tin;
          for (int co = 0; co < d.cout; ++co)
            for (int t = 0; t < d.tout; ++t)
              gb[co] += gyb[static_cast<size_t>(co) * d.tout + t];
          for (int ci = 0; ci < d.cin; ++ci)
            for (int t = 0; t < d.tin; ++t) {
              const double xval = xb[static_cast<size_t>(ci) * d.tin + t];
              double gacc = 0;
              for (int co = 0; co < d.cout; ++co) {
                const double* wr = wn->value.v.data() +
                                   (static_cast<size_t>(ci) * d.cout + co) * d.k;
                double* gwr = gw.v.data() +
                              (static_cast<size_t>(ci) * d.cout + co) * d.k;
                for (int j = 0; j < d.k; ++j) {
                  const int to = t * stride + j - padding;
                  if (to >= 0 && to < d.tout) {
                    const double go = gyb[static_cast<size_t>(co) * d.tout + to];
                    gacc += go * wr[j];
                    gwr[j] += go * xval;
                  }
                }
              }
              gxb[static_cast<size_t>(ci) * d.tin + t] += gacc;
            }
        }
        return std::vector<Tensor>{std::move(gx), std::move(gw), std::move(gb)};
      },
      "conv1d_transpose"));
}

// ---- elementwise -----------------------------------------------------------

Var relu(const Var& x) {
  Tensor y = x.val();
  for (auto& e : y.v) e = e > 0 ? e : 0;
  auto xn = x.node;
  return Var(make_node(
      std::move(y), {xn},
      [xn](const Tensor& g) {
        Tensor gx(xn->value.shape);
        for (size_t i = 0; i < gx.v.size(); ++i)
          gx.v[i] = xn->value.v[i] > 0 ? g.v[i] : 0;
        return std::vector<Tensor>{std::move(gx)};
      },
      "relu"));
}

Var exp(const Var& x) {
  Tensor y = x.val();
  for (auto& e : y.v) e = std::exp(e);
  auto out = std::make_shared<Tensor>(y);
  return Var(make_node(
      std::move(y), {x.node},
      [out](const Tensor& g) {
        Tensor gx(out->shape);
        for (size_t i = 0; i < gx.v.size(); ++i) gx.v[i] = g.v[i] * out->v[i];
        return std::vector<Tensor>{std::move(gx)};
      },
      "exp"));
}

Var log(const Var& x) {
  Tensor y = x.val();
  for (auto& e : y.v) {
    if (e <= 0)
      throw std::invalid_argument("log: nonpositive input " + std::to_string(e));
    e = std::log(e);
  }
  auto xn = x.node;
  return Var(make_node(
      std::move(y), {xn},
      [xn](const Tensor& g) {
        Tensor gx(xn->value.shape);
        for (size_t i = 0; i < gx.v.size(); ++i)
          gx.v[i] = g.v[i] / xn->value.v[i];
        return std::vector<Tensor>{std::move(gx)};
      },
      "log"));
}

namespace {
// rows/cols view of the last axis
std::pair<int64_t, int> last_axis(const Tensor& t) {
  if (t.rank() < 1) throw std::invalid_argument("softmax: rank-0 tensor");
  const int cols = t.shape.back();
  if (cols < 1) throw std::invalid_argument("softmax: empty last axis");
  return {t.size() / cols, cols};
}
}  // namespace

Var softmax(const Var& x) {
  auto [rows, cols] = last_axis(x.val());
  Tensor y = x.val();
  for (int64_t r = 0; r < rows; ++r) {
    double* p = y.v.data() + r * cols;
    double mx = p[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, p[c]);
    double s = 0;
    for (int c = 0; c < cols; ++c) {
      p[c] = std::exp(p[c] - mx);
      s += p[c];
    }
    for (int c = 0; c < cols; ++c) p[c] /= s;
  }
  auto out = std::make_shared<Tensor>(y);
  const int ncols = cols;
  const int64_t nrows = rows;
  return Var(make_node(
      std::move(y), {x.node},
      [out, nrows, ncols](const Tensor& g) {
        Tensor gx(out->shape);
        for (int64_t r = 0; r < nrows; ++r) {
          const double* yv = out->v.data() + r * ncols;
          const double* gv = g.v.data() + r * ncols;
          double dot = 0;
          for (int c = 0; c < ncols; ++c) dot += yv[c] * gv[c];
          double* gxr = gx.v.data() + r * ncols;
          for (int c = 0; c < ncols; ++c) gxr[c] = yv[c] * (gv[c] - dot);
        }
        return std::vector<Tensor>{std::move(gx)};
      },
      "softmax"));
}

Var log_softmax(const Var& x) {
  auto [rows, cols] = last_axis(x.val());
  Tensor y = x.val();
  for (int64_t r = 0; r < rows; ++r) {
    double* p = y.v.data() + r * cols;
    double mx = p[0];
    for (int c = 1; c < cols; ++c) mx = std::max(mx, p[c]);
    double s = 0;
    for (int c = 0; c < cols; ++c) s += std::exp(p[c] - mx);
    const double lse = mx + std::log(s);
    for (int c = 0; c < cols; ++c) p[c] -= lse;
  }
  auto out = std::make_shared<Tensor>(y);
  const int ncols = cols;
  const int64_t nrows = rows;
  return Var(make_node(
      std::move(y), {x.node},
      [out, nrows, ncols](const Tensor& g) {
        Tensor gx(out->shape);
        for (int64_t r = 0; r < nrows; ++r) {
          const double* yv = out->v.data() + r * ncols;
          const double* gv = g.v.data() + r * ncols;
          double gsum = 0;
          for (int c = 0; c < ncols; ++c) gsum += gv[c];
          double* gxr = gx.v.data() + r * ncols;
          for (int c = 0; c < ncols; ++c)
            gxr[c] = gv[c] - std::exp(yv[c]) * gsum;
        }
        return std::vector<Tensor>{std::move(gx)};
      },
      "log_softmax"));
}

Var dropout(const Var& x, double rate, Rng& rng, bool training) {
  if (rate < 0 || rate >= 1)
    throw std::invalid_argument("dropout: rate must be in [0,1), got " +
                                std::to_string(rate));
  if (!training || rate == 0) {
    // identity that still participates in the graph
    auto xn = x.node;
    return Var(make_node(
        x.val(), {xn},
        [](const Tensor& g) { return std::vector<Tensor>{g}; }, "dropout_id"));
  }
  const double keep = 1.0 - rate;
  auto mask = std::make_shared<Tensor>(x.val().shape);
  Tensor y = x.val();
  for (size_t i = 0; i < y.v.size(); ++i) {
    const double m = rng.uniform() < rate ? 0.0 : 1.0 / keep;
    mask->v[i] = m;
    y.v[i] *= m;
  }
  return Var(make_node(
      std::move(y), {x.node},
      [mask](const Tensor& g) {
        Tensor gx(mask->shape);
        for (size_t i = 0; i < gx.v.size(); ++i) gx.v[i] = g.v[i] * mask->v[i];
        return std::vector<Tensor>{std::move(gx)};
      },
      "dropout"));
}

// ---- arithmetic ------------------------------------------------------------

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  Tensor y = a.val();
  for (size_t i = 0; i < y.v.size(); ++i) y.v[i] += b.val().v[i];
  return Var(make_node(
      std::move(y), {a.node, b.node},
      [](const Tensor& g) { return std::vector<Tensor>{g, g}; }, "add"));
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  Tensor y = a.val();
  for (size_t i = 0; i < y.v.size(); ++i) y.v[i] -= b.val().v[i];
  return Var(make_node(
      std::move(y), {a.node, b.node},
      [](const Tensor& g) {
        Tensor gb = g;
        for (auto& e : gb.v) e = -e;
        return std::vector<Tensor>{g, std::move(gb)};
      },
      "sub"));
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor y = a.val();
  for (size_t i = 0; i < y.v.size(); ++i) y.v[i] *= b.val().v[i];
  auto an = a.node, bn = b.node;
  return Var(make_node(
      std::move(y), {an, bn},
      [an, bn](const Tensor& g) {
        Tensor ga(an->value.shape), gb(bn->value.shape);
        for (size_t i = 0; i < g.v.size(); ++i) {
          ga.v[i] = g.v[i] * bn->value.v[i];
          gb.v[i] = g.v[i] * an->value.v[i];
        }
        return std::vector<Tensor>{std::move(ga), std::move(gb)};
      },
      "mul"));
}

Var affine(const Var& x, double a, double b) {
  Tensor y = x.val();
  for (auto& e : y.v) e = a * e + b;
  return Var(make_node(
      std::move(y), {x.node},
      [a](const Tensor& g) {
        Tensor gx = g;
        for (auto& e : gx.v) e *= a;
        return std::vector<Tensor>{std::move(gx)};
      },
      "affine"));
}

Var scale(const Var& x, double c) { return affine(x, c, 0.0); }

// ---- reductions ------------------------------------------------------------

Var sum(const Var& x) {
  double s = 0;
  for (double e : x.val().v) s += e;
  auto xn = x.node;
  return Var(make_node(
      Tensor::scalar(s), {xn},
      [xn](const Tensor& g) {
        Tensor gx(xn->value.shape, g.v[0]);
        return std::vector<Tensor>{std::move(gx)};
      },
      "sum"));
}

Var mean(const Var& x) {
  const int64_t n = x.val().size();
  if (n == 0) throw std::invalid_argument("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var sum_last(const Var& x) {
  auto [rows, cols] = last_axis(x.val());
  std::vector<int> yshape(x.val().shape.begin(), x.val().shape.end() - 1);
  if (yshape.empty()) yshape = {1};
  Tensor y(yshape);
  for (int64_t r = 0; r < rows; ++r) {
    double s = 0;
    const double* p = x.val().v.data() + r * cols;
    for (int c = 0; c < cols; ++c) s += p[c];
    y[r] = s;
  }
  auto xn = x.node;
  const int ncols = cols;
  const int64_t nrows = rows;
  return Var(make_node(
      std::move(y), {xn},
      [xn, nrows, ncols](const Tensor& g) {
        Tensor gx(xn->value.shape);
        for (int64_t r = 0; r < nrows; ++r)
          for (int c = 0; c < ncols; ++c) gx.v[r * ncols + c] = g.v[r];
        return std::vector<Tensor>{std::move(gx)};
      },
      "sum_last"));
}

// ---- shape -----------------------------------------------------------------

Var reshape(const Var& x, std::vector<int> shape) {
  if (shape_size(shape) != x.val().size())
    throw std::invalid_argument("reshape: " + x.val().shape_str() + " -> " +
                                shape_to_string(shape) + " changes size");
  Tensor y;
  y.shape = shape;
  y.v = x.val().v;
  auto xn = x.node;
  return Var(make_node(
      std::move(y), {xn},
      [xn](const Tensor& g) {
        Tensor gx;
        gx.shape = xn->value.shape;
        gx.v = g.v;
        return std::vector<Tensor>{std::move(gx)};
      },
      "reshape"));
}

Var concat(const Var& a, const Var& b) {
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  if (av.rank() != bv.rank() || av.rank() < 1 || av.rank() > 2)
    throw std::invalid_argument("concat: ranks must match and be 1 or 2");
  if (av.rank() == 2 && av.dim(0) != bv.dim(0))
    throw std::invalid_argument("concat: leading dims differ");
  const int rows = av.rank() == 2 ? av.dim(0) : 1;
  const int ca = av.shape.back(), cb = bv.shape.back();
  std::vector<int> yshape = av.shape;
  yshape.back() = ca + cb;
  Tensor y(yshape);
  for (int r = 0; r < rows; ++r) {
    std::copy_n(av.v.data() + static_cast<size_t>(r) * ca, ca,
                y.v.data() + static_cast<size_t>(r) * (ca + cb));
    std::copy_n(bv.v.data() + static_cast<size_t>(r) * cb, cb,
                y.v.data() + static_cast<size_t>(r) * (ca + cb) + ca);
  }
  auto an = a.node, bn = b.node;
  return Var(make_node(
      std::move(y), {an, bn},
      [an, bn, rows, ca, cb](const Tensor& g) {
        Tensor ga(an->value.shape), gb(bn->value.shape);
        for (int r = 0; r < rows; ++r) {
          std::copy_n(g.v.data() + static_cast<size_t>(r) * (ca + cb), ca,
                      ga.v.data() + static_cast<size_t>(r) * ca);
          std::copy_n(g.v.data() + static_cast<size_t>(r) * (ca + cb) + ca, cb,
                      gb.v.data() + static_cast<size_t>(r) * cb);
        }
        return std::vector<Tensor>{std::move(ga), std::move(gb)};
      },
      "concat"));
}

Var slice_last(const Var& x, int start, int len) {
  const Tensor& xv = x.val();
  if (xv.rank() < 1) throw std::invalid_argument("slice_last: rank-0 tensor");
  const int cols = xv.shape.back();
  if (start < 0 || len < 1 || start + len > cols)
    throw std::invalid_argument("slice_last: range [" + std::to_string(start) +
                                "," + std::to_string(start + len) +
                                ") out of " + std::to_string(cols));
  const int64_t rows = xv.size() / cols;
  std::vector<int> yshape = xv.shape;
  yshape.back() = len;
  Tensor y(yshape);
  for (int64_t r = 0; r < rows; ++r)
    std::copy_n(xv.v.data() + r * cols + start, len, y.v.data() + r * len);
  auto xn = x.node;
  return Var(make_node(
      std::move(y), {xn},
      [xn, rows, cols, start, len](const Tensor& g) {
        Tensor gx(xn->value.shape);
        for (int64_t r = 0; r < rows; ++r)
          std::copy_n(g.v.data() + r * len, len,
                      gx.v.data() + r * cols + start);
        return std::vector<Tensor>{std::move(gx)};
      },
      "slice_last"));
}

Var channels_to_cells(const Var& x, int frames, int classes) {
  const Tensor& xv = x.val();
  const bool batched = xv.rank() == 3;
  if (!batched && xv.rank() != 2)
    throw std::invalid_argument("channels_to_cells: input must be (C,T) or (B,C,T)");
  const int bsz = batched ? xv.dim(0) : 1;
  const int ch = batched ? xv.dim(1) : xv.dim(0);
  const int tt = batched ? xv.dim(2) : xv.dim(1);
  if (ch != frames * classes)
    throw std::invalid_argument("channels_to_cells: channel count " +
                                std::to_string(ch) + " != frames*classes");
  std::vector<int> yshape = batched ? std::vector<int>{bsz, frames * tt, classes}
                                    : std::vector<int>{frames * tt, classes};
  Tensor y(yshape);
  for (int bi = 0; bi < bsz; ++bi)
    for (int f = 0; f < frames; ++f)
      for (int k = 0; k < classes; ++k)
        for (int t = 0; t < tt; ++t)
          y.v[(static_cast<size_t>(bi) * frames * tt + static_cast<size_t>(f) * tt + t) * classes + k] =
              xv.v[static_cast<size_t>(bi) * ch * tt +
                   (static_cast<size_t>(f) * classes + k) * tt + t];
  auto xn = x.node;
  return Var(make_node(
      std::move(y), {xn},
      [xn, bsz, frames, classes, tt, ch](const Tensor& g) {
        Tensor gx(xn->value.shape);
        for (int bi = 0; bi < bsz; ++bi)
          for (int f = 0; f < frames; ++f)
            for (int k = 0; k < classes; ++k)
              for (int t = 0; t < tt; ++t)
                gx.v[static_cast<size_t>(bi) * ch * tt +
                     (static_cast<size_t>(f) * classes + k) * tt + t] =
                    g.v[(static_cast<size_t>(bi) * frames * tt +
                         static_cast<size_t>(f) * tt + t) * classes + k];
        return std::vector<Tensor>{std::move(gx)};
      },
      "channels_to_cells"));
}

// ---- engine ----------------------------------------------------------------

GradSet backward(const Var& loss, const ParamSet& params) {
  if (!loss.defined() || loss.val().size() != 1)
    throw std::invalid_argument("backward: loss must be a scalar tensor");

  // iterative post-order topological sort over grad-requiring nodes
  std::vector<Node*> topo;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, size_t>> stack;
  if (loss.node->requires_grad) stack.emplace_back(loss.node.get(), 0);
  while (!stack.empty()) {
    auto& [n, idx] = stack.back();
    if (idx == 0) {
      if (visited.count(n)) {
        stack.pop_back();
        continue;
      }
      visited.insert(n);
    }
    bool descended = false;
    while (idx < n->parents.size()) {
      Node* p = n->parents[idx++].get();
      if (p->requires_grad && !visited.count(p)) {
        stack.emplace_back(p, 0);
        descended = true;
        break;
      }
    }
    if (!descended && idx >= n->parents.size()) {
      topo.push_back(n);
      stack.pop_back();
    }
  }

  std::unordered_map<Node*, Tensor> grads;
  grads[loss.node.get()] = Tensor::scalar(1.0);
  for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
    Node* n = *it;
    auto git = grads.find(n);
    if (git == grads.end()) continue;
    if (!n->grad_fn) continue;  // leaf
    std::vector<Tensor> pgrads = n->grad_fn(git->second);
    if (pgrads.size() != n->parents.size())
      throw std::logic_error(std::string("grad_fn arity mismatch in op ") +
                             n->op_name);
    for (size_t i = 0; i < pgrads.size(); ++i) {
      Node* p = n->parents[i].get();
      if (!p->requires_grad) continue;
      auto pit = grads.find(p);
      if (pit == grads.end()) {
        grads.emplace(p, std::move(pgrads[i]));
      } else {
        Tensor& acc = pit->second;
        for (size_t j = 0; j < acc.v.size(); ++j) acc.v[j] += pgrads[i].v[j];
      }
    }
  }

  GradSet out;
  for (const auto& name : params.names()) {
    out.names.push_back(name);
    Node* pn = params.get(name).node.get();
    auto it = grads.find(pn);
    if (it == grads.end()) {
      out.tensors.emplace_back(pn->value.shape);
    } else {
      if (!it->second.all_finite())
        throw numerical_error("backward: non-finite gradient for parameter " +
                              name);
      out.tensors.push_back(std::move(it->second));
    }
  }
  return out;
}

std::vector<GradSet> per_example_gradients(
    int n, const ParamSet& params, const std::function<Var(int)>& loss_of) {
  if (n < 1) throw std::invalid_argument("per_example_gradients: empty batch");
  std::vector<GradSet> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(backward(loss_of(i), params));
  return out;
}

}  // namespace caps::ad
