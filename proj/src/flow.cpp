#include "sbg/flow.hpp"

#include <cmath>

namespace sbg {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

double prior_log_density(VectorRef z) {
  return -0.5 * (static_cast<double>(z.size()) * kLog2Pi + z.squaredNorm());
}

Vector gather(VectorRef x, const std::vector<Index>& idx) {
  Vector out(static_cast<Index>(idx.size()));
  for (size_t i = 0; i < idx.size(); ++i) out(static_cast<Index>(i)) = x(idx[i]);
  return out;
}

void scatter(Vector& x, const std::vector<Index>& idx, VectorRef values) {
  for (size_t i = 0; i < idx.size(); ++i) x(idx[i]) = values(static_cast<Index>(i));
}

Vector clamp_scale(VectorRef raw, double clamp) {
  Vector s(raw.size());
  for (Index i = 0; i < raw.size(); ++i) s(i) = clamp * std::tanh(raw(i) / clamp);
  return s;
}

// Records of one inverse pass, kept per layer in application order
// (layers.size()-1 down to 0).
struct LayerInverseRec {
  MlpTape s_tape;
  MlpTape t_tape;
  Vector s;          // clamped scale
  Vector exp_neg_s;
  Vector u_work;     // transformed coordinates after inversion
};

struct InverseTrace {
  std::vector<LayerInverseRec> recs;  // recs[l] belongs to layers[l]
  Vector z;
  double logdet_inv = 0.0;
};

InverseTrace inverse_pass(const FlowModel& model, VectorRef x, bool record) {
  if (x.size() != model.dim) throw InputError("flow: point dimension mismatch");
  if (!all_finite(x)) throw InputError("flow: non-finite point");
  InverseTrace trace;
  if (record) trace.recs.resize(model.layers.size());
  Vector v = x;
  for (size_t l = model.layers.size(); l-- > 0;) {
    const CouplingLayer& layer = model.layers[l];
    const Vector y_keep = gather(v, layer.keep);
    const Vector y_work = gather(v, layer.work);
    Vector s_raw, t;
    if (record) {
      auto [sr, st] = mlp_forward(layer.scale_net, y_keep);
      auto [tv, tt] = mlp_forward(layer.shift_net, y_keep);
      s_raw = std::move(sr);
      t = std::move(tv);
      trace.recs[l].s_tape = std::move(st);
      trace.recs[l].t_tape = std::move(tt);
    } else {
      s_raw = mlp_eval(layer.scale_net, y_keep);
      t = mlp_eval(layer.shift_net, y_keep);
    }
    const Vector s = clamp_scale(s_raw, layer.scale_clamp);
    const Vector exp_neg_s = (-s.array()).exp();
    const Vector u_work = (y_work - t).cwiseProduct(exp_neg_s);
    if (!all_finite(u_work))
      throw NumericalError("flow inverse: non-finite value at layer " + std::to_string(l));
    trace.logdet_inv -= s.sum();
    scatter(v, layer.work, u_work);
    if (record) {
      trace.recs[l].s = s;
      trace.recs[l].exp_neg_s = exp_neg_s;
      trace.recs[l].u_work = u_work;
    }
  }
  trace.z = std::move(v);
  return trace;
}

}  // namespace

void finalize_layer(CouplingLayer& layer) {
  layer.keep.clear();
  layer.work.clear();
  for (Index i = 0; i < layer.mask.size(); ++i) {
    if (layer.mask(i) != 0)
      layer.keep.push_back(i);
    else
      layer.work.push_back(i);
  }
}

FlowModel build_flow(Index dim, const FlowConfig& config, Prng& rng) {
  if (dim <= 0) throw InputError("build_flow: dim must be positive");
  if (config.n_layers < 1) throw InputError("build_flow: need at least one layer");
  FlowModel model;
  model.dim = dim;
  for (Index l = 0; l < config.n_layers; ++l) {
    CouplingLayer layer;
    layer.mask.resize(dim);
    for (Index i = 0; i < dim; ++i) layer.mask(i) = dim == 1 ? 0 : static_cast<int>((i + l) % 2);
    layer.scale_clamp = config.scale_clamp;
    finalize_layer(layer);
    std::vector<Index> widths;
    widths.push_back(static_cast<Index>(layer.keep.size()));
    widths.insert(widths.end(), config.hidden.begin(), config.hidden.end());
    widths.push_back(static_cast<Index>(layer.work.size()));
    layer.scale_net = make_mlp(widths, config.activation);
    layer.shift_net = make_mlp(widths, config.activation);
    glorot_init(layer.scale_net, rng);
    glorot_init(layer.shift_net, rng);
    zero_last_layer(layer.scale_net);
    zero_last_layer(layer.shift_net);
    model.layers.push_back(std::move(layer));
  }
  validate_flow(model);
  return model;
}

void validate_flow(const FlowModel& model) {
  if (model.dim <= 0) throw InputError("flow: dim must be positive");
  if (model.layers.empty()) throw InputError("flow: no layers");
  if (model.com_sigma < 0.0) throw InputError("flow: com_sigma must be nonnegative");
  if (model.standardization.scale <= 0.0) throw InputError("flow: standardization scale <= 0");
  for (size_t l = 0; l < model.layers.size(); ++l) {
    const CouplingLayer& layer = model.layers[l];
    if (layer.mask.size() != model.dim) throw InputError("flow: mask size mismatch");
    if (layer.scale_clamp <= 0.0) throw InputError("flow: scale_clamp must be positive");
    Index zeros = 0, ones = 0;
    for (Index i = 0; i < layer.mask.size(); ++i) {
      if (layer.mask(i) == 0)
        ++zeros;
      else if (layer.mask(i) == 1)
        ++ones;
      else
        throw InputError("flow: mask entries must be 0 or 1");
    }
    if (zeros == 0) throw InputError("flow: mask transforms no coordinate");
    if (model.dim >= 2) {
      if (ones == 0) throw InputError("flow: mask keeps no coordinate");
      if (l > 0 && layer.mask == model.layers[l - 1].mask)
        throw InputError("flow: consecutive masks must differ");
    }
    if (layer.scale_net.widths.front() != static_cast<Index>(layer.keep.size()) ||
        layer.scale_net.widths.back() != static_cast<Index>(layer.work.size()) ||
        layer.shift_net.widths.front() != static_cast<Index>(layer.keep.size()) ||
        layer.shift_net.widths.back() != static_cast<Index>(layer.work.size()))
      throw InputError("flow: conditioner widths do not match the mask");
  }
}

Index flow_parameter_count(const FlowModel& model) {
  Index n = 0;
  for (const auto& layer : model.layers)
    n += param_count(layer.scale_net) + param_count(layer.shift_net);
  return n;
}

Vector flow_parameters(const FlowModel& model) {
  Vector params(flow_parameter_count(model));
  double* dst = params.data();
  for (const auto& layer : model.layers) {
    pack_params(layer.scale_net, dst);
    dst += param_count(layer.scale_net);
    pack_params(layer.shift_net, dst);
    dst += param_count(layer.shift_net);
  }
  return params;
}

void set_flow_parameters(FlowModel& model, VectorRef params) {
  if (params.size() != flow_parameter_count(model))
    throw InputError("set_flow_parameters: size mismatch");
  const double* src = params.data();
  for (auto& layer : model.layers) {
    unpack_params(layer.scale_net, src);
    src += param_count(layer.scale_net);
    unpack_params(layer.shift_net, src);
    src += param_count(layer.shift_net);
  }
}

FlowMap flow_forward(const FlowModel& model, VectorRef x0) {
  if (x0.size() != model.dim) throw InputError("flow_forward: dimension mismatch");
  if (!all_finite(x0)) throw InputError("flow_forward: non-finite point");
  Vector v = x0;
  double logdet = 0.0;
  for (size_t l = 0; l < model.layers.size(); ++l) {
    const CouplingLayer& layer = model.layers[l];
    const Vector x_keep = gather(v, layer.keep);
    const Vector s = clamp_scale(mlp_eval(layer.scale_net, x_keep), layer.scale_clamp);
    const Vector t = mlp_eval(layer.shift_net, x_keep);
    const Vector y_work = gather(v, layer.work).cwiseProduct(s.array().exp().matrix()) + t;
    if (!all_finite(y_work))
      throw NumericalError("flow forward: non-finite value at layer " + std::to_string(l));
    logdet += s.sum();
    scatter(v, layer.work, y_work);
  }
  return {std::move(v), logdet};
}

FlowMap flow_inverse(const FlowModel& model, VectorRef x1) {
  InverseTrace trace = inverse_pass(model, x1, /*record=*/false);
  return {std::move(trace.z), trace.logdet_inv};
}

double log_prob(const FlowModel& model, VectorRef x) {
  const InverseTrace trace = inverse_pass(model, x, /*record=*/false);
  return prior_log_density(trace.z) + trace.logdet_inv;
}

LogProbGrads log_prob_with_grads(const FlowModel& model, VectorRef x, bool want_params) {
  InverseTrace trace = inverse_pass(model, x, /*record=*/true);
  LogProbGrads out;
  out.logp = prior_log_density(trace.z) + trace.logdet_inv;
  if (want_params) out.grad_params = Vector::Zero(flow_parameter_count(model));

  // Reverse sweep.  The inverse pass visited layers M-1..0, so we unwind 0..M-1,
  // carrying the gradient of log p w.r.t. the running point.
  Vector gbar = -trace.z;  // d log p0(z) / dz
  Index offset = 0;
  std::vector<Index> layer_offsets(model.layers.size());
  for (size_t l = 0; l < model.layers.size(); ++l) {
    layer_offsets[l] = offset;
    offset += param_count(model.layers[l].scale_net) + param_count(model.layers[l].shift_net);
  }
  for (size_t l = 0; l < model.layers.size(); ++l) {
    const CouplingLayer& layer = model.layers[l];
    LayerInverseRec& rec = trace.recs[l];
    const Vector g_u_work = gather(gbar, layer.work);
    const Vector g_u_keep = gather(gbar, layer.keep);
    // u = (y - t) exp(-s); log p carries -sum(s) from this layer's logdet.
    Vector g_s = -g_u_work.cwiseProduct(rec.u_work);
    g_s.array() -= 1.0;
    const Vector ratio = rec.s / layer.scale_clamp;
    const Vector g_s_raw = g_s.cwiseProduct((1.0 - ratio.array().square()).matrix());
    const Vector g_t = -g_u_work.cwiseProduct(rec.exp_neg_s);
    auto [gp_s, gin_s] = mlp_backward(rec.s_tape, g_s_raw);
    auto [gp_t, gin_t] = mlp_backward(rec.t_tape, g_t);
    if (want_params) {
      double* dst = out.grad_params.data() + layer_offsets[l];
      pack_grad(gp_s, dst);
      pack_grad(gp_t, dst + param_count(layer.scale_net));
    }
    scatter(gbar, layer.keep, g_u_keep + gin_s + gin_t);
    scatter(gbar, layer.work, g_u_work.cwiseProduct(rec.exp_neg_s));
  }
  out.grad_input = std::move(gbar);
  return out;
}

Vector grad_log_prob(const FlowModel& model, VectorRef x) {
  return log_prob_with_grads(model, x, /*want_params=*/false).grad_input;
}

FlowSamples flow_sample(const FlowModel& model, uint64_t seed, Index n) {
  if (n < 0) throw InputError("flow_sample: negative count");
  FlowSamples out;
  out.positions.resize(n, model.dim);
  out.logprobs.resize(n);
  for (Index i = 0; i < n; ++i) {
    // Independent per-sample stream, stable under changes of n.
    Prng rng(hash_combine(seed, static_cast<uint64_t>(i)));
    Vector z(model.dim);
    for (Index j = 0; j < model.dim; ++j) z(j) = rng.normal();
    FlowMap fwd = flow_forward(model, z);
    out.positions.row(i) = fwd.point.transpose();
    out.logprobs(i) = prior_log_density(z) - fwd.logdet;
  }
  return out;
}

Vector centroid_of(VectorRef x, int spatial_dim) {
  if (spatial_dim <= 0 || x.size() % spatial_dim != 0)
    throw InputError("centroid_of: size not divisible by spatial_dim");
  const Index n = x.size() / spatial_dim;
  Vector c = Vector::Zero(spatial_dim);
  for (Index i = 0; i < n; ++i)
    for (int a = 0; a < spatial_dim; ++a) c(a) += x(i * spatial_dim + a);
  return c / static_cast<double>(n);
}

double chi_log_density(double r, int k, double sigma) {
  if (k < 1 || sigma <= 0.0) throw InputError("chi_log_density: need k >= 1 and sigma > 0");
  r = std::max(r, 1e-12);
  return (k - 1) * std::log(r) - 0.5 * r * r / (sigma * sigma) -
         (0.5 * k - 1.0) * std::log(2.0) - std::lgamma(0.5 * k) - k * std::log(sigma);
}

Vector lift_com(VectorRef x_meanfree, int spatial_dim, double sigma, Prng& rng) {
  if (sigma < 0.0) throw InputError("lift_com: sigma must be nonnegative");
  const Vector c0 = centroid_of(x_meanfree, spatial_dim);
  if (c0.cwiseAbs().maxCoeff() > 1e-10)
    throw InputError("lift_com: input centroid is not zero");
  Vector c(spatial_dim);
  for (int a = 0; a < spatial_dim; ++a) c(a) = sigma * rng.normal();
  Vector out = x_meanfree;
  const Index n = out.size() / spatial_dim;
  for (Index i = 0; i < n; ++i)
    for (int a = 0; a < spatial_dim; ++a) out(i * spatial_dim + a) += c(a);
  return out;
}

double com_adjusted_log_prob(const FlowModel& model, VectorRef x) {
  if (model.com_sigma <= 0.0)
    throw UnsupportedError("com_adjusted_log_prob: com_sigma is zero, use log_prob");
  const int sd = model.standardization.spatial_dim;
  const Vector c = centroid_of(x, sd);
  return log_prob(model, x) - chi_log_density(c.norm(), sd, model.com_sigma);
}

Vector grad_com_adjusted_log_prob(const FlowModel& model, VectorRef x) {
  if (model.com_sigma <= 0.0)
    throw UnsupportedError("grad_com_adjusted_log_prob: com_sigma is zero");
  const int sd = model.standardization.spatial_dim;
  Vector grad = grad_log_prob(model, x);
  const Vector c = centroid_of(x, sd);
  const double r = std::max(c.norm(), 1e-12);
  const double sig2 = model.com_sigma * model.com_sigma;
  const Index n = x.size() / sd;
  // d/dx of the chi log-density of |centroid(x)|.
  const double coef = ((sd - 1) / (r * r) - 1.0 / sig2) / static_cast<double>(n);
  for (Index i = 0; i < n; ++i)
    for (int a = 0; a < sd; ++a) grad(i * sd + a) -= coef * c(a);
  return grad;
}

Matrix random_rotation(int spatial_dim, Prng& rng) {
  if (spatial_dim == 2) {
    const double a = 2.0 * M_PI * rng.uniform();
    Matrix rot(2, 2);
    rot << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
    return rot;
  }
  if (spatial_dim == 3) {
    // Uniform SO(3) via a normalized Gaussian quaternion.
    double q[4];
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (double& v : q) {
        v = rng.normal();
        norm2 += v * v;
      }
    } while (norm2 < 1e-30);
    const double inv = 1.0 / std::sqrt(norm2);
    const double w = q[0] * inv, xq = q[1] * inv, yq = q[2] * inv, zq = q[3] * inv;
    Matrix rot(3, 3);
    rot << 1 - 2 * (yq * yq + zq * zq), 2 * (xq * yq - w * zq), 2 * (xq * zq + w * yq),
        2 * (xq * yq + w * zq), 1 - 2 * (xq * xq + zq * zq), 2 * (yq * zq - w * xq),
        2 * (xq * zq - w * yq), 2 * (yq * zq + w * xq), 1 - 2 * (xq * xq + yq * yq);
    return rot;
  }
  throw InputError("random_rotation: spatial_dim must be 2 or 3");
}

Matrix augment_rotation(const Matrix& batch, int spatial_dim, Prng& rng,
                        bool identity_rotations) {
  if (spatial_dim <= 0 || batch.cols() % spatial_dim != 0)
    throw InputError("augment_rotation: row length not divisible by spatial_dim");
  if (identity_rotations) return batch;
  Matrix out(batch.rows(), batch.cols());
  const Index n = batch.cols() / spatial_dim;
  for (Index r = 0; r < batch.rows(); ++r) {
    const Matrix rot = random_rotation(spatial_dim, rng);
    for (Index i = 0; i < n; ++i)
      out.row(r).segment(i * spatial_dim, spatial_dim) =
          (rot * batch.row(r).segment(i * spatial_dim, spatial_dim).transpose()).transpose();
  }
  return out;
}

Standardization fit_standardization(const Matrix& data, bool center_com, int spatial_dim) {
  if (data.rows() == 0 || data.cols() == 0) throw InputError("fit_standardization: empty data");
  Standardization stats;
  stats.center_com = center_com;
  stats.spatial_dim = center_com ? spatial_dim : 1;
  Matrix centered = data;
  if (center_com) {
    if (spatial_dim <= 0 || data.cols() % spatial_dim != 0)
      throw InputError("fit_standardization: columns not divisible by spatial_dim");
    for (Index r = 0; r < centered.rows(); ++r) {
      const Vector c = centroid_of(centered.row(r).transpose(), spatial_dim);
      const Index n = centered.cols() / spatial_dim;
      for (Index i = 0; i < n; ++i)
        for (int a = 0; a < spatial_dim; ++a) centered(r, i * spatial_dim + a) -= c(a);
    }
  }
  const double mean = centered.mean();
  const double var = (centered.array() - mean).square().mean();
  if (var < 1e-24) throw InputError("fit_standardization: data has zero spread");
  stats.scale = std::sqrt(var);
  return stats;
}

Matrix standardize(const Matrix& batch, const Standardization& stats) {
  if (stats.scale <= 0.0) throw InputError("standardize: scale must be positive");
  Matrix out = batch;
  if (stats.center_com) {
    const int sd = stats.spatial_dim;
    if (batch.cols() % sd != 0)
      throw InputError("standardize: columns not divisible by spatial_dim");
    for (Index r = 0; r < out.rows(); ++r) {
      const Vector c = centroid_of(out.row(r).transpose(), sd);
      const Index n = out.cols() / sd;
      for (Index i = 0; i < n; ++i)
        for (int a = 0; a < sd; ++a) out(r, i * sd + a) -= c(a);
    }
  }
  out /= stats.scale;
  return out;
}

Matrix destandardize(const Matrix& batch, const Standardization& stats) {
  if (stats.scale <= 0.0) throw InputError("destandardize: scale must be positive");
  return batch * stats.scale;
}

}  // namespace sbg
