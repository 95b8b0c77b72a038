#include "sbg/targets.hpp"

#include <algorithm>
#include <cmath>

namespace sbg {

namespace {

void check_point(const EnergyTarget& target, VectorRef x) {
  if (x.size() != target.dim)
    throw InputError("target: point has dimension " + std::to_string(x.size()) + ", expected " +
                     std::to_string(target.dim));
  if (!all_finite(x)) throw InputError("target: non-finite point");
}

double mixture_log_kernel(const GaussianMixtureParams& p, VectorRef x, Vector* grad) {
  // log sum_k w_k exp(-|x - mu_k|^2 / (2 s_k^2)), stabilized by the max term.
  const size_t n = p.weights.size();
  Vector terms(static_cast<Index>(n));
  for (size_t k = 0; k < n; ++k) {
    const double q = (x - p.means[k]).squaredNorm() / (2.0 * p.sigmas[k] * p.sigmas[k]);
    terms(static_cast<Index>(k)) = std::log(p.weights[k]) - q;
  }
  const double lse = log_sum_exp(terms);
  if (grad) {
    grad->setZero(x.size());
    for (size_t k = 0; k < n; ++k) {
      const double resp = std::exp(terms(static_cast<Index>(k)) - lse);
      *grad += resp * (x - p.means[k]) / (p.sigmas[k] * p.sigmas[k]);
    }
    *grad = -*grad;  // gradient of the log-kernel itself
  }
  return lse;
}

double pairwise_v(const ManyBodyPairwiseParams& p, double d) {
  const double u = d - p.d0;
  return p.a * u + p.b * u * u + p.c * u * u * u * u;
}

double pairwise_dv(const ManyBodyPairwiseParams& p, double d) {
  const double u = d - p.d0;
  return p.a + 2.0 * p.b * u + 4.0 * p.c * u * u * u;
}

// Raw (unscaled) energy and optional gradient.
double raw_energy(const EnergyTarget& target, VectorRef x, Vector* grad) {
  switch (target.kind) {
    case TargetKind::gaussian: {
      const auto& p = std::get<GaussianParams>(target.params);
      const Vector r = x - p.mean;
      if (grad) *grad = r / (p.sigma * p.sigma);
      return 0.5 * r.squaredNorm() / (p.sigma * p.sigma);
    }
    case TargetKind::gaussian_mixture: {
      const auto& p = std::get<GaussianMixtureParams>(target.params);
      const double lk = mixture_log_kernel(p, x, grad);
      if (grad) *grad = -*grad;
      return -lk;
    }
    case TargetKind::double_well: {
      const auto& p = std::get<DoubleWellParams>(target.params);
      double e = 0.0;
      if (grad) grad->resize(x.size());
      for (Index i = 0; i < x.size(); ++i) {
        const double w = x(i) * x(i) - 1.0;
        e += p.barrier * w * w + p.tilt * x(i);
        if (grad) (*grad)(i) = 4.0 * p.barrier * w * x(i) + p.tilt;
      }
      return e;
    }
    case TargetKind::muller_brown: {
      const auto& p = std::get<MullerBrownParams>(target.params);
      const double xx = x(0);
      const double yy = x(1);
      double e = 0.0, gx = 0.0, gy = 0.0;
      for (int k = 0; k < 4; ++k) {
        const double dx = xx - p.x0[k];
        const double dy = yy - p.y0[k];
        const double t =
            p.amplitude[k] * std::exp(p.ax[k] * dx * dx + p.bxy[k] * dx * dy + p.cy[k] * dy * dy);
        e += t;
        gx += t * (2.0 * p.ax[k] * dx + p.bxy[k] * dy);
        gy += t * (p.bxy[k] * dx + 2.0 * p.cy[k] * dy);
      }
      if (grad) {
        grad->resize(2);
        (*grad)(0) = gx;
        (*grad)(1) = gy;
      }
      return e;
    }
    case TargetKind::many_body_pairwise: {
      const auto& p = std::get<ManyBodyPairwiseParams>(target.params);
      const int sd = p.spatial_dim;
      const Index n = p.n_particles;
      double e = 0.0;
      if (grad) grad->setZero(x.size());
      for (Index i = 0; i < n; ++i) {
        for (Index j = i + 1; j < n; ++j) {
          Vector rij(sd);
          for (int a = 0; a < sd; ++a) rij(a) = x(i * sd + a) - x(j * sd + a);
          const double d = std::max(rij.norm(), 1e-12);
          e += pairwise_v(p, d);
          if (grad) {
            const Vector g = pairwise_dv(p, d) / d * rij;
            for (int a = 0; a < sd; ++a) {
              (*grad)(i * sd + a) += g(a);
              (*grad)(j * sd + a) -= g(a);
            }
          }
        }
      }
      return e;
    }
  }
  throw InputError("target: unknown kind");
}

// log integral of exp(-E/T) on a trapezoidal grid, evaluated in log space.
ReferenceOracle quadrature_reference(const EnergyTarget& target, const QuadratureSpec& spec) {
  if (target.dim > 2) throw UnsupportedError("reference: quadrature supported at dim <= 2 only");
  ReferenceOracle oracle;
  oracle.method = ReferenceOracle::Method::quadrature;
  oracle.grid_lo = spec.lo;
  oracle.grid_hi = spec.hi;
  if (target.dim == 1) {
    oracle.grid_points = spec.points;
    const double h = (spec.hi - spec.lo) / static_cast<double>(spec.points - 1);
    Vector logf(spec.points);
    Vector grid(spec.points);
    for (Index i = 0; i < spec.points; ++i) {
      grid(i) = spec.lo + h * static_cast<double>(i);
      Vector pt(1);
      pt << grid(i);
      logf(i) = -target_energy(target, pt);
      if (i == 0 || i + 1 == spec.points) logf(i) -= std::log(2.0);  // trapezoid end weights
    }
    const double log_z = log_sum_exp(logf) + std::log(h);
    oracle.log_partition = log_z;
    double m = 0.0;
    for (Index i = 0; i < spec.points; ++i) m += grid(i) * std::exp(logf(i) - log_z) * h;
    Vector mean(1);
    mean << m;
    oracle.mean = mean;
    return oracle;
  }
  // dim == 2: identical grid on both axes, resolution reduced to keep the
  // evaluation count comparable to the 1-D case.
  const Index pts = std::max<Index>(201, static_cast<Index>(std::sqrt(double(spec.points)) * 32));
  oracle.grid_points = pts;
  const double h = (spec.hi - spec.lo) / static_cast<double>(pts - 1);
  Vector logf(pts * pts);
  Vector mx = Vector::Zero(2);
  for (Index i = 0; i < pts; ++i) {
    for (Index j = 0; j < pts; ++j) {
      Vector pt(2);
      pt << spec.lo + h * static_cast<double>(i), spec.lo + h * static_cast<double>(j);
      double lf = -target_energy(target, pt);
      if (i == 0 || i + 1 == pts) lf -= std::log(2.0);
      if (j == 0 || j + 1 == pts) lf -= std::log(2.0);
      logf(i * pts + j) = lf;
    }
  }
  const double log_z = log_sum_exp(logf) + 2.0 * std::log(h);
  oracle.log_partition = log_z;
  for (Index i = 0; i < pts; ++i) {
    for (Index j = 0; j < pts; ++j) {
      Vector pt(2);
      pt << spec.lo + h * static_cast<double>(i), spec.lo + h * static_cast<double>(j);
      mx += pt * std::exp(logf(i * pts + j) - log_z) * h * h;
    }
  }
  oracle.mean = mx;
  return oracle;
}

}  // namespace

EnergyTarget gaussian_target(Index dim, Vector mean, double sigma, double temperature_scale) {
  if (dim <= 0) throw InputError("gaussian_target: dim must be positive");
  if (mean.size() == 0) mean = Vector::Zero(dim);
  if (mean.size() != dim) throw InputError("gaussian_target: mean size mismatch");
  if (sigma <= 0.0) throw InputError("gaussian_target: sigma must be positive");
  if (temperature_scale <= 0.0) throw InputError("target: temperature_scale must be positive");
  return {TargetKind::gaussian, dim, temperature_scale, GaussianParams{std::move(mean), sigma}};
}

EnergyTarget gaussian_mixture_target(Index dim, GaussianMixtureParams params,
                                     double temperature_scale) {
  if (dim <= 0) throw InputError("gaussian_mixture_target: dim must be positive");
  const size_t n = params.weights.size();
  if (n == 0 || params.means.size() != n || params.sigmas.size() != n)
    throw InputError("gaussian_mixture_target: component lists must be nonempty and equal-sized");
  for (size_t k = 0; k < n; ++k) {
    if (params.weights[k] <= 0.0 || params.sigmas[k] <= 0.0)
      throw InputError("gaussian_mixture_target: weights and sigmas must be positive");
    if (params.means[k].size() != dim)
      throw InputError("gaussian_mixture_target: component mean size mismatch");
  }
  return {TargetKind::gaussian_mixture, dim, temperature_scale, std::move(params)};
}

EnergyTarget double_well_target(Index dim, DoubleWellParams params, double temperature_scale) {
  if (dim <= 0) throw InputError("double_well_target: dim must be positive");
  if (params.barrier <= 0.0) throw InputError("double_well_target: barrier must be positive");
  return {TargetKind::double_well, dim, temperature_scale, params};
}

EnergyTarget muller_brown_target(MullerBrownParams params, double temperature_scale) {
  return {TargetKind::muller_brown, 2, temperature_scale, params};
}

EnergyTarget many_body_pairwise_target(ManyBodyPairwiseParams params, double temperature_scale) {
  if (params.n_particles < 2) throw InputError("many_body_pairwise_target: need >= 2 particles");
  if (params.spatial_dim != 2 && params.spatial_dim != 3)
    throw InputError("many_body_pairwise_target: spatial_dim must be 2 or 3");
  const Index dim = params.n_particles * params.spatial_dim;
  return {TargetKind::many_body_pairwise, dim, temperature_scale, params};
}

double target_energy(const EnergyTarget& target, VectorRef x) {
  check_point(target, x);
  return raw_energy(target, x, nullptr) / target.temperature_scale;
}

std::pair<double, Vector> energy_and_grad(const EnergyTarget& target, VectorRef x) {
  check_point(target, x);
  Vector grad;
  const double e = raw_energy(target, x, &grad);
  grad /= target.temperature_scale;
  return {e / target.temperature_scale, std::move(grad)};
}

QuadratureSpec default_quadrature_spec(const EnergyTarget& target) {
  QuadratureSpec spec;
  switch (target.kind) {
    case TargetKind::double_well:
      spec = {-6.0, 6.0, 20001};
      break;
    case TargetKind::muller_brown:
      spec = {-2.5, 2.5, 20001};
      break;
    default:
      spec = {-12.0, 12.0, 20001};
      break;
  }
  return spec;
}

ReferenceOracle reference(const EnergyTarget& target) {
  return reference(target, default_quadrature_spec(target));
}

ReferenceOracle reference(const EnergyTarget& target, const QuadratureSpec& spec) {
  const double d = static_cast<double>(target.dim);
  if (target.kind == TargetKind::gaussian) {
    const auto& p = std::get<GaussianParams>(target.params);
    ReferenceOracle oracle;
    oracle.method = ReferenceOracle::Method::analytic;
    oracle.log_partition =
        0.5 * d * std::log(2.0 * M_PI * p.sigma * p.sigma * target.temperature_scale);
    oracle.mean = p.mean;
    return oracle;
  }
  if (target.kind == TargetKind::gaussian_mixture && target.temperature_scale == 1.0) {
    const auto& p = std::get<GaussianMixtureParams>(target.params);
    ReferenceOracle oracle;
    oracle.method = ReferenceOracle::Method::analytic;
    Vector log_masses(static_cast<Index>(p.weights.size()));
    for (size_t k = 0; k < p.weights.size(); ++k)
      log_masses(static_cast<Index>(k)) =
          std::log(p.weights[k]) + 0.5 * d * std::log(2.0 * M_PI * p.sigmas[k] * p.sigmas[k]);
    const double log_z = log_sum_exp(log_masses);
    oracle.log_partition = log_z;
    Vector mean = Vector::Zero(target.dim);
    for (size_t k = 0; k < p.weights.size(); ++k)
      mean += std::exp(log_masses(static_cast<Index>(k)) - log_z) * p.means[k];
    oracle.mean = mean;
    return oracle;
  }
  return quadrature_reference(target, spec);
}

Matrix sample_exact(const EnergyTarget& target, uint64_t seed, Index n) {
  if (n < 0) throw InputError("sample_exact: negative count");
  Prng rng(seed);
  Matrix out(n, target.dim);
  if (target.kind == TargetKind::gaussian) {
    const auto& p = std::get<GaussianParams>(target.params);
    const double s = p.sigma * std::sqrt(target.temperature_scale);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < target.dim; ++j) out(i, j) = p.mean(j) + s * rng.normal();
    return out;
  }
  if (target.kind == TargetKind::gaussian_mixture) {
    if (target.temperature_scale != 1.0)
      throw UnsupportedError("sample_exact: tempered mixtures have no exact sampler");
    const auto& p = std::get<GaussianMixtureParams>(target.params);
    const double d = static_cast<double>(target.dim);
    // Component masses are weight times Gaussian normalizer.
    Vector log_masses(static_cast<Index>(p.weights.size()));
    for (size_t k = 0; k < p.weights.size(); ++k)
      log_masses(static_cast<Index>(k)) =
          std::log(p.weights[k]) + 0.5 * d * std::log(2.0 * M_PI * p.sigmas[k] * p.sigmas[k]);
    const Vector mass = normalized_weights(log_masses);
    for (Index i = 0; i < n; ++i) {
      const double u = rng.uniform();
      double acc = 0.0;
      size_t k = 0;
      for (; k + 1 < p.weights.size(); ++k) {
        acc += mass(static_cast<Index>(k));
        if (u < acc) break;
      }
      for (Index j = 0; j < target.dim; ++j)
        out(i, j) = p.means[k](j) + p.sigmas[k] * rng.normal();
    }
    return out;
  }
  throw UnsupportedError("sample_exact: kind has no exact sampler");
}

}  // namespace sbg
