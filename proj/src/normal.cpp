#include "egc/normal.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace egc {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

double norm_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double norm_cdf(double x) { return 0.5 * std::erfc(-x * kInvSqrt2); }

double norm_ccdf(double x) { return 0.5 * std::erfc(x * kInvSqrt2); }

// AS241 algorithm PPND16.
double norm_quantile(double p) {
  if (std::isnan(p) || p < 0.0 || p > 1.0)
    throw std::invalid_argument("norm_quantile: p outside [0,1]");
  if (p == 0.0) return -kInf;
  if (p == 1.0) return kInf;

  const double q = p - 0.5;
  if (std::abs(q) <= 0.425) {
    const double r = 0.180625 - q * q;
    return q *
           (((((((2.5090809287301226727e+3 * r + 3.3430575583588128105e+4) * r +
                 6.7265770927008700853e+4) * r + 4.5921953931549871457e+4) * r +
               1.3731693765509461125e+4) * r + 1.9715909503065514427e+3) * r +
             1.3314166789178437745e+2) * r + 3.3871328727963666080e+0) /
           (((((((5.2264952788528545610e+3 * r + 2.8729085735721942674e+4) * r +
                 3.9307895800092710610e+4) * r + 2.1213794301586595867e+4) * r +
               5.3941960214247511077e+3) * r + 6.8718700749205790830e+2) * r +
             4.2313330701600911252e+1) * r + 1.0);
  }

  double r = (q < 0.0) ? p : 1.0 - p;
  r = std::sqrt(-std::log(r));
  double value;
  if (r <= 5.0) {
    r -= 1.6;
    value =
        (((((((7.74545014278341407640e-4 * r + 2.27238449892691845833e-2) * r +
              2.41780725177450611770e-1) * r + 1.27045825245236838258e+0) * r +
            3.64784832476320460504e+0) * r + 5.76949722146069140550e+0) * r +
          4.63033784615654529590e+0) * r + 1.42343711074968357734e+0) /
        (((((((1.05075007164441684324e-9 * r + 5.47593808499534494600e-4) * r +
              1.51986665636164571966e-2) * r + 1.48103976427480074590e-1) * r +
            6.89767334985100004550e-1) * r + 1.67638483018380384940e+0) * r +
          2.05319162663775882187e+0) * r + 1.0);
  } else {
    r -= 5.0;
    value =
        (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
              1.24266094738807843860e-3) * r + 2.65321895265761230930e-2) * r +
            2.96560571828504891230e-1) * r + 1.78482653991729133580e+0) * r +
          5.46378491116411436990e+0) * r + 6.65790464350110377720e+0) /
        (((((((2.04426310338993978564e-15 * r + 1.42151175831644588870e-7) * r +
              1.84631831751005468180e-5) * r + 7.86869131145613259100e-4) * r +
            1.48753612908506148525e-2) * r + 1.36929880922735805310e-1) * r +
          5.99832206555887937690e-1) * r + 1.0);
  }
  return (q < 0.0) ? -value : value;
}

double norm_interval_prob(double a, double b) {
  if (!(a <= b)) return 0.0;
  if (a == -kInf && b == kInf) return 1.0;
  // Evaluate in the tail where erfc keeps relative precision.
  if (a >= 0.0) return norm_ccdf(a) - norm_ccdf(b);
  if (b <= 0.0) return norm_cdf(b) - norm_cdf(a);
  return norm_cdf(b) - norm_cdf(a);
}

double mills_ratio(double x) {
  if (x < 5.0) {
    const double c = norm_ccdf(x);
    if (c > 0.0) return norm_pdf(x) / c;
  }
  // Continued fraction for large x: r(x) = x + 1/(x + 2/(x + 3/(x + ...))).
  double cf = 0.0;
  for (int k = 40; k >= 1; --k) cf = static_cast<double>(k) / (x + cf);
  return x + cf;
}

TruncatedMoments1D truncated_normal_moments(double a, double b) {
  if (!(a <= b))
    throw std::invalid_argument("truncated_normal_moments: a > b");

  if (a == -kInf && b == kInf) return {0.0, 1.0, 1.0};
  if (a == b) return {a, 0.0, 0.0};

  const double prob = norm_interval_prob(a, b);
  if (prob < 1e-300)
    throw std::runtime_error("truncated_normal_moments: interval probability underflow");

  // One-sided truncations via Mills ratio (stable in far tails).
  if (b == kInf) {
    const double r = mills_ratio(a);
    const double var = 1.0 + a * r - r * r;
    return {r, var > 0.0 ? var : 0.0, prob};
  }
  if (a == -kInf) {
    const double r = mills_ratio(-b);
    const double var = 1.0 + (-b) * r - r * r;
    return {-r, var > 0.0 ? var : 0.0, prob};
  }

  const double pa = norm_pdf(a);
  const double pb = norm_pdf(b);
  const double lambda = (pa - pb) / prob;
  const double delta = (a * pa - b * pb) / prob;
  double var = 1.0 + delta - lambda * lambda;
  if (var < 0.0) var = 0.0;
  if (var > 1.0) var = 1.0;
  return {lambda, var, prob};
}

double truncated_normal_quantile(double a, double b, double u) {
  const double lo = (a == -kInf) ? 0.0 : norm_cdf(a);
  const double hi = (b == kInf) ? 1.0 : norm_cdf(b);
  double p = lo + u * (hi - lo);
  // Guard against saturation at the interval ends.
  const double eps = 1e-16;
  if (p <= 0.0) p = eps;
  if (p >= 1.0) p = 1.0 - eps;
  double z = norm_quantile(p);
  if (z < a) z = a;
  if (z > b) z = b;
  return z;
}

}  // namespace egc
