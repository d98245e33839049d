#pragma once

namespace egc {

// Standard normal density, CDF, complementary CDF and quantile.
double norm_pdf(double x);
double norm_cdf(double x);
double norm_ccdf(double x);

// Inverse of the standard normal CDF (Wichura's AS241, double precision).
// norm_quantile(0) = -inf, norm_quantile(1) = +inf.
double norm_quantile(double p);

// P(a < Z <= b) for Z ~ N(0,1), computed in whichever tail avoids
// cancellation. Bounds may be infinite.
double norm_interval_prob(double a, double b);

// Mills ratio phi(x) / ccdf(x), stable for large x.
double mills_ratio(double x);

// Mean and variance of a standard normal truncated to (a, b).
// Degenerates gracefully: a = -inf and/or b = +inf are allowed.
// Throws if the interval probability underflows (empty region).
struct TruncatedMoments1D {
  double mean;
  double var;
  double prob;  // P(a < Z <= b)
};
TruncatedMoments1D truncated_normal_moments(double a, double b);

// Quantile of the standard normal truncated to (a, b): the value z with
// P(Z <= z | a < Z <= b) = u. Used by the Gibbs sampler.
double truncated_normal_quantile(double a, double b, double u);

}  // namespace egc
