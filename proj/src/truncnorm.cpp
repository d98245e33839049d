#include "egc/truncnorm.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Dense>

#include "egc/normal.hpp"
#include "egc/rng.hpp"

namespace egc {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr int kSweeps = 10;
constexpr double kSweepTol = 1e-4;
constexpr int kGibbsBurnin = 100;
}  // namespace

void Involution::add_block(Eigen::Index offset, int size, int observed) {
  blocks_.push_back({offset, size, observed});
}

Eigen::VectorXd Involution::apply(const Eigen::VectorXd& v) const {
  Eigen::VectorXd out = v;
  for (const auto& b : blocks_) {
    const double vk = v(b.offset + b.observed);
    for (int i = 0; i < b.size; ++i)
      out(b.offset + i) = (i == b.observed) ? vk : vk - v(b.offset + i);
  }
  return out;
}

Eigen::MatrixXd Involution::conjugate(const Eigen::MatrixXd& m) const {
  Eigen::MatrixXd out = m;
  for (const auto& b : blocks_) {  // rows: A M
    const Eigen::Index k = b.offset + b.observed;
    const Eigen::RowVectorXd rk = out.row(k);
    for (int i = 0; i < b.size; ++i) {
      const Eigen::Index r = b.offset + i;
      if (r != k) out.row(r) = rk - out.row(r);
    }
  }
  for (const auto& b : blocks_) {  // cols: (A M) A^T
    const Eigen::Index k = b.offset + b.observed;
    const Eigen::VectorXd ck = out.col(k);
    for (int i = 0; i < b.size; ++i) {
      const Eigen::Index c = b.offset + i;
      if (c != k) out.col(c) = ck - out.col(c);
    }
  }
  return out;
}

Eigen::MatrixXd Involution::dense() const {
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(dim_, dim_);
  for (const auto& b : blocks_)
    a.block(b.offset, b.offset, b.size, b.size) = build_involution_block(b.observed + 1, b.size);
  return a;
}

Eigen::MatrixXd build_involution_block(int k, int K) {
  if (k < 1 || k > K) throw std::invalid_argument("build_involution_block: k outside [1, K]");
  Eigen::MatrixXd a = -Eigen::MatrixXd::Identity(K, K);
  a.col(k - 1).setOnes();
  a(k - 1, k - 1) = 1.0;
  return a;
}

TruncationRegion build_truncation(const Eigen::RowVectorXd& row, const VariableSchema& schema,
                                  const std::vector<Marginal>& marginals,
                                  const LatentIndexMap& index_map) {
  TruncationRegion region;
  std::vector<double> lb, ub;
  std::vector<Involution::Block> blocks;
  for (Eigen::Index j = 0; j < schema.size(); ++j) {
    const double x = row(j);
    if (std::isnan(x)) continue;
    const auto& span = index_map.span(j);
    if (schema.var(j).ordered()) {
      const auto& m = std::get<OrderedMarginal>(marginals[static_cast<std::size_t>(j)]);
      const LatentInterval iv = m.inverse(x);
      region.latent.push_back(span.begin);
      lb.push_back(iv.lb);
      ub.push_back(iv.ub);
      region.point.push_back(iv.point ? 1 : 0);
    } else {
      const auto& m = std::get<CategoricalMarginal>(marginals[static_cast<std::size_t>(j)]);
      const int K = m.category_count();
      const int k = static_cast<int>(x) - 1;  // 0-based observed label
      const Eigen::Index local = static_cast<Eigen::Index>(region.latent.size());
      const double mu_k = m.mu(k);
      for (int i = 0; i < K; ++i) {
        region.latent.push_back(span.begin + i);
        if (i == k) {
          lb.push_back(-kInf);
        } else {
          // z~_i > -mu~_i with mu~ = A_k mu
          lb.push_back(-(mu_k - m.mu(i)));
        }
        ub.push_back(kInf);
        region.point.push_back(0);
      }
      blocks.push_back({local, K, k});
    }
  }
  region.lb = Eigen::Map<Eigen::VectorXd>(lb.data(), static_cast<Eigen::Index>(lb.size()));
  region.ub = Eigen::Map<Eigen::VectorXd>(ub.data(), static_cast<Eigen::Index>(ub.size()));
  region.involution = Involution(region.dim());
  for (const auto& b : blocks) region.involution.add_block(b.offset, b.size, b.observed);
  return region;
}

namespace {

struct Partition {
  std::vector<Eigen::Index> points;      // lb == ub
  std::vector<Eigen::Index> intervals;   // everything else
  std::vector<Eigen::Index> truncated;   // intervals with a finite bound (local to intervals)
  std::vector<Eigen::Index> free;        // fully unbounded intervals (local to intervals)
};

Partition split_region(const TruncationRegion& region) {
  Partition part;
  for (Eigen::Index i = 0; i < region.dim(); ++i) {
    if (region.point[static_cast<std::size_t>(i)])
      part.points.push_back(i);
    else
      part.intervals.push_back(i);
  }
  for (Eigen::Index li = 0; li < static_cast<Eigen::Index>(part.intervals.size()); ++li) {
    const Eigen::Index i = part.intervals[static_cast<std::size_t>(li)];
    if (region.lb(i) == -kInf && region.ub(i) == kInf)
      part.free.push_back(li);
    else
      part.truncated.push_back(li);
  }
  return part;
}

Eigen::MatrixXd select(const Eigen::MatrixXd& m, const std::vector<Eigen::Index>& rows,
                       const std::vector<Eigen::Index>& cols) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols.size()));
  for (Eigen::Index r = 0; r < out.rows(); ++r)
    for (Eigen::Index c = 0; c < out.cols(); ++c)
      out(r, c) = m(rows[static_cast<std::size_t>(r)], cols[static_cast<std::size_t>(c)]);
  return out;
}

Eigen::VectorXd select(const Eigen::VectorXd& v, const std::vector<Eigen::Index>& idx) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(idx.size()));
  for (Eigen::Index r = 0; r < out.size(); ++r) out(r) = v(idx[static_cast<std::size_t>(r)]);
  return out;
}

// Gaussian conditioning on the point coordinates. Returns the conditional
// mean and covariance over the interval coordinates.
void condition_on_points(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                         const TruncationRegion& region, const Partition& part,
                         Eigen::VectorXd& mean_f, Eigen::MatrixXd& cov_f) {
  const auto& P = part.points;
  const auto& F = part.intervals;
  mean_f = select(mean, F);
  cov_f = select(cov, F, F);
  if (P.empty()) return;
  Eigen::MatrixXd cpp = select(cov, P, P);
  Eigen::MatrixXd cfp = select(cov, F, P);
  Eigen::VectorXd a = select(region.lb, P) - select(mean, P);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(cpp);
  if (ldlt.info() != Eigen::Success)
    throw std::runtime_error("trunc_moments: singular covariance on point coordinates");
  mean_f += cfp * ldlt.solve(a);
  cov_f -= cfp * ldlt.solve(cfp.transpose());
  cov_f = 0.5 * (cov_f + cov_f.transpose());
}

// Iterative coordinatewise truncated-moment scheme over the truncated
// coordinates: each coordinate is repeatedly replaced by its univariate
// truncated-normal moments conditional on the current estimates of the
// others (expectation-propagation form; site updates are rank-one).
void coordinatewise_scheme(const Eigen::VectorXd& mean_t, const Eigen::MatrixXd& cov_t,
                           const Eigen::VectorXd& lb, const Eigen::VectorXd& ub,
                           Eigen::VectorXd& zhat, Eigen::MatrixXd& cov_out) {
  const Eigen::Index nt = mean_t.size();
  {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(cov_t);
    if (ldlt.info() != Eigen::Success)
      throw std::runtime_error("trunc_moments: singular covariance on truncated coordinates");
  }

  Eigen::VectorXd site_q = Eigen::VectorXd::Zero(nt);
  Eigen::VectorXd site_h = Eigen::VectorXd::Zero(nt);
  cov_out = cov_t;
  zhat = mean_t;

  for (int sweep = 0; sweep < kSweeps; ++sweep) {
    double max_change = 0.0;
    for (Eigen::Index j = 0; j < nt; ++j) {
      const double c_jj = cov_out(j, j);
      if (!(c_jj > 1e-14)) continue;
      const double q_cav = 1.0 / c_jj - site_q(j);
      if (!(q_cav > 1e-12)) continue;
      const double mu_cav = (zhat(j) / c_jj - site_h(j)) / q_cav;
      const double s_cav = std::sqrt(1.0 / q_cav);
      const auto tm =
          truncated_normal_moments((lb(j) - mu_cav) / s_cav, (ub(j) - mu_cav) / s_cav);
      const double m_tilt = mu_cav + s_cav * tm.mean;
      const double v_tilt = std::max(s_cav * s_cav * tm.var, 1e-12);
      const double q_new = std::max(1.0 / v_tilt - q_cav, 0.0);
      const double h_new = m_tilt / v_tilt - q_cav * mu_cav;
      const double dq = q_new - site_q(j);
      const double dh = h_new - site_h(j);
      const double denom = 1.0 + dq * c_jj;
      if (!(denom > 1e-12)) continue;
      const Eigen::VectorXd col = cov_out.col(j);
      const double shift = (dh - dq * zhat(j)) / denom;
      zhat += shift * col;
      cov_out -= (dq / denom) * (col * col.transpose());
      site_q(j) = q_new;
      site_h(j) = h_new;
      max_change = std::max(max_change, std::abs(shift) * c_jj);
    }
    if (max_change < kSweepTol) break;
  }
  cov_out = 0.5 * (cov_out + cov_out.transpose());
}

}  // namespace

TruncatedGaussianMoments trunc_moments(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                                       const TruncationRegion& region) {
  const Eigen::Index d = region.dim();
  if (mean.size() != d || cov.rows() != d || cov.cols() != d)
    throw std::invalid_argument("trunc_moments: dimension mismatch with region");
  if (d == 0) return {Eigen::VectorXd(0), Eigen::MatrixXd(0, 0)};

  const Eigen::VectorXd mean_t = region.involution.apply(mean);
  const Eigen::MatrixXd cov_t = region.involution.conjugate(cov);
  const Partition part = split_region(region);

  Eigen::VectorXd mean_f;
  Eigen::MatrixXd cov_f;
  condition_on_points(mean_t, cov_t, region, part, mean_f, cov_f);

  const Eigen::Index nf = static_cast<Eigen::Index>(part.intervals.size());
  Eigen::VectorXd mu_out(d);
  Eigen::MatrixXd cov_out = Eigen::MatrixXd::Zero(d, d);
  for (std::size_t pi = 0; pi < part.points.size(); ++pi)
    mu_out(part.points[pi]) = region.lb(part.points[pi]);

  if (nf > 0) {
    Eigen::VectorXd mean_box(nf);
    Eigen::MatrixXd cov_box(nf, nf);
    const auto& T = part.truncated;
    const auto& U = part.free;
    if (T.empty()) {
      mean_box = mean_f;
      cov_box = cov_f;
    } else {
      Eigen::VectorXd lb_t(static_cast<Eigen::Index>(T.size())), ub_t(lb_t.size());
      for (Eigen::Index r = 0; r < lb_t.size(); ++r) {
        const Eigen::Index gi = part.intervals[static_cast<std::size_t>(T[static_cast<std::size_t>(r)])];
        lb_t(r) = region.lb(gi);
        ub_t(r) = region.ub(gi);
      }
      const Eigen::MatrixXd c_tt = select(cov_f, T, T);
      const Eigen::VectorXd m_t = select(mean_f, T);

      Eigen::VectorXd zhat;
      Eigen::MatrixXd c_tt_trunc;
      coordinatewise_scheme(m_t, c_tt, lb_t, ub_t, zhat, c_tt_trunc);

      for (Eigen::Index r = 0; r < zhat.size(); ++r) mean_box(T[static_cast<std::size_t>(r)]) = zhat(r);
      for (Eigen::Index r = 0; r < zhat.size(); ++r)
        for (Eigen::Index c = 0; c < zhat.size(); ++c)
          cov_box(T[static_cast<std::size_t>(r)], T[static_cast<std::size_t>(c)]) = c_tt_trunc(r, c);

      if (!U.empty()) {
        // Free coordinates follow by exact Gaussian propagation through the
        // truncated block.
        const Eigen::MatrixXd c_ut = select(cov_f, U, T);
        const Eigen::MatrixXd c_uu = select(cov_f, U, U);
        const Eigen::VectorXd m_u = select(mean_f, U);
        Eigen::LDLT<Eigen::MatrixXd> ldlt(c_tt);
        const Eigen::MatrixXd gain = ldlt.solve(c_ut.transpose()).transpose();  // C_UT C_TT^{-1}
        const Eigen::VectorXd mu_u = m_u + gain * (zhat - m_t);
        const Eigen::MatrixXd resid = c_uu - gain * c_ut.transpose();
        const Eigen::MatrixXd cov_uu = resid + gain * c_tt_trunc * gain.transpose();
        const Eigen::MatrixXd cov_ut = gain * c_tt_trunc;
        for (Eigen::Index r = 0; r < mu_u.size(); ++r) mean_box(U[static_cast<std::size_t>(r)]) = mu_u(r);
        for (Eigen::Index r = 0; r < mu_u.size(); ++r) {
          for (Eigen::Index c = 0; c < mu_u.size(); ++c)
            cov_box(U[static_cast<std::size_t>(r)], U[static_cast<std::size_t>(c)]) = cov_uu(r, c);
          for (Eigen::Index c = 0; c < zhat.size(); ++c) {
            cov_box(U[static_cast<std::size_t>(r)], T[static_cast<std::size_t>(c)]) = cov_ut(r, c);
            cov_box(T[static_cast<std::size_t>(c)], U[static_cast<std::size_t>(r)]) = cov_ut(r, c);
          }
        }
      }
    }
    for (Eigen::Index r = 0; r < nf; ++r) {
      mu_out(part.intervals[static_cast<std::size_t>(r)]) = mean_box(r);
      for (Eigen::Index c = 0; c < nf; ++c)
        cov_out(part.intervals[static_cast<std::size_t>(r)], part.intervals[static_cast<std::size_t>(c)]) =
            cov_box(r, c);
    }
  }

  TruncatedGaussianMoments out;
  out.mean = region.involution.apply(mu_out);
  out.cov = region.involution.conjugate(cov_out);
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

Eigen::MatrixXd trunc_sample(const Eigen::VectorXd& mean, const Eigen::MatrixXd& cov,
                             const TruncationRegion& region, int count, std::uint64_t seed) {
  const Eigen::Index d = region.dim();
  if (mean.size() != d || cov.rows() != d || cov.cols() != d)
    throw std::invalid_argument("trunc_sample: dimension mismatch with region");
  if (count < 1) throw std::invalid_argument("trunc_sample: count must be >= 1");
  Eigen::MatrixXd samples(count, d);
  if (d == 0) return samples;

  const Eigen::VectorXd mean_t = region.involution.apply(mean);
  const Eigen::MatrixXd cov_t = region.involution.conjugate(cov);
  const Partition part = split_region(region);

  Eigen::VectorXd mean_f;
  Eigen::MatrixXd cov_f;
  condition_on_points(mean_t, cov_t, region, part, mean_f, cov_f);

  const Eigen::Index nf = static_cast<Eigen::Index>(part.intervals.size());
  Eigen::VectorXd state(nf);
  Eigen::MatrixXd prec;
  Eigen::VectorXd lb_f(nf), ub_f(nf);
  if (nf > 0) {
    for (Eigen::Index r = 0; r < nf; ++r) {
      const Eigen::Index gi = part.intervals[static_cast<std::size_t>(r)];
      lb_f(r) = region.lb(gi);
      ub_f(r) = region.ub(gi);
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(cov_f);
    if (ldlt.info() != Eigen::Success)
      throw std::runtime_error("trunc_sample: singular covariance on interval coordinates");
    prec = ldlt.solve(Eigen::MatrixXd::Identity(nf, nf));
    for (Eigen::Index j = 0; j < nf; ++j) {
      const double s = std::sqrt(cov_f(j, j));
      const auto tm = truncated_normal_moments((lb_f(j) - mean_f(j)) / s, (ub_f(j) - mean_f(j)) / s);
      state(j) = mean_f(j) + s * tm.mean;
    }
  }

  Rng rng(seed);
  Eigen::VectorXd full(d);
  for (std::size_t pi = 0; pi < part.points.size(); ++pi)
    full(part.points[pi]) = region.lb(part.points[pi]);

  auto sweep = [&] {
    for (Eigen::Index j = 0; j < nf; ++j) {
      const double s2 = 1.0 / prec(j, j);
      double shift = 0.0;
      for (Eigen::Index l = 0; l < nf; ++l)
        if (l != j) shift += prec(j, l) * (state(l) - mean_f(l));
      const double m = mean_f(j) - s2 * shift;
      const double s = std::sqrt(s2);
      const double a = (lb_f(j) - m) / s;
      const double b = (ub_f(j) - m) / s;
      state(j) = m + s * truncated_normal_quantile(a, b, rng.uniform());
    }
  };

  for (int it = 0; it < kGibbsBurnin && nf > 0; ++it) sweep();
  for (int s = 0; s < count; ++s) {
    if (nf > 0) sweep();
    for (Eigen::Index r = 0; r < nf; ++r) full(part.intervals[static_cast<std::size_t>(r)]) = state(r);
    samples.row(s) = region.involution.apply(full).transpose();
  }
  return samples;
}

}  // namespace egc
