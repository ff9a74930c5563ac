#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "cmpamp/rng.hpp"

namespace cmpamp {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using MatrixRef = Eigen::Ref<const Matrix>;
using VectorRef = Eigen::Ref<const Vector>;

enum class PriorKind { bernoulli_gaussian, rademacher_sparse };

inline std::string_view to_string(PriorKind kind) {
  return kind == PriorKind::bernoulli_gaussian ? "bernoulli_gaussian" : "rademacher_sparse";
}

inline PriorKind prior_kind_from_string(std::string_view name) {
  if (name == "bernoulli_gaussian") return PriorKind::bernoulli_gaussian;
  if (name == "rademacher_sparse") return PriorKind::rademacher_sparse;
  throw std::invalid_argument("unknown prior kind: " + std::string(name));
}

/// Signal prior. bernoulli_gaussian: X = B*G with B~Bern(eps), G~N(0, v).
/// rademacher_sparse: X = B*S*sqrt(v) with S uniform on {-1, +1}.
struct PriorSpec {
  PriorKind kind = PriorKind::bernoulli_gaussian;
  double epsilon = 0.1;
  double nonzero_variance = 1.0;

  double second_moment() const noexcept { return epsilon * nonzero_variance; }

  void validate() const {
    if (!(epsilon >= 0.0 && epsilon <= 1.0))
      throw std::invalid_argument("prior epsilon must lie in [0, 1]");
    if (!(nonzero_variance > 0.0) || !std::isfinite(nonzero_variance))
      throw std::invalid_argument("prior nonzero_variance must be finite and positive");
  }

  bool operator==(const PriorSpec&) const = default;
};

/// Non-overlapping column blocks [offsets[p], offsets[p] + sizes[p]).
struct Partition {
  std::vector<std::size_t> sizes;
  std::vector<std::size_t> offsets;

  std::size_t processors() const noexcept { return sizes.size(); }
  std::size_t columns() const noexcept {
    return sizes.empty() ? 0 : offsets.back() + sizes.back();
  }

  bool operator==(const Partition&) const = default;
};

inline Partition partition_columns(std::size_t N, std::vector<std::size_t> sizes) {
  if (sizes.empty()) throw std::invalid_argument("partition needs at least one block");
  Partition part;
  part.offsets.reserve(sizes.size());
  std::size_t offset = 0;
  for (std::size_t s : sizes) {
    if (s == 0) throw std::invalid_argument("partition block sizes must be positive");
    part.offsets.push_back(offset);
    offset += s;
  }
  if (offset != N)
    throw std::invalid_argument("partition sizes sum to " + std::to_string(offset) +
                                ", expected " + std::to_string(N));
  part.sizes = std::move(sizes);
  return part;
}

/// P near-equal blocks; the first N % P blocks get one extra column.
inline Partition equal_partition(std::size_t N, std::size_t P) {
  if (P == 0 || P > N) throw std::invalid_argument("need 1 <= P <= N");
  std::vector<std::size_t> sizes(P, N / P);
  for (std::size_t p = 0; p < N % P; ++p) ++sizes[p];
  return partition_columns(N, std::move(sizes));
}

/// n x N matrix with i.i.d. N(0, 1/n) entries. Column j is drawn from its own
/// stream, so any column block can be regenerated independently.
inline Matrix generate_matrix(std::size_t n, std::size_t N, std::uint64_t seed) {
  if (n == 0 || N == 0) throw std::invalid_argument("matrix dimensions must be positive");
  Matrix A(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(N));
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (std::size_t j = 0; j < N; ++j) {
    CounterRng rng(seed, Stream::matrix, j);
    std::normal_distribution<double> normal;
    double* col = A.col(static_cast<Eigen::Index>(j)).data();
    for (std::size_t i = 0; i < n; ++i) col[i] = scale * normal(rng);
  }
  return A;
}

/// Matrix whose columns inside each block share a common direction:
/// A_j = sqrt(1 - c) G_j + sqrt(c) u_p. Entries keep variance 1/n, but columns
/// of one block have correlation c. Used to build instances outside the i.i.d.
/// setting, where undamped iterations can blow up.
inline Matrix generate_correlated_matrix(std::size_t n, const Partition& partition,
                                         double correlation, std::uint64_t seed) {
  if (!(correlation >= 0.0 && correlation <= 1.0))
    throw std::invalid_argument("column correlation must lie in [0, 1]");
  Matrix A = generate_matrix(n, partition.columns(), seed);
  const double keep = std::sqrt(1.0 - correlation);
  const double share = std::sqrt(correlation);
  const double scale = 1.0 / std::sqrt(static_cast<double>(n));
  for (std::size_t p = 0; p < partition.processors(); ++p) {
    CounterRng rng(seed, Stream::processor, p);
    std::normal_distribution<double> normal;
    Vector common(static_cast<Eigen::Index>(n));
    for (Eigen::Index i = 0; i < common.size(); ++i) common[i] = scale * normal(rng);
    auto block = A.middleCols(static_cast<Eigen::Index>(partition.offsets[p]),
                              static_cast<Eigen::Index>(partition.sizes[p]));
    block = keep * block;
    block.colwise() += share * common;
  }
  return A;
}

inline Vector generate_signal(std::size_t N, const PriorSpec& prior, std::uint64_t seed) {
  prior.validate();
  Vector x = Vector::Zero(static_cast<Eigen::Index>(N));
  CounterRng rng(seed, Stream::signal);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, std::sqrt(prior.nonzero_variance));
  const double amplitude = std::sqrt(prior.nonzero_variance);
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    // Both draws happen unconditionally so the stream position of coordinate i
    // does not depend on earlier outcomes.
    const double u = uniform(rng);
    const double g = normal(rng);
    if (u < prior.epsilon) {
      x[i] = prior.kind == PriorKind::bernoulli_gaussian ? g : (g < 0.0 ? -amplitude : amplitude);
    }
  }
  return x;
}

inline Vector generate_noise(std::size_t n, double sigma_w_sq, std::uint64_t seed) {
  if (!(sigma_w_sq >= 0.0)) throw std::invalid_argument("noise variance must be non-negative");
  Vector w = Vector::Zero(static_cast<Eigen::Index>(n));
  if (sigma_w_sq == 0.0) return w;
  CounterRng rng(seed, Stream::noise);
  std::normal_distribution<double> normal(0.0, std::sqrt(sigma_w_sq));
  for (Eigen::Index i = 0; i < w.size(); ++i) w[i] = normal(rng);
  return w;
}

/// The tuple (A, x, w, y) with y = A x + w. Ground truth is kept for losses.
struct ProblemInstance {
  Matrix A;
  Vector x;
  Vector w;
  Vector y;
  Partition partition;
  double sigma_w_sq = 0.0;
  PriorSpec prior;

  std::size_t rows() const noexcept { return static_cast<std::size_t>(A.rows()); }
  std::size_t cols() const noexcept { return static_cast<std::size_t>(A.cols()); }
  std::size_t processors() const noexcept { return partition.processors(); }

  auto block(std::size_t p) const {
    return A.middleCols(static_cast<Eigen::Index>(partition.offsets[p]),
                        static_cast<Eigen::Index>(partition.sizes[p]));
  }
  auto signal_block(std::size_t p) const {
    return x.segment(static_cast<Eigen::Index>(partition.offsets[p]),
                     static_cast<Eigen::Index>(partition.sizes[p]));
  }
};

inline ProblemInstance assemble_instance(Matrix A, Vector x, Vector w, Partition partition,
                                         double sigma_w_sq = 0.0, PriorSpec prior = {}) {
  if (x.size() != A.cols()) throw std::invalid_argument("signal length does not match matrix columns");
  if (w.size() != A.rows()) throw std::invalid_argument("noise length does not match matrix rows");
  if (partition.columns() != static_cast<std::size_t>(A.cols()))
    throw std::invalid_argument("partition does not cover the matrix columns");
  ProblemInstance inst;
  inst.y = A * x + w;
  inst.A = std::move(A);
  inst.x = std::move(x);
  inst.w = std::move(w);
  inst.partition = std::move(partition);
  inst.sigma_w_sq = sigma_w_sq;
  inst.prior = prior;
  return inst;
}

enum class MatrixKind { iid_gaussian, correlated_blocks };

struct InstanceParams {
  std::size_t n = 500;
  std::vector<std::size_t> sizes{500, 500};
  PriorSpec prior;
  double sigma_w_sq = 0.01;
  MatrixKind matrix = MatrixKind::iid_gaussian;
  double column_correlation = 0.0;

  std::size_t columns() const { return std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}); }
};

inline ProblemInstance generate_instance(const InstanceParams& params, std::uint64_t seed) {
  params.prior.validate();
  Partition part = partition_columns(params.columns(), params.sizes);
  Matrix A = params.matrix == MatrixKind::iid_gaussian
                 ? generate_matrix(params.n, part.columns(), seed)
                 : generate_correlated_matrix(params.n, part, params.column_correlation, seed);
  Vector x = generate_signal(part.columns(), params.prior, seed);
  Vector w = generate_noise(params.n, params.sigma_w_sq, seed);
  return assemble_instance(std::move(A), std::move(x), std::move(w), std::move(part),
                           params.sigma_w_sq, params.prior);
}

}  // namespace cmpamp
